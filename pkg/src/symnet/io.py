"""File formats: SYMT tensor snapshots, Netpbm rasters, key=value configs."""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import ParseError

SYMT_MAGIC = b"SYMT"


def _open(target, mode):
    if hasattr(target, "read" if "r" in mode else "write"):
        return target, False
    return open(target, mode), True


def write_tensor(target, array):
    """Write ``array`` as ``SYMT`` + u32 rank + u32 dims + little-endian f32 payload."""
    array = np.asarray(array)
    fh, close = _open(target, "wb")
    try:
        fh.write(SYMT_MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    finally:
        if close:
            fh.close()


def read_tensor(source):
    fh, close = _open(source, "rb")
    name = getattr(fh, "name", None)
    try:
        magic = fh.read(4)
        if magic != SYMT_MAGIC:
            raise ParseError(f"bad tensor magic {magic!r}", source=name)
        (rank,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ParseError(f"truncated tensor payload ({len(payload)} of {4 * count} bytes)",
                             source=name)
        return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    finally:
        if close:
            fh.close()


def _read_netpbm_header(fh, name):
    tokens = []
    while len(tokens) < 4:
        line = fh.readline()
        if not line:
            raise ParseError("truncated Netpbm header", source=name)
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    return magic, width, height, maxval


def read_netpbm(path):
    """Read a binary PGM (P5) or PPM (P6) file; 8- or 16-bit."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic, width, height, maxval = _read_netpbm_header(fh, str(path))
        channels = {b"P5": 1, b"P6": 3}.get(magic)
        if channels is None:
            raise ParseError(f"unsupported Netpbm magic {magic!r}", source=str(path))
        dtype = ">u2" if maxval > 255 else "u1"
        count = width * height * channels
        data = np.frombuffer(fh.read(count * np.dtype(dtype).itemsize), dtype=dtype)
        if data.size != count:
            raise ParseError("truncated Netpbm payload", source=str(path))
    data = data.astype(np.uint16 if maxval > 255 else np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape), maxval


def image_size(path):
    """Return ``(width, height)`` from a Netpbm header without reading the payload."""
    with open(path, "rb") as fh:
        _, width, height, _ = _read_netpbm_header(fh, str(path))
    return width, height


def write_image(path, image):
    """Write a uint8 H x W (PGM) or H x W x 3 (PPM) raster."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    magic = b"P5" if image.ndim == 2 else b"P6"
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(image).tobytes())


def read_image(path):
    data, maxval = read_netpbm(path)
    if maxval != 255:
        data = np.rint(data.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return data


def write_heatmap_pgm(path, heatmap, sidecar=False):
    """Quantize a [0, 1] heatmap as ``round(65535 * H)`` into a 16-bit PGM.

    With ``sidecar=True`` the exact float values are also written next to it
    as ``<path>.symt``.
    """
    h = np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0)
    q = np.floor(h * 65535.0 + 0.5).astype(">u2")
    height, width = h.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode())
        fh.write(q.tobytes())
    if sidecar:
        write_tensor(str(path) + ".symt", h)


def read_heatmap_pgm(path):
    data, maxval = read_netpbm(path)
    if data.ndim != 2:
        raise ParseError("heatmap must be single-channel", source=str(path))
    return data.astype(np.float64) / float(maxval)


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(target, mapping):
    """Flat ``key=value`` text, keys sorted so output is canonical."""
    text = "".join(f"{k}={format_value(mapping[k])}\n" for k in sorted(mapping))
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text)
    return text


def parse_config(text, source=None):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw!r}", lineno=lineno, source=source)
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_config(path):
    return parse_config(Path(path).read_text(), source=os.fspath(path))
