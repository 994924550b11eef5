"""A small fully convolutional heatmap regressor.

Layout per input stream::

    image -> [conv 3x3 + ReLU] * len(trunk)   (total stride 8, last stage dilated)
          -> atrous pyramid: per rate r, conv 3x3 dilation r + ReLU -> conv 1x1 to 1 channel
          -> branch fusion (sum or max)
          -> bilinear resize to the (padded) input size

Streams run the same weights on bilinearly downscaled copies of the input
and are fused with an elementwise max; one scalar output bias is added
last.  Backward passes are chained by hand through the ops in
:mod:`symnet.tensor`.
"""
from __future__ import annotations

import io as _io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import io
from .exceptions import ConfigError, DimensionError, ParseError, SizeError
from .heatmap import round_half_up
from .tensor import (
    ConvSpec,
    bilinear_resize,
    bilinear_resize_backward,
    conv2d_backward,
    conv2d_forward,
    max_fuse,
    max_fuse_backward,
    relu,
    relu_backward,
)

MAX_EDGE = 513
STRIDE = 8
STREAM_SCALES = (0.5, 0.75, 1.0)
_CKPT_MAGIC = "SYMC 1"


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    trunk_channels: tuple = (8, 16, 32, 32, 32)
    trunk_strides: tuple = (2, 2, 2, 1, 1)
    trunk_dilation: int = 2
    pyramid_rates: tuple = (2, 4, 8)
    pyramid_channels: int = 16
    pyramid_fusion: str = "sum"
    streams: tuple = (1.0,)
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("trunk_channels", "trunk_strides", "pyramid_rates", "streams"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.trunk_channels) != len(self.trunk_strides) or not self.trunk_channels:
            raise ConfigError("trunk_channels and trunk_strides must be non-empty and equal length")
        if math.prod(self.trunk_strides) != STRIDE:
            raise ConfigError(
                f"product of trunk strides must be {STRIDE}, got {math.prod(self.trunk_strides)}")
        if any(s < 1 for s in self.trunk_strides):
            raise ConfigError("trunk strides must be >= 1")
        if self.trunk_dilation < 1 or any(r < 1 for r in self.pyramid_rates):
            raise ConfigError("dilations must be >= 1")
        if not self.pyramid_rates:
            raise ConfigError("pyramid needs at least one rate")
        if self.pyramid_fusion not in ("sum", "max"):
            raise ConfigError(f"pyramid_fusion must be 'sum' or 'max', got {self.pyramid_fusion!r}")
        if not self.streams or any(s not in STREAM_SCALES for s in self.streams):
            raise ConfigError(f"streams must be a non-empty subset of {STREAM_SCALES}")
        if len(set(self.streams)) != len(self.streams):
            raise ConfigError("streams must not repeat")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if min(self.trunk_channels) < 1 or self.pyramid_channels < 1 or self.in_channels < 1:
            raise ConfigError("channel counts must be positive")

    def trunk_specs(self):
        specs = []
        c_in = self.in_channels
        last = len(self.trunk_channels) - 1
        for i, (c_out, s) in enumerate(zip(self.trunk_channels, self.trunk_strides)):
            d = self.trunk_dilation if i == last else 1
            specs.append(ConvSpec(c_in, c_out, (3, 3), stride=s, dilation=d, padding=d))
            c_in = c_out
        return specs

    def pyramid_specs(self):
        c = self.trunk_channels[-1]
        return [(ConvSpec(c, self.pyramid_channels, (3, 3), dilation=r, padding=r),
                 ConvSpec(self.pyramid_channels, 1, (1, 1)))
                for r in self.pyramid_rates]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, mapping):
        """Build from a (possibly string-valued) mapping; unknown keys are ignored."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            v = mapping[f.name]
            if isinstance(v, str):
                v = _coerce(f.name, v)
            kwargs[f.name] = v
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


_TUPLE_INT = {"trunk_channels", "trunk_strides", "pyramid_rates"}


def _coerce(name, text):
    try:
        if name in _TUPLE_INT:
            return tuple(int(v) for v in text.split(",") if v.strip())
        if name == "streams":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if name in ("pyramid_fusion", "dtype"):
            return text
        return int(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


@dataclass
class NetParams:
    config: NetConfig
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def copy(self):
        return NetParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def n_parameters(self):
        return int(sum(v.size for v in self.arrays.values()))


def param_shapes(config: NetConfig):
    """Ordered mapping of parameter name -> shape."""
    shapes = {}
    for i, spec in enumerate(config.trunk_specs()):
        shapes[f"trunk.{i}.weight"] = (spec.out_channels, spec.in_channels) + spec.kernel
        shapes[f"trunk.{i}.bias"] = (spec.out_channels,)
    for r, (a, b) in zip(config.pyramid_rates, config.pyramid_specs()):
        shapes[f"pyramid.{r}.conv.weight"] = (a.out_channels, a.in_channels) + a.kernel
        shapes[f"pyramid.{r}.conv.bias"] = (a.out_channels,)
        shapes[f"pyramid.{r}.head.weight"] = (b.out_channels, b.in_channels) + b.kernel
    shapes["output.bias"] = (1,)
    return shapes


def init(config: NetConfig) -> NetParams:
    """He-normal weights (variance 2 / fan_in) and zero biases, seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("weight"):
            fan_in = int(np.prod(shape[1:]))
            w = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        else:
            w = np.zeros(shape)
        arrays[name] = w.astype(config.dtype)
    return NetParams(config, arrays)


def padded_size(n):
    return -(-n // STRIDE) * STRIDE


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    h, w = x.shape[2:]
    mode = "reflect" if ph < h and pw < w else "edge"
    return np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)


def _stream_forward(params, x):
    cfg = params.config
    trunk = []
    h = x
    for i, spec in enumerate(cfg.trunk_specs()):
        z, c = conv2d_forward(h, params[f"trunk.{i}.weight"], params[f"trunk.{i}.bias"], spec)
        h = relu(z)
        trunk.append((c, z))
    outs, branches = [], []
    for r, (sa, sb) in zip(cfg.pyramid_rates, cfg.pyramid_specs()):
        z, ca = conv2d_forward(h, params[f"pyramid.{r}.conv.weight"],
                               params[f"pyramid.{r}.conv.bias"], sa)
        o, cb = conv2d_forward(relu(z), params[f"pyramid.{r}.head.weight"], None, sb)
        outs.append(o)
        branches.append((ca, z, cb))
    if cfg.pyramid_fusion == "sum":
        fused, idx = outs[0], None
        for o in outs[1:]:
            fused = fused + o
    else:
        fused, idx = max_fuse(outs)
    return fused, (trunk, branches, idx)


def _stream_backward(params, cache, dout, grads):
    cfg = params.config
    trunk, branches, idx = cache
    n = len(branches)
    if cfg.pyramid_fusion == "sum":
        douts = [dout] * n
    else:
        douts = max_fuse_backward(dout, idx, n)
    dh = None
    for r, (ca, z, cb), d in zip(cfg.pyramid_rates, branches, douts):
        da, dwb, _ = conv2d_backward(d, cb)
        grads[f"pyramid.{r}.head.weight"] += dwb
        dz = relu_backward(da, z)
        dx, dwa, dba = conv2d_backward(dz, ca)
        grads[f"pyramid.{r}.conv.weight"] += dwa
        grads[f"pyramid.{r}.conv.bias"] += dba
        dh = dx if dh is None else dh + dx
    for i in range(len(trunk) - 1, -1, -1):
        c, z = trunk[i]
        dz = relu_backward(dh, z)
        dh, dw, db = conv2d_backward(dz, c)
        grads[f"trunk.{i}.weight"] += dw
        grads[f"trunk.{i}.bias"] += db


def check_input(params, image):
    cfg = params.config
    x = np.asarray(image)
    if x.ndim != 4:
        raise DimensionError(f"image tensor must be 4-D (N, C, H, W), got shape {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise DimensionError(f"image axis 1 (channels) is {x.shape[1]}, expected {cfg.in_channels}")
    h, w = x.shape[2:]
    if max(h, w) > MAX_EDGE:
        raise SizeError(f"input is {w}x{h}; the longest edge may be at most {MAX_EDGE} pixels")
    return x.astype(cfg.dtype, copy=False)


def forward(params: NetParams, image, return_cache=False):
    """Full-resolution logits of shape (N, 1, H, W) for a normalized image tensor."""
    cfg = params.config
    x = check_input(params, image)
    h, w = x.shape[2:]
    hp, wp = padded_size(h), padded_size(w)
    xp = _pad(x, hp - h, wp - w)
    ups, caches = [], []
    for s in cfg.streams:
        if s == 1.0:
            xs = xp
        else:
            xs = bilinear_resize(xp, max(1, round_half_up(s * hp)), max(1, round_half_up(s * wp)))
        coarse, cache = _stream_forward(params, xs)
        ups.append(bilinear_resize(coarse, hp, wp))
        caches.append((coarse.shape, cache))
    if len(ups) == 1:
        fused, idx = ups[0], None
    else:
        fused, idx = max_fuse(ups)
    out = fused[:, :, :h, :w] + params["output.bias"][0]
    out = np.ascontiguousarray(out)
    if return_cache:
        return out, (x.shape, (hp, wp), caches, idx)
    return out


def backward(params: NetParams, cache, dout):
    """Gradients of every parameter given d(loss)/d(forward output)."""
    x_shape, (hp, wp), caches, idx = cache
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    grads["output.bias"] += np.asarray(dout).sum()
    dfused = np.zeros(dout.shape[:2] + (hp, wp), dtype=dout.dtype)
    dfused[:, :, :x_shape[2], :x_shape[3]] = dout
    if idx is None:
        dups = [dfused]
    else:
        dups = max_fuse_backward(dfused, idx, len(caches))
    for (coarse_shape, cache), dup in zip(caches, dups):
        dcoarse = bilinear_resize_backward(dup, coarse_shape[2], coarse_shape[3])
        _stream_backward(params, cache, dcoarse, grads)
    return grads


def coarse_forward(params: NetParams, image):
    """Pre-upsampling output of the first stream (used for covariance checks)."""
    x = check_input(params, image)
    return _stream_forward(params, x)[0]


def normalize_image(image):
    """uint8-range H x W (x C) raster -> (1, C, H, W) tensor with value/255 - 0.5."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return (a / 255.0 - 0.5).transpose(2, 0, 1)[None]


def predict(params: NetParams, image):
    """Heatmap in [0, 1] (H x W float64) for one raster image."""
    out = forward(params, normalize_image(image))
    return np.clip(out[0, 0].astype(np.float64), 0.0, 1.0)


def activations(params: NetParams, image):
    """Per-layer channel sums of the first stream, as name -> (1, 1, h, w) arrays."""
    cfg = params.config
    x = check_input(params, normalize_image(image))
    h, w = x.shape[2:]
    x = _pad(x, padded_size(h) - h, padded_size(w) - w)
    out = {}
    a = x
    for i, spec in enumerate(cfg.trunk_specs()):
        z, _ = conv2d_forward(a, params[f"trunk.{i}.weight"], params[f"trunk.{i}.bias"], spec)
        a = relu(z)
        out[f"trunk.{i}"] = a.sum(axis=1, keepdims=True)
    for r, (sa, sb) in zip(cfg.pyramid_rates, cfg.pyramid_specs()):
        z, _ = conv2d_forward(a, params[f"pyramid.{r}.conv.weight"],
                              params[f"pyramid.{r}.conv.bias"], sa)
        out[f"pyramid.{r}"] = relu(z).sum(axis=1, keepdims=True)
    out["output"] = forward(params, normalize_image(image))
    return out


def save_checkpoint(target, params: NetParams):
    """Canonical text header (config + parameter order), then SYMT snapshots."""
    buf = _io.StringIO()
    buf.write(_CKPT_MAGIC + "\n")
    io.write_config(buf, params.config.to_dict())
    buf.write("params=" + ",".join(params.names()) + "\n")
    buf.write("end\n")
    blob = buf.getvalue().encode()
    fh = target if hasattr(target, "write") else open(target, "wb")
    try:
        fh.write(blob)
        for name in params.names():
            io.write_tensor(fh, params[name])
    finally:
        if fh is not target:
            fh.close()


def load_checkpoint(source) -> NetParams:
    fh = source if hasattr(source, "read") else open(source, "rb")
    name = getattr(fh, "name", None)
    try:
        if fh.readline().decode().strip() != _CKPT_MAGIC:
            raise ParseError("not a checkpoint file", source=name)
        lines = []
        while True:
            line = fh.readline()
            if not line:
                raise ParseError("truncated checkpoint header", source=name)
            line = line.decode().strip()
            if line == "end":
                break
            lines.append(line)
        header = io.parse_config("\n".join(lines), source=name)
        config = NetConfig.from_dict(header)
        order = header.get("params", "").split(",")
        shapes = param_shapes(config)
        if order != list(shapes):
            raise ParseError("checkpoint parameter list does not match its config", source=name)
        arrays = {}
        for pname in order:
            a = io.read_tensor(fh)
            if a.shape != shapes[pname]:
                raise ParseError(f"{pname} has shape {a.shape}, expected {shapes[pname]}",
                                 source=name)
            arrays[pname] = a.astype(config.dtype)
        return NetParams(config, arrays)
    finally:
        if fh is not source:
            fh.close()
