"""Dense Gaussian ground-truth heatmaps from consensus symmetries.

Each symmetry is rasterized to integer pixels (one pixel for a rotation
center, a one-pixel-wide digital line for a reflection axis), every image
pixel receives the sum of isotropic Gaussians centred on those pixels, the
result is divided by its own maximum, and the per-symmetry maps are fused
with an elementwise max.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError, ParameterError
from .labels import REFLECTION, ROTATION


class RasterWarning(UserWarning):
    """Geometry fell entirely outside the image."""


@dataclass(frozen=True)
class SynthConfig:
    sigma: float = 5.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")


def round_half_up(v):
    return int(math.floor(v + 0.5))


def digital_line(p0, p1):
    """Integer pixels of the segment between two integer points.

    One pixel per step along the major axis, the minor coordinate rounded to
    nearest.  When the exact minor coordinate sits halfway between two rows
    both pixels are emitted, which keeps the pixel set independent of
    endpoint order and covariant under right-angle rotations and flips.
    """
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    n = max(abs(dx), abs(dy))
    if n == 0:
        return [(x0, y0)]
    x_major = abs(dx) >= abs(dy)
    a0, da = (x0, dx) if x_major else (y0, dy)
    b0, db = (y0, dy) if x_major else (x0, dx)
    step = 1 if da > 0 else -1
    out = []
    for k in range(n + 1):
        a = a0 + step * k
        num = k * db  # minor offset is num / n exactly
        q, r = divmod(num, n)
        if 2 * r < n:
            minors = (b0 + q,)
        elif 2 * r > n:
            minors = (b0 + q + 1,)
        else:
            minors = (b0 + q, b0 + q + 1)
        for b in minors:
            out.append((a, b) if x_major else (b, a))
    return out


def rasterize(gt, width, height):
    """Pixel locations ``(x, y)`` covered by ``gt``, in raster-scan order.

    Returns an ``(n, 2)`` integer array.  If the geometry lies entirely
    outside the image the array is empty and a :class:`RasterWarning` is
    issued.
    """
    if gt.kind == ROTATION:
        pixels = [tuple(round_half_up(c) for c in gt.points[0])]
    elif gt.kind == REFLECTION:
        p0 = tuple(round_half_up(c) for c in gt.points[0])
        p1 = tuple(round_half_up(c) for c in gt.points[1])
        pixels = digital_line(p0, p1)
    else:
        raise ParameterError(f"unknown kind {gt.kind!r}")
    inside = sorted({(x, y) for x, y in pixels if 0 <= x < width and 0 <= y < height},
                    key=lambda p: (p[1], p[0]))
    if not inside:
        warnings.warn(f"{gt.kind} symmetry {gt.points} lies outside the "
                      f"{width}x{height} image", RasterWarning, stacklevel=2)
    return np.array(inside, dtype=np.int64).reshape(-1, 2)


def gaussian_sum(pixels, width, height, sigma):
    """Unnormalized sum of Gaussians centred on ``pixels`` at every image pixel.

    The 2-D Gaussian factorizes, so the sum over centres is a product of two
    small matrices.
    """
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    denom = 2.0 * sigma * sigma
    gx = np.exp(-((xs[None, :] - pixels[:, 0:1]) ** 2) / denom)
    gy = np.exp(-((ys[None, :] - pixels[:, 1:2]) ** 2) / denom)
    return gy.T @ gx


def synth_single(gt, width, height, cfg: SynthConfig = SynthConfig()):
    pixels = rasterize(gt, width, height)
    if len(pixels) == 0:
        raise GeometryError(f"{gt.kind} symmetry {gt.points} does not intersect the image")
    h = gaussian_sum(pixels, width, height, cfg.sigma)
    return h / h.max()


def fuse(heatmaps):
    if len(heatmaps) == 0:
        raise ParameterError("fuse needs at least one heatmap")
    shape = np.shape(heatmaps[0])
    for k, h in enumerate(heatmaps):
        if np.shape(h) != shape:
            raise ParameterError(f"heatmap {k} has shape {np.shape(h)}, expected {shape}")
    return np.maximum.reduce([np.asarray(h, dtype=np.float64) for h in heatmaps])


def synth_kind(gts, kind, width, height, cfg: SynthConfig = SynthConfig()):
    maps = [synth_single(g, width, height, cfg) for g in gts if g.kind == kind]
    if not maps:
        return np.zeros((height, width))
    return fuse(maps)


def synth_gt(gts, width, height, cfg: SynthConfig = SynthConfig()):
    """Return ``(reflection_heatmap, rotation_heatmap)``, each ``height x width``."""
    return (synth_kind(gts, REFLECTION, width, height, cfg),
            synth_kind(gts, ROTATION, width, height, cfg))


def gt_pixels(gts, kind, width, height):
    """Union of rasterized pixels for all ``gts`` of ``kind`` as a boolean mask."""
    mask = np.zeros((height, width), dtype=bool)
    for g in gts:
        if g.kind != kind:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RasterWarning)
            px = rasterize(g, width, height)
        mask[px[:, 1], px[:, 0]] = True
    return mask
