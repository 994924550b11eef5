"""Seeded geometric augmentation of (image, consensus symmetries) pairs.

Transforms are applied as scale -> rotate -> horizontal flip -> crop.  The
image is resampled; symmetry geometry is mapped through the same transform
so heatmaps can be re-synthesized afterwards rather than warped.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ParameterError
from .heatmap import RasterWarning, rasterize, round_half_up
from .labels import REFLECTION, ROTATION
from .tensor import bilinear_resize

SCALES = (0.85, 0.9, 1.0, 1.1, 1.25)
ROTATIONS = (0, 90, 180, 270)


@dataclass(frozen=True)
class AugmentSpec:
    scale: float = 1.0
    rotation: int = 0
    hflip: bool = False
    crop: tuple | None = None  # (x0, y0, width, height) after scale/rotate/flip

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ParameterError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.rotation not in ROTATIONS:
            raise ParameterError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if self.crop is not None:
            object.__setattr__(self, "crop", tuple(int(v) for v in self.crop))
            if len(self.crop) != 4:
                raise ParameterError("crop must be (x0, y0, width, height)")

    def transformed_shape(self, height, width):
        """(height, width) after scaling and rotation, before cropping."""
        h, w = scaled_shape(height, width, self.scale)
        return (w, h) if self.rotation in (90, 270) else (h, w)


def scaled_shape(height, width, scale):
    return max(1, round_half_up(scale * height)), max(1, round_half_up(scale * width))


def _scale_coord(v, n_in, n_out):
    return v * (n_out - 1) / (n_in - 1) if n_in > 1 else 0.0


def _map_points(points, spec, height, width):
    """Map (x, y) points through scale, rotate and flip (not crop)."""
    sh, sw = scaled_shape(height, width, spec.scale)
    out = []
    for x, y in points:
        x, y = _scale_coord(x, width, sw), _scale_coord(y, height, sh)
        h, w = sh, sw
        for _ in range(spec.rotation // 90):
            # one counter-clockwise quarter turn, matching np.rot90
            x, y = y, w - 1 - x
            h, w = w, h
        if spec.hflip:
            x = w - 1 - x
        out.append((x, y))
    return tuple(out)


def _clip_segment(p, q, xmax, ymax):
    """Liang-Barsky clip of segment p-q to [0, xmax] x [0, ymax]."""
    (x0, y0), (x1, y1) = p, q
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-dx, x0), (dx, xmax - x0), (-dy, y0), (dy, ymax - y0)):
        if pk == 0:
            if qk < 0:
                return None
            continue
        t = qk / pk
        if pk < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    if t0 > t1:
        return None
    return ((x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy))


def transform_image(image, spec: AugmentSpec):
    image = np.asarray(image)
    out = image
    height, width = image.shape[:2]
    if spec.scale != 1.0:
        sh, sw = scaled_shape(height, width, spec.scale)
        chw = np.moveaxis(np.atleast_3d(image).astype(np.float64), -1, 0)
        res = np.moveaxis(bilinear_resize(chw, sh, sw), 0, -1)
        if image.ndim == 2:
            res = res[..., 0]
        out = np.clip(np.rint(res), 0, 255).astype(image.dtype) \
            if image.dtype == np.uint8 else res.astype(image.dtype)
    if spec.rotation:
        out = np.rot90(out, spec.rotation // 90, axes=(0, 1))
    if spec.hflip:
        out = out[:, ::-1]
    if spec.crop is not None:
        x0, y0, w, h = spec.crop
        out = out[y0:y0 + h, x0:x0 + w]
    return np.ascontiguousarray(out)


def _check_crop(spec, th, tw):
    x0, y0, w, h = spec.crop
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > tw or y0 + h > th:
        raise ParameterError(f"crop {spec.crop} outside transformed image {tw}x{th}")


def apply_augment(image, gts, spec: AugmentSpec):
    """Return the transformed image and the surviving, transformed symmetries.

    Under a crop a rotation center survives when its pixel stays inside; a
    reflection axis survives when at least half of its rasterized pixels do,
    and is then cut to the crop rectangle.
    """
    height, width = np.shape(image)[:2]
    th, tw = spec.transformed_shape(height, width)
    if spec.crop is not None:
        _check_crop(spec, th, tw)
    new_image = transform_image(image, spec)

    out = []
    for g in gts:
        pts = _map_points(g.points, spec, height, width)
        moved = replace(g, points=pts)
        if spec.crop is None:
            out.append(moved)
            continue
        x0, y0, cw, ch = spec.crop
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RasterWarning)
            px = rasterize(moved, tw, th)
        if len(px) == 0:
            continue
        inside = ((px[:, 0] >= x0) & (px[:, 0] < x0 + cw)
                  & (px[:, 1] >= y0) & (px[:, 1] < y0 + ch))
        shifted = tuple((x - x0, y - y0) for x, y in pts)
        if g.kind == ROTATION:
            if inside.all():
                out.append(replace(g, points=shifted))
        elif g.kind == REFLECTION:
            if 2 * inside.sum() >= len(px):
                clipped = _clip_segment(shifted[0], shifted[1], cw - 1, ch - 1)
                if clipped is not None:
                    out.append(replace(g, points=clipped))
    return new_image, out


def sample_spec(rng_seed, image_dims, crop_fraction=0.9):
    """Draw an :class:`AugmentSpec` for an image of ``(height, width)``.

    Scale, rotation and flip are independent uniform draws; the crop is a
    uniformly placed window of ``crop_fraction`` of the transformed size
    (``None`` disables cropping).
    """
    rng = np.random.default_rng(rng_seed)
    scale = SCALES[int(rng.integers(len(SCALES)))]
    rotation = ROTATIONS[int(rng.integers(len(ROTATIONS)))]
    hflip = bool(rng.integers(2))
    crop = None
    if crop_fraction is not None:
        if not 0 < crop_fraction <= 1:
            raise ParameterError(f"crop_fraction must be in (0, 1], got {crop_fraction}")
        spec = AugmentSpec(scale, rotation, hflip)
        th, tw = spec.transformed_shape(*image_dims)
        ch = max(1, min(th, round_half_up(crop_fraction * th)))
        cw = max(1, min(tw, round_half_up(crop_fraction * tw)))
        x0 = int(rng.integers(tw - cw + 1))
        y0 = int(rng.integers(th - ch + 1))
        crop = (x0, y0, cw, ch)
    return AugmentSpec(scale, rotation, hflip, crop)
