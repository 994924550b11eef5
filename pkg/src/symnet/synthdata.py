"""Images with exactly known reflection / rotation symmetries, plus simulated raters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import GenerationError, ParameterError
from .labels import REFLECTION, ROTATION, ConsensusSymmetry, LabelRecord

SYNTH_SUPPORT = 999
MARGIN = 8
TEXTURES = ("filtered-noise", "blob-collage")


@dataclass(frozen=True)
class SynthSpec:
    size: tuple = (64, 64)  # (width, height)
    kind: str = REFLECTION
    count: int = 1
    texture: str = "filtered-noise"
    noise_level: float = 0.0  # std of additive noise, in 0..255 intensity units
    seed: int = 0
    angle: float | None = None  # axis direction in degrees; None draws one
    jitter: float = 10.0
    image_id: str = "synth"

    def __post_init__(self):
        w, h = self.size
        if w < 32 or h < 32:
            raise ParameterError(f"synthetic images must be at least 32x32, got {w}x{h}")
        if self.kind not in (REFLECTION, ROTATION):
            raise ParameterError(f"unknown kind {self.kind!r}")
        if self.texture not in TEXTURES:
            raise ParameterError(f"texture must be one of {TEXTURES}")
        if self.count < 1:
            raise ParameterError("count must be >= 1")
        if self.noise_level < 0:
            raise ParameterError("noise_level must be >= 0")


def _direction(deg):
    """Unit vector for ``deg``, exact at multiples of 90 degrees."""
    q, r = divmod(deg, 90.0)
    if r == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    t = math.radians(deg)
    return math.cos(t), math.sin(t)


class _Field:
    """A smooth random RGB field that can be sampled at real coordinates."""

    def __init__(self, rng, width, height, texture):
        self.pad = width + height
        gh, gw = height + 2 * self.pad, width + 2 * self.pad
        channels = []
        for _ in range(3):
            if texture == "filtered-noise":
                white = rng.standard_normal((gh, gw))
                band = ndimage.gaussian_filter(white, 1.0) - ndimage.gaussian_filter(white, 3.0)
                band = band / (band.std() + 1e-12)
                channels.append(128.0 + 45.0 * band)
            else:
                canvas = np.full((gh, gw), rng.uniform(60, 190))
                n_blobs = int(gh * gw / 60)
                ys = rng.uniform(0, gh, n_blobs)
                xs = rng.uniform(0, gw, n_blobs)
                amp = rng.uniform(-90, 90, n_blobs)
                spikes = np.zeros((gh, gw))
                np.add.at(spikes, (ys.astype(int), xs.astype(int)), amp)
                channels.append(canvas + ndimage.gaussian_filter(spikes, 2.0) * 2 * math.pi * 4)
        self.grid = np.stack(channels)

    def sample(self, xs, ys):
        coords = np.stack([np.ravel(ys) + self.pad, np.ravel(xs) + self.pad])
        out = [ndimage.map_coordinates(c, coords, order=1, mode="reflect") for c in self.grid]
        return np.stack(out, axis=-1).reshape(np.shape(xs) + (3,))


def _segment_in_rect(anchor, u, x0, y0, x1, y1):
    """Intersection of the line ``anchor + t*u`` with a rectangle, as two points."""
    ts = []
    ax, ay = anchor
    if u[0] != 0:
        ts += [(x0 - ax) / u[0], (x1 - ax) / u[0]]
    else:
        ts += [-math.inf, math.inf]
    if u[1] != 0:
        tys = [(y0 - ay) / u[1], (y1 - ay) / u[1]]
    else:
        tys = [-math.inf, math.inf]
    t_lo = max(min(ts), min(tys))
    t_hi = min(max(ts), max(tys))
    return (ax + t_lo * u[0], ay + t_lo * u[1]), (ax + t_hi * u[0], ay + t_hi * u[1])


def _draw_angle(rng, spec):
    if spec.angle is not None:
        return float(spec.angle)
    base = float(rng.choice([0.0, 45.0, 90.0, 135.0]))
    return base + (float(rng.uniform(-spec.jitter, spec.jitter)) if spec.jitter else 0.0)


def _place_discs(rng, spec, r_lo, r_hi):
    """Non-overlapping discs inside the margin; each attempt places all of them afresh."""
    w, h = spec.size
    # shrink the radius range so that a grid of `count` discs could fit
    per_side = math.ceil(math.sqrt(spec.count))
    r_hi = max(r_lo, min(r_hi, (min(w, h) - 2 * MARGIN) // (2 * per_side) - 1))
    for _attempt in range(100):
        discs = []
        for _ in range(spec.count):
            r = int(rng.integers(r_lo, r_hi + 1))
            if 2 * (r + MARGIN) >= min(w, h):
                break
            cx = int(rng.integers(MARGIN + r, w - MARGIN - r))
            cy = int(rng.integers(MARGIN + r, h - MARGIN - r))
            if not all(math.hypot(cx - x, cy - y) > r + rr + 2 for x, y, rr in discs):
                break
            discs.append((cx, cy, r))
        if len(discs) == spec.count:
            return discs
    raise GenerationError(f"could not place {spec.count} symmetric patches in a {w}x{h} image")


def gen_image(spec: SynthSpec):
    """Return ``(uint8 H x W x 3 image, list of ConsensusSymmetry)``."""
    rng = np.random.default_rng(spec.seed)
    w, h = spec.size
    field = _Field(rng, w, h, spec.texture)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = xs.copy(), ys.copy()
    gts = []

    if spec.kind == REFLECTION and spec.count == 1 and spec.texture == "filtered-noise":
        angle = _draw_angle(rng, spec)
        u = _direction(angle)
        nx, ny = -u[1], u[0]
        ax = int(rng.integers(w // 4, w - w // 4))
        ay = int(rng.integers(h // 4, h - h // 4))
        s = (xs - ax) * nx + (ys - ay) * ny
        flip = s > 0
        sx[flip] = xs[flip] - 2 * s[flip] * nx
        sy[flip] = ys[flip] - 2 * s[flip] * ny
        p, q = _segment_in_rect((ax, ay), u, MARGIN, MARGIN, w - 1 - MARGIN, h - 1 - MARGIN)
        gts.append(ConsensusSymmetry(spec.image_id, REFLECTION, (p, q), SYNTH_SUPPORT))
    elif spec.kind == REFLECTION:
        for cx, cy, r in _place_discs(rng, spec, 10, 16):
            angle = _draw_angle(rng, spec)
            u = _direction(angle)
            nx, ny = -u[1], u[0]
            inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
            s = (xs - cx) * nx + (ys - cy) * ny
            flip = inside & (s > 0)
            sx[flip] = xs[flip] - 2 * s[flip] * nx
            sy[flip] = ys[flip] - 2 * s[flip] * ny
            p = (cx - r * u[0], cy - r * u[1])
            q = (cx + r * u[0], cy + r * u[1])
            gts.append(ConsensusSymmetry(spec.image_id, REFLECTION, (p, q), SYNTH_SUPPORT))
    else:
        for cx, cy, r in _place_discs(rng, spec, 10, 16):
            dx, dy = xs - cx, ys - cy
            inside = dx * dx + dy * dy <= r * r
            # fold every offset into the quadrant dx > 0, dy >= 0 by quarter turns
            fx, fy = dx.copy(), dy.copy()
            for _ in range(3):
                move = inside & ~((fx > 0) & (fy >= 0)) & ~((fx == 0) & (fy == 0))
                fx[move], fy[move] = fy[move], -fx[move]
            sx[inside] = cx + fx[inside]
            sy[inside] = cy + fy[inside]
            gts.append(ConsensusSymmetry(spec.image_id, ROTATION, ((float(cx), float(cy)),),
                                         SYNTH_SUPPORT))

    img = field.sample(sx, sy)
    if spec.noise_level > 0:
        img = img + rng.normal(0.0, spec.noise_level, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), gts


def gen_rater_labels(gts, n_raters, jitter_sigma, outlier_rate, seed=0, size=None):
    """Simulate ``n_raters`` people labelling every symmetry in ``gts``.

    Each rater reproduces each symmetry with Gaussian jitter, or with
    probability ``outlier_rate`` emits a uniformly random label instead.
    ``size = (width, height)`` bounds coordinates; by default the bounding
    box of the ground truth plus a margin.
    """
    if n_raters < 1:
        raise ParameterError("n_raters must be >= 1")
    if jitter_sigma < 0:
        raise ParameterError("jitter_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    if size is None:
        xs = [p[0] for g in gts for p in g.points] or [0.0]
        ys = [p[1] for g in gts for p in g.points] or [0.0]
        size = (int(max(xs)) + MARGIN + 1, int(max(ys)) + MARGIN + 1)
    w, h = size
    labels = []
    for k in range(n_raters):
        rater = f"rater{k:03d}"
        for g in gts:
            n = len(g.points)
            if rng.random() < outlier_rate:
                pts = [(float(rng.uniform(0, w - 1)), float(rng.uniform(0, h - 1)))
                       for _ in range(n)]
            else:
                noise = rng.normal(0.0, jitter_sigma, (n, 2)) if jitter_sigma else np.zeros((n, 2))
                pts = [(float(min(max(x + e[0], 0.0), w - 1)),
                        float(min(max(y + e[1], 0.0), h - 1)))
                       for (x, y), e in zip(g.points, noise)]
            labels.append(LabelRecord(g.image_id, rater, g.kind, tuple(pts)))
    return labels
