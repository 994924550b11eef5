"""Classical comparison detectors.

``detect_reflection_baseline`` votes mirror-consistent gradient pairs into a
(rho, theta) Hough accumulator for their perpendicular bisectors and renders
the strongest peaks as Gaussian axis heatmaps.  ``detect_rotation_baseline``
scores every other pixel by the normalized cross-correlation of the
surrounding patch with its quarter, half and three-quarter turns.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .heatmap import RasterWarning, SynthConfig, fuse, synth_single
from .labels import REFLECTION, ConsensusSymmetry

LUMA = (0.299, 0.587, 0.114)
MAX_PAIRS = 200_000


def to_gray(image):
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3:
        a = a @ np.asarray(LUMA)
    return a


def _cos_sin(deg):
    """cos and sin of ``deg`` degrees, exact at multiples of 90."""
    q, r = divmod(deg, 90.0)
    if r == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    t = math.radians(deg)
    return math.cos(t), math.sin(t)


class HoughAccumulator:
    """Votes over lines ``(x - cx) cos(theta) + (y - cy) sin(theta) = rho``.

    ``rho`` is measured from the image centre in 1-px bins spanning the
    diagonal; ``theta`` has 1-degree bins over [0, 180).
    """

    def __init__(self, width, height):
        self.width, self.height = width, height
        self.cx, self.cy = (width - 1) / 2.0, (height - 1) / 2.0
        self.rho_max = int(math.ceil(math.hypot(width, height) / 2.0))
        self.votes = np.zeros((2 * self.rho_max + 1, 180))

    def add(self, rho, theta_deg, weight):
        t = np.rint(theta_deg).astype(np.int64)
        r = np.rint(rho)
        wrap = t >= 180
        t = np.where(wrap, t - 180, t)
        r = np.where(wrap, -r, r).astype(np.int64)
        ok = np.abs(r) <= self.rho_max
        np.add.at(self.votes, (r[ok] + self.rho_max, t[ok]), weight[ok])

    def peaks(self, k=5):
        """Top-``k`` local maxima after 3x3 non-maximum suppression, strongest first."""
        v = self.votes
        if not v.any():
            return []
        local = ndimage.maximum_filter(v, size=3, mode="wrap") == v
        local &= v > 0
        idx = np.argwhere(local)
        order = np.lexsort((idx[:, 1], idx[:, 0], -v[idx[:, 0], idx[:, 1]]))
        return [(float(i - self.rho_max), float(j), float(v[i, j])) for i, j in idx[order[:k]]]

    def line_segment(self, rho, theta_deg):
        """Endpoints of the line clipped to the image rectangle, or None."""
        c, s = _cos_sin(theta_deg)
        # point on the line nearest the centre, and the line direction
        px, py = self.cx + rho * c, self.cy + rho * s
        dx, dy = -s, c
        lo, hi = -math.inf, math.inf
        for p, d, upper in ((px, dx, self.width - 1), (py, dy, self.height - 1)):
            if abs(d) < 1e-12:
                if p < 0 or p > upper:
                    return None
                continue
            a, b = (0 - p) / d, (upper - p) / d
            lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
        if lo > hi:
            return None
        return (px + lo * dx, py + lo * dy), (px + hi * dx, py + hi * dy)


def _strong_pixels(mag, n_max):
    """Pixels with magnitude >= the n-th largest value (ties all included)."""
    flat = mag.ravel()
    positive = flat[flat > 0]
    if positive.size == 0:
        return np.empty(0, dtype=np.int64)
    if positive.size > n_max:
        cutoff = np.partition(positive, positive.size - n_max)[positive.size - n_max]
    else:
        cutoff = positive.min()
    return np.flatnonzero(flat >= cutoff)


def reflection_votes(image, max_pairs=MAX_PAIRS, min_cos=math.cos(math.radians(10))):
    gray = to_gray(image)
    h, w = gray.shape
    acc = HoughAccumulator(w, h)
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    n_max = int((1 + math.sqrt(1 + 8 * max_pairs)) / 2)
    idx = _strong_pixels(mag, n_max)
    if idx.size < 2:
        return acc
    ys, xs = np.divmod(idx, w)
    vx, vy, m = gx.ravel()[idx], gy.ravel()[idx], mag.ravel()[idx]
    i, j = np.triu_indices(idx.size, k=1)
    if i.size > max_pairs:
        keep = np.argsort(-(m[i] * m[j]), kind="stable")[:max_pairs]
        i, j = i[keep], j[keep]
    dx, dy = (xs[j] - xs[i]).astype(np.float64), (ys[j] - ys[i]).astype(np.float64)
    dist = np.hypot(dx, dy)
    nx, ny = dx / dist, dy / dist
    # gradient at i mirrored across the bisector (normal n) should match gradient at j
    dot = vx[i] * nx + vy[i] * ny
    rx, ry = vx[i] - 2 * dot * nx, vy[i] - 2 * dot * ny
    cos = (rx * vx[j] + ry * vy[j]) / (m[i] * m[j])
    ok = cos >= min_cos
    nx, ny = nx[ok], ny[ok]
    # orient the normal into theta in [0, 180) and take rho from the normal itself, so
    # axis-parallel pairs get no rounding noise from cos(90 degrees)
    back = (ny < 0) | ((ny == 0) & (nx < 0))
    nx, ny = np.where(back, -nx, nx), np.where(back, -ny, ny)
    theta = np.degrees(np.arctan2(ny, nx))
    mx = (xs[i][ok] + xs[j][ok]) / 2.0 - acc.cx
    my = (ys[i][ok] + ys[j][ok]) / 2.0 - acc.cy
    rho = mx * nx + my * ny
    acc.add(rho, theta, (m[i] * m[j])[ok])
    return acc


def detect_reflection_baseline(image, top_k=5, sigma=5.0):
    """Heatmap of the ``top_k`` strongest mirror axes, each scaled by relative vote."""
    gray = to_gray(image)
    h, w = gray.shape
    acc = reflection_votes(image)
    peaks = acc.peaks(top_k)
    if not peaks:
        return np.zeros((h, w))
    strongest = peaks[0][2]
    maps = []
    for rho, theta, vote in peaks:
        seg = acc.line_segment(rho, theta)
        if seg is None:
            continue
        gt = ConsensusSymmetry("baseline", REFLECTION, seg, 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RasterWarning)
            try:
                maps.append(synth_single(gt, w, h, SynthConfig(sigma)) * (vote / strongest))
            except ValueError:
                continue
    return np.clip(fuse(maps), 0.0, 1.0) if maps else np.zeros((h, w))


def _ncc(a, b):
    """NCC over the last two axes; zero where either patch has no variance."""
    a = a - a.mean(axis=(-2, -1), keepdims=True)
    b = b - b.mean(axis=(-2, -1), keepdims=True)
    num = (a * b).sum(axis=(-2, -1))
    den = np.sqrt((a * a).sum(axis=(-2, -1)) * (b * b).sum(axis=(-2, -1)))
    out = np.zeros_like(num)
    nz = den > 1e-12 * max(1.0, float(np.max(den, initial=0.0)))
    out[nz] = num[nz] / den[nz]
    return out


def rotation_scores(image, radius=16, stride=2):
    """Score grid at pixels (stride * i, stride * j); border pixels score 0."""
    gray = to_gray(image)
    h, w = gray.shape
    gh, gw = -(-h // stride), -(-w // stride)
    grid = np.zeros((gh, gw))
    size = 2 * radius + 1
    if h < size or w < size:
        return grid
    patches = sliding_window_view(gray, (size, size))  # top-left anchored
    # candidate centres on the stride lattice that have a full patch
    cy = np.arange(0, h, stride)
    cx = np.arange(0, w, stride)
    vy = cy[(cy >= radius) & (cy < h - radius)]
    vx = cx[(cx >= radius) & (cx < w - radius)]
    if vy.size == 0 or vx.size == 0:
        return grid
    p = patches[vy[:, None] - radius, vx[None, :] - radius]
    score = sum(_ncc(p, np.rot90(p, k, axes=(-2, -1))) for k in (1, 2, 3)) / 3.0
    grid[np.ix_(vy // stride, vx // stride)] = score
    return np.clip(grid, 0.0, 1.0)


def detect_rotation_baseline(image, radius=16, stride=2):
    gray = to_gray(image)
    h, w = gray.shape
    grid = rotation_scores(image, radius, stride)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    up = ndimage.map_coordinates(grid, [ys / stride, xs / stride], order=1, mode="nearest")
    return np.clip(up, 0.0, 1.0)
