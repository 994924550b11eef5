"""Precision/recall evaluation of symmetry heatmaps.

Reflection: the prediction is thinned to one-pixel ridges, thresholded, and
matched one-to-one against the rasterized ground-truth axes within a pixel
tolerance.  Rotation: thresholded pixels count as true positives inside a
disk around any ground-truth center, and a center is recalled when its disk
holds at least one detection.
"""
from __future__ import annotations

import csv
import io as _io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.special import betainc

from . import io
from .exceptions import MissingPredictionError, ParameterError
from .heatmap import gt_pixels
from .labels import REFLECTION, ROTATION, filter_by_support

N_THRESHOLDS = 100
MATCH_TOLERANCE = 5.0
DISK_RADIUS = 5.0


def default_thresholds(n=N_THRESHOLDS):
    return np.arange(n) / (n - 1)


# -- thinning -----------------------------------------------------------------

def ridge_normal(h):
    """Unit ridge-normal field: the most negative curvature direction of ``h``.

    The Hessian is built from Sobel derivatives of the Sobel gradients.  Unlike
    the gradient it stays well defined on the crest, where the slope vanishes.
    """
    gx = ndimage.sobel(h, axis=1, mode="nearest")
    gy = ndimage.sobel(h, axis=0, mode="nearest")
    hxx = ndimage.sobel(gx, axis=1, mode="nearest")
    hyy = ndimage.sobel(gy, axis=0, mode="nearest")
    hxy = ndimage.sobel(gx, axis=0, mode="nearest")
    # principal direction of the larger eigenvalue; the normal is perpendicular to it
    theta = 0.5 * np.arctan2(2.0 * hxy, hxx - hyy)
    return -np.sin(theta), np.cos(theta)


def thin(h):
    """Keep a pixel only where it is >= both neighbours one pixel along the ridge normal."""
    h = np.asarray(h, dtype=np.float64)
    nx, ny = ridge_normal(h)
    ys, xs = np.mgrid[0:h.shape[0], 0:h.shape[1]].astype(np.float64)
    ahead = ndimage.map_coordinates(h, [ys + ny, xs + nx], order=1, mode="nearest")
    behind = ndimage.map_coordinates(h, [ys - ny, xs - nx], order=1, mode="nearest")
    keep = (h >= ahead) & (h >= behind)
    return np.where(keep, h, 0.0)


# -- matching -----------------------------------------------------------------

def _as_points(pixels):
    return np.asarray(pixels, dtype=np.float64).reshape(-1, 2)


def candidate_pairs(pred, gt, tol):
    """All (pred, gt) index pairs within ``tol``, sorted by (distance, pred, gt)."""
    if len(pred) == 0 or len(gt) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    sdm = cKDTree(pred).sparse_distance_matrix(cKDTree(gt), tol, output_type="ndarray")
    i, j, d = sdm["i"].astype(np.int64), sdm["j"].astype(np.int64), sdm["v"]
    order = np.lexsort((j, i, d))
    return i[order], j[order]


def _greedy(pi, gj, n_pred, n_gt, active=None):
    used_p = bytearray(n_pred)
    used_g = bytearray(n_gt)
    tp = 0
    if active is None:
        for a, b in zip(pi.tolist(), gj.tolist()):
            if not used_p[a] and not used_g[b]:
                used_p[a] = 1
                used_g[b] = 1
                tp += 1
    else:
        act = active.tolist()
        for a, b in zip(pi.tolist(), gj.tolist()):
            if act[a] and not used_p[a] and not used_g[b]:
                used_p[a] = 1
                used_g[b] = 1
                tp += 1
    return tp


def match_reflection(pred_pixels, gt_pixels, tol=MATCH_TOLERANCE):
    """Greedy one-to-one matching, closest pair first.  Returns ``(tp, fp, fn)``.

    ``pred_pixels`` may carry a third score column; it is ignored.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be > 0, got {tol}")
    pred = np.asarray(pred_pixels, dtype=np.float64)
    pred = pred[:, :2] if pred.ndim == 2 else pred.reshape(-1, 2)
    gt = _as_points(gt_pixels)
    pi, gj = candidate_pairs(pred, gt, tol)
    tp = _greedy(pi, gj, len(pred), len(gt))
    return tp, len(pred) - tp, len(gt) - tp


def disk_hits(pred_pixels, gt_centers, radius=DISK_RADIUS):
    """Boolean (n_pred, n_centers) matrix: pixel within the closed disk of each center."""
    pred = _as_points(pred_pixels)
    centers = _as_points(gt_centers)
    if len(pred) == 0 or len(centers) == 0:
        return np.zeros((len(pred), len(centers)), dtype=bool)
    d2 = ((pred[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return d2 <= radius * radius


def match_rotation(pred_pixels, gt_centers, radius=DISK_RADIUS):
    """Returns ``(tp, fp, recalled_gts)`` for disk-overlap matching."""
    if not radius > 0:
        raise ParameterError(f"radius must be > 0, got {radius}")
    hits = disk_hits(pred_pixels, gt_centers, radius)
    inside = hits.any(axis=1)
    tp = int(inside.sum())
    return tp, int(len(inside) - tp), int(hits.any(axis=0).sum())


# -- curves -------------------------------------------------------------------

@dataclass
class EvalCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def to_csv(self):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(self.thresholds, self.precision, self.recall):
            w.writerow([f"{t:.6f}", f"{p:.6f}", f"{r:.6f}"])
        return buf.getvalue()


def _precision(tp, n_det):
    return 1.0 if n_det == 0 else tp / n_det


def pr_curve(pred, gts, kind, thresholds=None, tol=MATCH_TOLERANCE, radius=DISK_RADIUS):
    """Precision/recall of heatmap ``pred`` against ``gts`` at each threshold.

    A pixel is detected at threshold ``t`` when its value is ``>= t``.  With
    no detections precision is 1 by convention.
    """
    pred = np.asarray(pred, dtype=np.float64)
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds)
    height, width = pred.shape
    gts = [g for g in gts if g.kind == kind]
    if not gts:
        raise ParameterError(f"no {kind} ground truth to evaluate against")
    precision = np.empty(len(thresholds))
    recall = np.empty(len(thresholds))

    if kind == REFLECTION:
        h = thin(pred)
        gmask = gt_pixels(gts, REFLECTION, width, height)
        gy, gx = np.nonzero(gmask)
        gt_xy = np.stack([gx, gy], axis=1).astype(np.float64)
        py, px = np.mgrid[0:height, 0:width]
        pred_xy = np.stack([px.ravel(), py.ravel()], axis=1).astype(np.float64)
        values = h.ravel()
        pi, gj = candidate_pairs(pred_xy, gt_xy, tol)
        cache = {}
        for k, t in enumerate(thresholds):
            active = values >= t
            key = active.tobytes()
            if key not in cache:
                tp = _greedy(pi, gj, len(pred_xy), len(gt_xy), active)
                cache[key] = (tp, int(active.sum()))
            tp, n_det = cache[key]
            precision[k] = _precision(tp, n_det)
            recall[k] = tp / len(gt_xy) if len(gt_xy) else 0.0
    elif kind == ROTATION:
        centers = np.array([g.points[0] for g in gts])
        py, px = np.mgrid[0:height, 0:width]
        pred_xy = np.stack([px.ravel(), py.ravel()], axis=1)
        values = pred.ravel()
        hits = disk_hits(pred_xy, centers, radius)
        inside = hits.any(axis=1)
        best = np.array([values[hits[:, c]].max() if hits[:, c].any() else -np.inf
                         for c in range(len(centers))])
        for k, t in enumerate(thresholds):
            active = values >= t
            n_det = int(active.sum())
            tp = int((active & inside).sum())
            precision[k] = _precision(tp, n_det)
            recall[k] = float((best >= t).sum()) / len(centers)
    else:
        raise ParameterError(f"unknown kind {kind!r}")
    return EvalCurve(np.asarray(thresholds, dtype=np.float64), precision, recall)


def f_measure(p, r):
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    denom = p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(denom > 0, 2.0 * p * r / np.where(denom > 0, denom, 1.0), 0.0)
    return f


def max_f(curve: EvalCurve):
    """Best F-measure over the curve and the smallest threshold attaining it."""
    f = f_measure(curve.precision, curve.recall)
    k = int(np.argmax(f))
    return float(f[k]), float(curve.thresholds[k])


# -- statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class PairedTest:
    t_statistic: float
    p_value: float
    n: int
    mean_difference: float = 0.0
    degenerate: bool = False


def student_t_sf2(t, df):
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``df`` degrees."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(min(1.0, max(0.0, betainc(df / 2.0, 0.5, x))))


def paired_t_test(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise ParameterError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedTest(0.0, 1.0, n, 0.0)
        return PairedTest(math.copysign(math.inf, mean), 0.0, n, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return PairedTest(t, student_t_sf2(t, n - 1), n, mean)


# -- detector-level reports ---------------------------------------------------

@dataclass
class EvalReport:
    detector_id: str
    kind: str
    image_ids: list
    per_image_max_f: list
    curves: list = field(repr=False, default_factory=list)
    mean_curve: EvalCurve | None = field(repr=False, default=None)
    max_f: float = 0.0
    max_f_threshold: float = 0.0

    def per_image_csv(self):
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "max_f"])
        for i, f in zip(self.image_ids, self.per_image_max_f):
            w.writerow([i, f"{f:.6f}"])
        return buf.getvalue()

    def summary(self):
        return (f"detector={self.detector_id}\nkind={self.kind}\nn={len(self.image_ids)}\n"
                f"max_f={self.max_f:.6f}\nthreshold={self.max_f_threshold:.6f}\n"
                f"mean_image_max_f={float(np.mean(self.per_image_max_f)):.6f}\n")


def mean_curve(curves):
    return EvalCurve(curves[0].thresholds,
                     np.mean([c.precision for c in curves], axis=0),
                     np.mean([c.recall for c in curves], axis=0))


def _load_predictions(predictions, ids):
    if isinstance(predictions, (str, Path)):
        d = Path(predictions)
        missing = [i for i in ids if not (d / f"{i}.pgm").exists()]
        if missing:
            raise MissingPredictionError(missing)
        return {i: io.read_heatmap_pgm(d / f"{i}.pgm") for i in ids}
    missing = [i for i in ids if i not in predictions]
    if missing:
        raise MissingPredictionError(missing)
    return {i: predictions[i] for i in ids}


def evaluate_detector(predictions, gt_set, kind, min_support=None, detector_id="detector",
                      thresholds=None):
    """Score one detector over many images.

    ``predictions`` is a directory of ``<image_id>.pgm`` heatmaps or a mapping
    image_id -> array; ``gt_set`` maps image_id -> consensus symmetries.
    Images with no ground truth of ``kind`` (after the optional support
    filter) are skipped.  Images are processed in sorted id order.
    """
    selected = {}
    for image_id in sorted(gt_set):
        gts = [g for g in gt_set[image_id] if g.kind == kind]
        if min_support is not None:
            gts = filter_by_support(gts, min_support)
        if gts:
            selected[image_id] = gts
    if not selected:
        raise ParameterError(f"no images with {kind} ground truth to evaluate")
    preds = _load_predictions(predictions, list(selected))
    curves, fs = [], []
    for image_id, gts in selected.items():
        c = pr_curve(preds[image_id], gts, kind, thresholds)
        curves.append(c)
        fs.append(max_f(c)[0])
    mc = mean_curve(curves)
    best, thr = max_f(mc)
    return EvalReport(detector_id, kind, list(selected), fs, curves, mc, best, thr)


def compare_reports(a: EvalReport, b: EvalReport):
    """Paired t-test of per-image max-F between two reports over the same images."""
    if a.image_ids != b.image_ids:
        raise ParameterError("reports cover different images")
    return paired_t_test(a.per_image_max_f, b.per_image_max_f)


def comparison_summary(a: EvalReport, b: EvalReport, test: PairedTest):
    return (f"a={a.detector_id} max_f={a.max_f:.6f} threshold={a.max_f_threshold:.6f}\n"
            f"b={b.detector_id} max_f={b.max_f:.6f} threshold={b.max_f_threshold:.6f}\n"
            f"n={test.n}\nmean_difference={test.mean_difference:.6f}\n"
            f"t={test.t_statistic:.6f}\np={test.p_value:.6g}\n")
