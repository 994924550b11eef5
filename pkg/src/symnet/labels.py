"""Rater annotations and their reduction to consensus symmetries.

Labels arrive one JSON object per line::

    {"image_id": "img01", "rater_id": "r07", "kind": "reflection",
     "points": [[10.0, 4.5], [10.0, 60.0]]}

A reflection label carries the two endpoints of an axis, a rotation label
carries one center.  Clustering is DBSCAN under :func:`label_distance`.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

from .exceptions import ParameterError, ParseError, SchemaError

REFLECTION = "reflection"
ROTATION = "rotation"
KINDS = (REFLECTION, ROTATION)
_N_POINTS = {REFLECTION: 2, ROTATION: 1}


def _check_kind(kind):
    if kind not in _N_POINTS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")
    return kind


@dataclass(frozen=True)
class LabelRecord:
    image_id: str
    rater_id: str
    kind: str
    points: tuple

    def __post_init__(self):
        _check_kind(self.kind)
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) != _N_POINTS[self.kind]:
            raise SchemaError(
                f"{self.kind} label needs {_N_POINTS[self.kind]} point(s), got {len(pts)}")
        object.__setattr__(self, "points", pts)

    def sort_key(self):
        return (self.image_id, self.kind, self.rater_id,
                tuple(c for p in self.points for c in p))


@dataclass(frozen=True)
class ConsensusSymmetry:
    image_id: str
    kind: str
    points: tuple
    support: int

    def __post_init__(self):
        _check_kind(self.kind)
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) != _N_POINTS[self.kind]:
            raise SchemaError(
                f"{self.kind} symmetry needs {_N_POINTS[self.kind]} point(s), got {len(pts)}")
        object.__setattr__(self, "points", pts)

    @property
    def center(self):
        return self.points[0]

    def to_dict(self):
        return {"image_id": self.image_id, "kind": self.kind,
                "points": [list(p) for p in self.points], "support": self.support}


@dataclass(frozen=True)
class ClusterConfig:
    tau: float = 5.0
    min_labelers: int = 5

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.min_labelers < 1:
            raise ParameterError(f"min_labelers must be >= 1, got {self.min_labelers}")


def _parse_points(value, kind, lineno, source):
    try:
        pts = [(float(p[0]), float(p[1])) for p in value]
        if any(len(p) != 2 for p in value):
            raise ValueError
    except (TypeError, ValueError, IndexError, KeyError):
        raise ParseError("points must be a list of [x, y] pairs", lineno, source) from None
    if len(pts) != _N_POINTS[kind]:
        raise SchemaError(
            f"{kind} record needs {_N_POINTS[kind]} point(s), got {len(pts)}", lineno, source)
    if not all(math.isfinite(c) for p in pts for c in p):
        raise ParseError("non-finite coordinate", lineno, source)
    return pts


def _parse_record(line, lineno, source, needs_rater):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", lineno, source) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", lineno, source)
    keys = ["image_id", "kind", "points"] + (["rater_id"] if needs_rater else ["support"])
    missing = [k for k in keys if k not in obj]
    if missing:
        raise SchemaError(f"missing key(s): {', '.join(missing)}", lineno, source)
    kind = obj["kind"]
    if kind not in _N_POINTS:
        raise SchemaError(f"unknown kind {kind!r}", lineno, source)
    pts = _parse_points(obj["points"], kind, lineno, source)
    return obj, kind, pts


def _lines(stream):
    if isinstance(stream, str):
        return stream.splitlines()
    return stream


def parse_labels(stream, bounds=None, source=None) -> list:
    """Parse rater labels from an iterable of lines (or a string).

    ``bounds`` optionally maps image_id to ``(width, height)``; labels with
    coordinates outside ``[0, width-1] x [0, height-1]`` are schema errors.
    """
    source = source or getattr(stream, "name", None)
    records = []
    for lineno, line in enumerate(_lines(stream), 1):
        if not line.strip():
            continue
        obj, kind, pts = _parse_record(line, lineno, source, needs_rater=True)
        image_id = str(obj["image_id"])
        if bounds is not None and image_id in bounds:
            w, h = bounds[image_id]
            for x, y in pts:
                if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                    raise SchemaError(
                        f"point ({x}, {y}) outside {w}x{h} image {image_id}", lineno, source)
        records.append(LabelRecord(image_id, str(obj["rater_id"]), kind, tuple(pts)))
    return records


def parse_consensus(stream, source=None) -> list:
    source = source or getattr(stream, "name", None)
    out = []
    for lineno, line in enumerate(_lines(stream), 1):
        if not line.strip():
            continue
        obj, kind, pts = _parse_record(line, lineno, source, needs_rater=False)
        try:
            support = int(obj["support"])
        except (TypeError, ValueError):
            raise SchemaError("support must be an integer", lineno, source) from None
        out.append(ConsensusSymmetry(str(obj["image_id"]), kind, tuple(pts), support))
    return out


def dump_labels(labels: Iterable[LabelRecord]):
    return "".join(
        json.dumps({"image_id": r.image_id, "rater_id": r.rater_id, "kind": r.kind,
                    "points": [list(p) for p in r.points]}) + "\n"
        for r in labels)


def dump_consensus(gts: Iterable[ConsensusSymmetry]):
    return "".join(json.dumps(g.to_dict()) + "\n" for g in gts)


def _dist(p, q):
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _axis_distance(a, b):
    straight = max(_dist(a[0], b[0]), _dist(a[1], b[1]))
    swapped = max(_dist(a[0], b[1]), _dist(a[1], b[0]))
    return min(straight, swapped)


def label_distance(a, b):
    """Distance in pixels between two labels of the same kind.

    Rotation labels use the Euclidean distance between centers.  Reflection
    axes are undirected: the larger endpoint distance under the better of
    the two endpoint pairings.
    """
    if a.kind != b.kind:
        raise ParameterError(f"cannot compare {a.kind} label with {b.kind} label")
    if a.kind == ROTATION:
        return _dist(a.points[0], b.points[0])
    return _axis_distance(a.points, b.points)


def consensus_representative(cluster):
    """Mean geometry of a cluster of same-kind labels.

    Axes are first flipped so that each is oriented like the first member.
    """
    if not cluster:
        raise ParameterError("cannot take the representative of an empty cluster")
    kind = cluster[0].kind
    if any(r.kind != kind for r in cluster):
        raise ParameterError("cluster mixes reflection and rotation labels")
    n = len(cluster)
    if kind == ROTATION:
        return ((sum(r.points[0][0] for r in cluster) / n,
                 sum(r.points[0][1] for r in cluster) / n),)
    ref = cluster[0].points
    oriented = []
    for r in cluster:
        p, q = r.points
        if max(_dist(p, ref[0]), _dist(q, ref[1])) > max(_dist(q, ref[0]), _dist(p, ref[1])):
            p, q = q, p
        oriented.append((p, q))
    return tuple(
        (sum(o[e][0] for o in oriented) / n, sum(o[e][1] for o in oriented) / n)
        for e in range(2))


def dbscan(items, eps, min_samples, metric):
    """Deterministic DBSCAN over ``items`` in the given order.

    A point is core when at least ``min_samples`` items (itself included)
    lie within ``eps``.  Clusters are seeded in item order; a border point
    joins the first cluster that reaches it.  Returns one cluster index per
    item, ``-1`` for noise.
    """
    n = len(items)
    neighbors = [[j for j in range(n) if metric(items[i], items[j]) <= eps] for i in range(n)]
    is_core = [len(nb) >= min_samples for nb in neighbors]
    assignment = [-1] * n
    cluster = 0
    for i in range(n):
        if assignment[i] != -1 or not is_core[i]:
            continue
        assignment[i] = cluster
        queue = [i]
        head = 0
        while head < len(queue):
            p = queue[head]
            head += 1
            for q in neighbors[p]:
                if assignment[q] == -1:
                    assignment[q] = cluster
                    if is_core[q]:
                        queue.append(q)
        cluster += 1
    return assignment


def cluster_labels(labels, cfg: ClusterConfig = ClusterConfig()) -> list:
    """Reduce one image's labels to consensus symmetries.

    Reflection and rotation labels are clustered separately.  Labels are
    visited in ``(rater_id, coordinates)`` order so the result does not
    depend on input order.  Clusters backed by fewer than
    ``cfg.min_labelers`` distinct raters are discarded.
    """
    labels = list(labels)
    if not labels:
        return []
    image_ids = {r.image_id for r in labels}
    if len(image_ids) > 1:
        raise ParameterError(f"cluster_labels expects one image, got {sorted(image_ids)}")
    (image_id,) = image_ids
    out = []
    for kind in KINDS:
        group = sorted((r for r in labels if r.kind == kind), key=LabelRecord.sort_key)
        if not group:
            continue
        assignment = dbscan(group, cfg.tau, cfg.min_labelers, label_distance)
        members = defaultdict(list)
        for rec, c in zip(group, assignment):
            if c >= 0:
                members[c].append(rec)
        for c in sorted(members):
            support = len({r.rater_id for r in members[c]})
            if support < cfg.min_labelers:
                continue
            geometry = consensus_representative(members[c])
            out.append(ConsensusSymmetry(image_id, kind, geometry, support))
    return out


def cluster_all(labels, cfg: ClusterConfig = ClusterConfig()) -> list:
    """Run :func:`cluster_labels` per image, in sorted image_id order."""
    by_image = defaultdict(list)
    for r in labels:
        by_image[r.image_id].append(r)
    out = []
    for image_id in sorted(by_image):
        out.extend(cluster_labels(by_image[image_id], cfg))
    return out


def filter_by_support(gts, min_support):
    if min_support < 1:
        raise ParameterError(f"min_support must be >= 1, got {min_support}")
    return [g for g in gts if g.support >= min_support]


def group_by_image(gts):
    by_image = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    return dict(by_image)
