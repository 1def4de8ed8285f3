"""Class-separability metrics over labelled embedding sets: silhouette,
separability index, hypothesis margin and centroid distance.

All distances are Euclidean. Nearest-neighbour ties go to the lower sample index.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, FormatError, ShapeError

HM_EPS = 1e-12
METRIC_KEYS = ("silhouette", "si", "hm", "cd")


@dataclass(frozen=True)
class EmbeddingSet:
    points: np.ndarray
    labels: np.ndarray
    ids: tuple = ()
    warnings: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise ShapeError(f"embedding points must be a matrix, got shape {pts.shape}")
        labels = np.array(self.labels).reshape(-1)
        if len(labels) != len(pts):
            raise ShapeError(f"{len(pts)} points but {len(labels)} labels")
        if not np.all(np.isfinite(pts)):
            raise DomainError("embedding contains non-finite values")
        pts.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> list:
        return sorted(set(self.labels.tolist()))

    def distances(self) -> np.ndarray:
        return cdist(self.points, self.points)

    def require_classes(self, metric: str, min_per_class: int = 1) -> None:
        classes = self.classes
        if len(classes) < 2:
            raise DomainError(f"{metric} needs at least two classes, got {len(classes)}")
        for c in classes:
            k = int(np.sum(self.labels == c))
            if k < min_per_class:
                raise DomainError(f"{metric}: class {c} has {k} point(s), needs at least {min_per_class}")


def _as_set(s, labels=None) -> EmbeddingSet:
    if isinstance(s, EmbeddingSet):
        return s
    return EmbeddingSet(s, labels)


def silhouette(s, labels=None) -> float:
    s = _as_set(s, labels)
    s.require_classes("silhouette", 2)
    d = s.distances()
    classes = s.classes
    masks = [s.labels == c for c in classes]
    total = 0.0
    for i in range(len(s)):
        own = classes.index(s.labels[i])
        a = d[i, masks[own]].sum() / (masks[own].sum() - 1)
        b = min(d[i, m].mean() for k, m in enumerate(masks) if k != own)
        denom = max(a, b)
        total += 0.0 if denom == 0 else (b - a) / denom
    return total / len(s)


def _nearest(d: np.ndarray, i: int, mask: np.ndarray) -> int:
    """Index of the nearest sample among ``mask`` (excluding ``i``); argmin picks the lowest index on ties."""
    row = np.where(mask, d[i], np.inf)
    row[i] = np.inf
    return int(np.argmin(row))


def separability_index(s, labels=None) -> float:
    s = _as_set(s, labels)
    if len(s) < 2:
        raise DomainError("separability index needs at least two points")
    d = s.distances()
    everyone = np.ones(len(s), dtype=bool)
    hits = sum(s.labels[_nearest(d, i, everyone)] == s.labels[i] for i in range(len(s)))
    return hits / len(s)


def hypothesis_margin(s, labels=None) -> float:
    """Mean of ``|x - nearmiss(x)| / |x - nearhit(x)|``."""
    s = _as_set(s, labels)
    s.require_classes("hypothesis margin", 2)
    d = s.distances()
    total = 0.0
    for i in range(len(s)):
        same = s.labels == s.labels[i]
        hit = d[i, _nearest(d, i, same)]
        miss = d[i, _nearest(d, i, ~same)]
        if hit == 0:
            s.warnings.append(f"sample {i}: nearhit at distance 0, denominator set to {HM_EPS}")
            hit = HM_EPS
        total += miss / hit
    return total / len(s)


def centroids(s: EmbeddingSet) -> np.ndarray:
    return np.vstack([s.points[s.labels == c].mean(axis=0) for c in s.classes])


def centroid_distance(s, labels=None) -> float:
    s = _as_set(s, labels)
    s.require_classes("centroid distance")
    c = centroids(s)
    d = cdist(c, c)
    return float(d[np.triu_indices(len(c), k=1)].sum())


def all_metrics(s, labels=None) -> dict:
    s = _as_set(s, labels)
    return {
        "silhouette": silhouette(s),
        "si": separability_index(s),
        "hm": hypothesis_margin(s),
        "cd": centroid_distance(s),
    }


def relative_improvement(new: float, old: float) -> float:
    """``(new - old) / |old|``; NaN when ``old`` is zero."""
    if old == 0:
        return math.nan
    return (new - old) / abs(old)


def read_embeddings(path) -> EmbeddingSet:
    """Read a dump with header ``id,label,e0..e{m-1}``."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty embeddings file")
    header = rows[0]
    if header[:2] != ["id", "label"] or len(header) < 3:
        raise FormatError(f"{path}:1: expected header id,label,e0,..., got {','.join(header)}")
    width = len(header)
    ids, labels, vecs = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise FormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            ids.append(row[0])
            labels.append(int(row[1]))
            vecs.append([float(x) for x in row[2:]])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
    if not vecs:
        raise FormatError(f"{path}: no embedding rows")
    return EmbeddingSet(np.array(vecs), np.array(labels), tuple(ids))


def metrics_json(metrics: dict) -> str:
    return json.dumps({k: metrics[k] for k in METRIC_KEYS}, indent=2, sort_keys=True)
