"""Intra-class, inter-class and combined class losses, the total objective and
the L2-distance variant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DomainError
from .refiner import ClassReps

log = logging.getLogger(__name__)

DESIGNS = ("cls", "intra", "inter", "combine")
CLASS_LOSS_MODES = ("cosine", "l2", "off")
L2_NORMS = ("mean", "max")


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    class_loss_mode: str = "cosine"
    design: str = "combine"
    l2_norm: str = "mean"

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown loss design {self.design!r}; choose from {DESIGNS}")
        if self.class_loss_mode not in CLASS_LOSS_MODES:
            raise ConfigError(f"unknown class loss mode {self.class_loss_mode!r}")
        if self.l2_norm not in L2_NORMS:
            raise ConfigError(f"unknown l2 normalisation {self.l2_norm!r}")
        if self.class_loss_mode == "l2" and self.design in ("intra", "inter"):
            raise ConfigError("the intra/inter loss designs are defined for cosine similarity only")


def _group_matrix(labels: Sequence[int]) -> tuple[np.ndarray, list[int]]:
    """(present classes x batch) matrix averaging each class's members."""
    labels = np.asarray(labels, dtype=int)
    present = sorted(set(labels.tolist()))
    g = np.zeros((len(present), len(labels)))
    for r, c in enumerate(present):
        members = labels == c
        g[r, members] = 1.0 / members.sum()
    return g, present


def _pairs(k: int) -> tuple[list[int], list[int]]:
    left, right = [], []
    for i in range(k):
        for j in range(i + 1, k):
            left.append(i)
            right.append(j)
    return left, right


def intra_class_loss(hg_sub: Tensor, labels: Sequence[int], reps: ClassReps) -> Tensor:
    """Average over present classes of the average cosine between ``hc_i`` and its members."""
    if hg_sub.shape[0] == 0 or len(labels) == 0:
        raise DomainError("intra-class loss of an empty batch")
    sims = dc.row_cosine(hg_sub, reps.rows_for(labels))
    g, _ = _group_matrix(labels)
    return dc.mean_all(dc.matmul(Tensor(g), sims))


def inter_class_loss(reps: ClassReps) -> Tensor:
    """Average cosine similarity over class pairs ``i < j``."""
    k = len(reps.classes)
    if k < 2:
        log.warning("inter-class loss needs two class representations, have %d; using 0", k)
        return Tensor([[0.0]])
    left, right = _pairs(k)
    sims = dc.row_cosine(dc.gather_rows(reps.matrix, left), dc.gather_rows(reps.matrix, right))
    return dc.mean_all(sims)


def class_loss(intra: Tensor, inter: Tensor, lambda1: float = 1.0) -> Tensor:
    """``exp(inter - lambda1 * intra)``."""
    return dc.exp(dc.sub(inter, dc.scale(intra, lambda1)))


def _aggregate(values: Tensor, how: str) -> Tensor:
    if how == "mean":
        return dc.mean_all(values)
    # values is an r x 1 column; max routes the gradient to the arg-max row only
    return dc.gather_rows(values, [int(np.argmax(values.values[:, 0]))])


def l2_intra_inter(hg_sub: Tensor, labels: Sequence[int], reps: ClassReps,
                   norm: str = "mean") -> tuple[Tensor, Tensor]:
    """Distance-based intra and inter terms.

    ``norm`` aggregates each group of distances: ``mean`` averages them,
    ``max`` keeps the largest.
    """
    if len(labels) == 0:
        raise DomainError("l2 class loss of an empty batch")
    dists = dc.euclidean(hg_sub, reps.rows_for(labels))
    labels_arr = np.asarray(labels, dtype=int)
    per_class = []
    for c in sorted(set(labels_arr.tolist())):
        rows = np.flatnonzero(labels_arr == c)
        per_class.append(_aggregate(dc.gather_rows(dists, rows), norm))
    intra = _aggregate(dc.concat_rows(per_class), norm)
    k = len(reps.classes)
    if k < 2:
        log.warning("inter-class distance needs two class representations, have %d; using 0", k)
        return intra, Tensor([[0.0]])
    left, right = _pairs(k)
    pair_d = dc.euclidean(dc.gather_rows(reps.matrix, left), dc.gather_rows(reps.matrix, right))
    inter = _aggregate(pair_d, norm)
    return intra, inter


def l2_class_loss(hg_sub: Tensor, labels: Sequence[int], reps: ClassReps, norm: str = "mean") -> Tensor:
    """``exp(intra_distance - inter_distance)``."""
    intra, inter = l2_intra_inter(hg_sub, labels, reps, norm)
    return dc.exp(dc.sub(intra, inter))


def total_loss(l_cls: Tensor, l_class: Tensor | None = None, lambda2: float = 1.0, design: str = "combine",
               intra: Tensor | None = None, inter: Tensor | None = None) -> Tensor:
    """Combine classification and class terms per ``design``.

    ``cls``: L_cls. ``combine``: L_cls + lambda2 * L_class.
    ``intra``: L_cls - lambda2 * exp(L_intra). ``inter``: L_cls + lambda2 * exp(L_inter).
    """
    if design == "cls":
        return l_cls
    if design == "combine":
        return dc.add(l_cls, dc.scale(l_class, lambda2))
    if design == "intra":
        return dc.sub(l_cls, dc.scale(dc.exp(intra), lambda2))
    if design == "inter":
        return dc.add(l_cls, dc.scale(dc.exp(inter), lambda2))
    raise ConfigError(f"unknown loss design {design!r}; choose from {DESIGNS}")


@dataclass
class LossTerms:
    cls: Tensor
    intra: Tensor | None = None
    inter: Tensor | None = None
    class_: Tensor | None = None
    total: Tensor | None = None

    def floats(self) -> dict:
        def f(t):
            return float("nan") if t is None else t.item()
        return {"L_cls": f(self.cls), "L_intra": f(self.intra), "L_inter": f(self.inter),
                "L_class": f(self.class_), "L_total": f(self.total)}


def compute_losses(cfg: LossConfig, l_cls: Tensor, layers: Sequence[tuple[Tensor, Sequence[int], ClassReps]]
                   ) -> LossTerms:
    """Full objective over one or more refiners (one per layer when hierarchical).

    Per-layer intra/inter terms are averaged across layers before combining.
    """
    if cfg.class_loss_mode == "off" or cfg.design == "cls" or not layers:
        return LossTerms(l_cls, total=l_cls)
    intras, inters = [], []
    for hg_sub, labels, reps in layers:
        if cfg.class_loss_mode == "cosine":
            intras.append(intra_class_loss(hg_sub, labels, reps))
            inters.append(inter_class_loss(reps))
        else:
            a, b = l2_intra_inter(hg_sub, labels, reps, cfg.l2_norm)
            intras.append(a)
            inters.append(b)
    intra = dc.mean_all(dc.concat_rows(intras))
    inter = dc.mean_all(dc.concat_rows(inters))
    if cfg.class_loss_mode == "cosine":
        l_class = class_loss(intra, inter, cfg.lambda1)
    else:
        l_class = dc.exp(dc.sub(intra, inter))
    total = total_loss(l_cls, l_class, cfg.lambda2, cfg.design, intra, inter)
    return LossTerms(l_cls, intra, inter, l_class, total)
