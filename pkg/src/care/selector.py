"""Subgraph selection: SAGPool-style top-k scoring and the whole-graph pass-through."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .encoders import GraphBatch, init_weight, propagate
from .errors import ConfigError, ShapeError

SELECTOR_KINDS = ("sagpool", "none")


def keep_count(n: int, ratio: float) -> int:
    # round before ceil so 0.1 * 30 does not become 4
    return max(1, math.ceil(round(ratio * n, 9)))


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties to the lower index, returned ascending."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:k])


@dataclass
class Selection:
    h_sub: Tensor
    kept: np.ndarray          # global node indices, ascending within each graph
    sizes: np.ndarray         # kept nodes per graph
    batch: GraphBatch         # induced sub-batch on the raw adjacency

    @property
    def a_sub(self) -> np.ndarray:
        return self.batch.adjacency


def _sagpool(a_hat, h: Tensor, w: Tensor, ratio: float, sizes=None):
    """Top-k per graph on scores ``Â H w``; kept rows of ``H`` are gated by ``tanh(score)``.

    ``sizes`` splits a block-diagonal batch into graphs. Returns
    ``(kept, H_sub, kept_sizes)``.
    """
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"pooling ratio must lie in (0, 1], got {ratio}")
    n = h.shape[0]
    if a_hat.shape != (n, n):
        raise ShapeError(f"sagpool_select: adjacency {a_hat.shape} does not match features {h.shape}")
    if w.shape != (h.shape[1], 1):
        raise ShapeError(f"sagpool_select: score weights {w.shape}, expected {(h.shape[1], 1)}")
    scores = dc.matmul(propagate(a_hat, h), w)
    if sizes is None:
        sizes = [n]
    kept_parts, kept_sizes = [], []
    start = 0
    for size in sizes:
        k = keep_count(int(size), ratio)
        kept_parts.append(start + top_k(scores.values[start : start + size, 0], k))
        kept_sizes.append(k)
        start += size
    kept = np.concatenate(kept_parts)
    gate = dc.tanh(dc.gather_rows(scores, kept))
    h_sub = dc.scale_rows(dc.gather_rows(h, kept), gate)
    return kept, h_sub, np.asarray(kept_sizes)


def sagpool_select(a_hat, h: Tensor, w: Tensor, ratio: float = 0.5, adjacency=None):
    """Select one graph's top-scoring nodes; returns ``(A_sub, H_sub, kept)``.

    ``A_sub`` is the induced raw adjacency. When ``adjacency`` is omitted it
    is recovered from the off-diagonal support of ``Â``.
    """
    a_vals = a_hat.values if isinstance(a_hat, Tensor) else np.asarray(a_hat, dtype=np.float64)
    if adjacency is None:
        adjacency = (a_vals > 0).astype(np.float64)
        np.fill_diagonal(adjacency, 0.0)
    kept, h_sub, _ = _sagpool(a_hat, h, w, ratio)
    return np.asarray(adjacency)[np.ix_(kept, kept)], h_sub, kept


class SubgraphSelector:
    """Selector bound to its own score weights (``sagpool``) or none at all."""

    def __init__(self, kind: str = "sagpool", width: int = 146, ratio: float = 0.5, seed: int = 0,
                 prefix: str = "sel"):
        if kind not in SELECTOR_KINDS:
            raise ConfigError(f"unknown selector {kind!r}; choose from {SELECTOR_KINDS}")
        if not 0.0 < ratio <= 1.0:
            raise ConfigError(f"pooling ratio must lie in (0, 1], got {ratio}")
        self.kind = kind
        self.ratio = ratio
        self.params: dict[str, Tensor] = {}
        if kind == "sagpool":
            self.w = init_weight(self.params, seed, f"{prefix}.w", width, 1)

    def __call__(self, batch: GraphBatch, h: Tensor) -> Selection:
        if self.kind == "none":
            kept = np.arange(batch.num_nodes)
            return Selection(h, kept, batch.sizes, batch)
        kept, h_sub, sizes = _sagpool(batch.a_hat_op, h, self.w, self.ratio, batch.sizes)
        return Selection(h_sub, kept, sizes, batch.induced(kept, sizes))


def none_select(adjacency, h: Tensor):
    """Whole-graph pass-through: ``(A, H, 0..n-1)``."""
    return adjacency, h, np.arange(h.shape[0])
