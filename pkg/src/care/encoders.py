"""Message-passing layers (GCN, GraphSAGE-mean, GIN), READOUT and the encoder stack."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import sparse

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DomainError, FormatError, ShapeError
from .graphio import GraphRecord, normalize_adjacency

LAYER_KINDS = ("gcn", "sage", "gin")
CHECKPOINT_FORMAT = "care-weights"
CHECKPOINT_VERSION = 1


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_nodes(op: str, adj, h: Tensor) -> None:
    n = adj.shape[0]
    if adj.shape != (n, n) or h.shape[0] != n:
        raise ShapeError(f"{op}: adjacency {adj.shape} does not match features {h.shape}")


def propagate(op, h: Tensor) -> Tensor:
    """``op @ h`` where ``op`` is a graph operator: a Tensor, dense array or sparse matrix."""
    if isinstance(op, Tensor):
        return dc.matmul(op, h)
    if not sparse.issparse(op):
        op = np.asarray(op, dtype=np.float64)
    return dc.matmul_const(op, h)


# ---------------------------------------------------------------------------
# layers


def gcn_layer(a_hat, h: Tensor, w: Tensor, bias: Tensor | None = None,
              activation: Callable[[Tensor], Tensor] | None = dc.relu) -> Tensor:
    """``activation(Â H W + b)``; pass ``activation=None`` for the linear map."""
    _check_nodes("gcn_layer", a_hat, h)
    out = dc.matmul(propagate(a_hat, h), w)
    if bias is not None:
        out = dc.add_bias(out, bias)
    return activation(out) if activation else out


def neighbor_mean_matrix(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalised adjacency; rows of isolated nodes stay zero."""
    deg = adjacency.sum(axis=1, keepdims=True)
    return np.divide(adjacency, deg, out=np.zeros_like(adjacency, dtype=np.float64), where=deg > 0)


def sage_layer(adjacency, h: Tensor, w_self: Tensor, w_neigh: Tensor, bias: Tensor | None = None,
               activation: Callable[[Tensor], Tensor] | None = dc.relu,
               mean_matrix: np.ndarray | None = None) -> Tensor:
    """``activation(H W_self + mean_{u in N(v)} H_u W_neigh + b)`` over the full neighbourhood."""
    _check_nodes("sage_layer", adjacency, h)
    if mean_matrix is None:
        raw = adjacency.values if isinstance(adjacency, Tensor) else adjacency
        mean_matrix = neighbor_mean_matrix(np.asarray(raw, dtype=np.float64))
    neigh = propagate(mean_matrix, h)
    out = dc.add(dc.matmul(h, w_self), dc.matmul(neigh, w_neigh))
    if bias is not None:
        out = dc.add_bias(out, bias)
    return activation(out) if activation else out


@dataclass
class GinMLP:
    w1: Tensor
    b1: Tensor | None
    w2: Tensor
    b2: Tensor | None

    def __call__(self, x: Tensor) -> Tensor:
        z = dc.matmul(x, self.w1)
        if self.b1 is not None:
            z = dc.add_bias(z, self.b1)
        z = dc.matmul(dc.relu(z), self.w2)
        if self.b2 is not None:
            z = dc.add_bias(z, self.b2)
        return z


def gin_layer(adjacency, h: Tensor, mlp: Callable[[Tensor], Tensor], eps,
              activation: Callable[[Tensor], Tensor] | None = dc.relu) -> Tensor:
    """``activation(MLP((1 + eps) H_v + sum_{u in N(v)} H_u))``.

    ``eps`` is a 1 x 1 tensor (learnable) or a plain number.
    """
    _check_nodes("gin_layer", adjacency, h)
    eps = _const(eps)
    agg = dc.add(dc.add(h, dc.scale_by(h, eps)), propagate(adjacency, h))
    out = mlp(agg)
    return activation(out) if activation else out


def readout(h: Tensor, mode: str = "mean") -> Tensor:
    if h.shape[0] == 0:
        raise DomainError("readout of an empty graph")
    if mode not in ("mean", "sum"):
        raise DomainError(f"unknown readout mode {mode!r}")
    return dc.reduce(h, mode, "rows")


def segment_readout(h: Tensor, pool: np.ndarray) -> Tensor:
    """Batched READOUT: ``pool`` is a (graphs x nodes) averaging or summing matrix."""
    return propagate(pool, h)


# ---------------------------------------------------------------------------
# batching


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i : i + k, i : i + k] = b
        i += k
    return out


def pool_matrix(sizes: Sequence[int], mode: str) -> np.ndarray:
    sizes = np.asarray(sizes)
    p = np.zeros((len(sizes), int(sizes.sum())))
    start = 0
    for g, k in enumerate(sizes):
        p[g, start : start + k] = 1.0 / k if mode == "mean" else 1.0
        start += k
    return p


class GraphBatch:
    """Several graphs packed as one block-diagonal graph."""

    def __init__(self, adjacency: np.ndarray, features: np.ndarray, sizes: Sequence[int],
                 labels: Sequence[int] | None = None, ids: Sequence[int] | None = None):
        self.adjacency = adjacency
        self.features = features
        self.sizes = np.asarray(sizes, dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)
        self.labels = None if labels is None else np.asarray(labels, dtype=int)
        self.ids = list(range(len(self.sizes))) if ids is None else list(ids)
        self._cache: dict = {}

    @classmethod
    def from_graphs(cls, graphs: Sequence[GraphRecord], ids: Sequence[int] | None = None) -> GraphBatch:
        return cls(
            _block_diag([g.adjacency for g in graphs]),
            np.vstack([g.features for g in graphs]),
            [g.node_count for g in graphs],
            [g.label for g in graphs],
            ids,
        )

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return int(self.sizes.sum())

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def a_hat(self) -> np.ndarray:
        return self._cached("a_hat", lambda: normalize_adjacency(self.adjacency))

    # CSR copies of the structural operators; block-diagonal batches are mostly zeros
    @property
    def a_hat_op(self):
        return self._cached("a_hat_op", lambda: sparse.csr_matrix(self.a_hat))

    @property
    def adjacency_op(self):
        return self._cached("adj_op", lambda: sparse.csr_matrix(self.adjacency))

    @property
    def mean_op(self):
        return self._cached("mean_op", lambda: sparse.csr_matrix(neighbor_mean_matrix(self.adjacency)))

    def pool(self, mode: str):
        return self._cached(("pool", mode), lambda: sparse.csr_matrix(pool_matrix(self.sizes, mode)))

    def induced(self, kept: np.ndarray, sizes: Sequence[int]) -> GraphBatch:
        """Sub-batch on global node indices ``kept`` (grouped by graph, ``sizes`` per graph)."""
        return GraphBatch(
            self.adjacency[np.ix_(kept, kept)],
            self.features[kept],
            sizes,
            self.labels,
            self.ids,
        )


# ---------------------------------------------------------------------------
# parameters


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, parameter name), so adding parameters never shifts others."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def init_weight(params: dict, seed: int, name: str, fan_in: int, fan_out: int) -> Tensor:
    t = dc.init_uniform(param_rng(seed, name), fan_in, fan_out, name=name)
    params[name] = t
    return t


def init_bias(params: dict, seed: int, name: str, fan_in: int, width: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    t = Tensor(param_rng(seed, name).uniform(-bound, bound, size=(1, width)), requires_grad=True, name=name)
    params[name] = t
    return t


class EncoderStack:
    """``depth`` message-passing layers of one kind, returning every layer's output."""

    def __init__(self, kind: str, in_dim: int, hidden: int = 146, depth: int = 4, seed: int = 0,
                 prefix: str = "enc"):
        if kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {kind!r}; choose from {LAYER_KINDS}")
        if depth < 1:
            raise ConfigError("encoder depth must be >= 1")
        self.kind = kind
        self.depth = depth
        self.hidden = hidden
        self.readout_mode = "sum" if kind == "gin" else "mean"
        self.params: dict[str, Tensor] = {}
        self.widths = [in_dim] + [hidden] * depth
        for l in range(depth):
            fi, fo = self.widths[l], self.widths[l + 1]
            p = f"{prefix}.{l}"
            if kind == "gcn":
                init_weight(self.params, seed, f"{p}.w", fi, fo)
                init_bias(self.params, seed, f"{p}.b", fi, fo)
            elif kind == "sage":
                init_weight(self.params, seed, f"{p}.w_self", fi, fo)
                init_weight(self.params, seed, f"{p}.w_neigh", fi, fo)
                init_bias(self.params, seed, f"{p}.b", fi, fo)
            else:
                init_weight(self.params, seed, f"{p}.w1", fi, fo)
                init_bias(self.params, seed, f"{p}.b1", fi, fo)
                init_weight(self.params, seed, f"{p}.w2", fo, fo)
                init_bias(self.params, seed, f"{p}.b2", fo, fo)
                self.params[f"{p}.eps"] = Tensor([[0.0]], requires_grad=True, name=f"{p}.eps")
        self.prefix = prefix

    def layer(self, l: int, batch: GraphBatch, h: Tensor) -> Tensor:
        p = self.params
        k = f"{self.prefix}.{l}"
        if self.kind == "gcn":
            return gcn_layer(batch.a_hat_op, h, p[f"{k}.w"], p[f"{k}.b"])
        if self.kind == "sage":
            return sage_layer(batch.adjacency_op, h, p[f"{k}.w_self"], p[f"{k}.w_neigh"], p[f"{k}.b"],
                              mean_matrix=batch.mean_op)
        mlp = GinMLP(p[f"{k}.w1"], p[f"{k}.b1"], p[f"{k}.w2"], p[f"{k}.b2"])
        return gin_layer(batch.adjacency_op, h, mlp, p[f"{k}.eps"])

    def __call__(self, batch: GraphBatch) -> list[Tensor]:
        h = Tensor(batch.features)
        outs = []
        for l in range(self.depth):
            h = self.layer(l, batch, h)
            outs.append(h)
        return outs


# ---------------------------------------------------------------------------
# checkpoints


def save_weights(params: Mapping[str, Tensor], path, extra: dict | None = None) -> Path:
    """JSON manifest: versioned header plus every named tensor with its shape."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "tensors": {
            name: {"shape": list(t.shape), "values": t.values.ravel().tolist()}
            for name, t in sorted(params.items())
        },
    }
    path = Path(path)
    path.write_text(json.dumps(doc))
    return path


def load_weights(path, params: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
    """Read a manifest; when ``params`` is given, copy values into it in place."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    loaded = {
        name: Tensor(np.array(entry["values"], dtype=np.float64).reshape(entry["shape"]), requires_grad=True,
                     name=name)
        for name, entry in doc["tensors"].items()
    }
    if params is not None:
        for name, t in params.items():
            if name not in loaded:
                raise FormatError(f"{path}: checkpoint lacks tensor {name}")
            if loaded[name].shape != t.shape:
                raise ShapeError(f"{path}: tensor {name} has shape {loaded[name].shape}, expected {t.shape}")
            t.values[...] = loaded[name].values
    return loaded
