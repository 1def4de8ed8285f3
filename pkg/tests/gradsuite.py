"""Seeded gradient-check instances shared by the unit and acceptance tests.

Each instance is ``(name, f, inputs)``: ``f()`` rebuilds a scalar loss from
scratch and ``inputs`` are the tensors to differentiate. Composed instances
restore the class state before every call so ``f`` is a pure function.
"""

from __future__ import annotations

import numpy as np

from care import diffcore as dc
from care.diffcore import Tensor
from care.encoders import GraphBatch
from care.graphio import GraphRecord
from care.losses import compute_losses
from care.trainer import CareModel, ModelConfig

TOL = 1e-4


def _t(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def _probe(rng, out: Tensor) -> Tensor:
    """Random linear functional of ``out`` so every entry's gradient is exercised."""
    w = Tensor(rng.normal(size=out.shape))
    return dc.sum_all(dc.hadamard(out, w))


def op_instance(kind: str, seed: int):
    rng = np.random.default_rng(seed)
    r, c, k = rng.integers(1, 5, size=3)
    probe = Tensor(rng.normal(size=(64, 64)))

    def lin(out):
        return dc.sum_all(dc.hadamard(out, Tensor(probe.values[: out.shape[0], : out.shape[1]])))

    a = _t(rng, r, c)
    if kind == "matmul":
        b = _t(rng, c, k)
        return lambda: lin(dc.matmul(a, b)), [a, b]
    if kind in ("add", "sub", "hadamard"):
        b = _t(rng, r, c)
        fn = getattr(dc, kind)
        return lambda: lin(fn(a, b)), [a, b]
    if kind == "scale":
        return lambda: lin(dc.scale(a, 1.7)), [a]
    if kind == "add_bias":
        b = _t(rng, 1, c)
        return lambda: lin(dc.add_bias(a, b)), [a, b]
    if kind == "add_scalar":
        s = _t(rng, 1, 1)
        return lambda: lin(dc.add_scalar(a, s)), [a, s]
    if kind == "scale_rows":
        s = _t(rng, r, 1)
        return lambda: lin(dc.scale_rows(a, s)), [a, s]
    if kind == "scale_by":
        s = _t(rng, 1, 1)
        return lambda: lin(dc.scale_by(a, s)), [a, s]
    if kind in ("relu", "tanh", "exp"):
        fn = getattr(dc, kind)
        return lambda: lin(fn(a)), [a]
    if kind == "sqrt":
        p = _t(rng, r, c, positive=True)
        return lambda: lin(dc.sqrt(p)), [p]
    if kind == "concat_cols":
        b = _t(rng, r, k)
        return lambda: lin(dc.concat_cols(a, b)), [a, b]
    if kind == "concat_rows":
        b = _t(rng, k, c)
        return lambda: lin(dc.concat_rows([a, b, a])), [a, b]
    if kind == "gather_rows":
        idx = rng.integers(0, r, size=5)
        return lambda: lin(dc.gather_rows(a, idx)), [a]
    if kind == "transpose":
        return lambda: lin(dc.transpose(a)), [a]
    if kind == "reduce":
        return lambda: lin(dc.add(dc.reduce(a, "mean", "rows"), dc.reduce(a, "sum", "rows"))), [a]
    if kind == "row_cosine":
        b = _t(rng, r, c + 1)
        a2 = _t(rng, r, c + 1)
        return lambda: lin(dc.row_cosine(a2, b)), [a2, b]
    if kind == "euclidean":
        b = _t(rng, r, c)
        return lambda: lin(dc.euclidean(a, b)), [a, b]
    if kind == "softmax_cross_entropy":
        logits = _t(rng, r, k + 1)
        labels = rng.integers(0, k + 1, size=r)
        return lambda: dc.softmax_cross_entropy(logits, labels), [logits]
    if kind == "matmul_const":
        op = rng.normal(size=(k, r))
        return lambda: lin(dc.matmul_const(op, a)), [a]
    raise KeyError(kind)


OP_KINDS = ("matmul", "add", "sub", "hadamard", "scale", "add_bias", "add_scalar", "scale_rows", "scale_by",
            "relu", "tanh", "exp", "sqrt", "concat_cols", "concat_rows", "gather_rows", "transpose",
            "reduce", "row_cosine", "euclidean", "softmax_cross_entropy", "matmul_const")


def random_graph(rng, n: int, in_dim: int, label: int) -> GraphRecord:
    adj = np.zeros((n, n))
    for i in range(1, n):  # a random tree keeps every graph connected
        j = rng.integers(0, i)
        adj[i, j] = adj[j, i] = 1.0
    extra = rng.integers(0, n)
    for _ in range(extra):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            adj[i, j] = adj[j, i] = 1.0
    return GraphRecord(adj, rng.normal(size=(n, in_dim)), int(label))


COMPOSED = [
    dict(backbone="gcn"),
    dict(backbone="sage"),
    dict(backbone="gin"),
    dict(backbone="gcn", design="intra"),
    dict(backbone="gcn", design="inter"),
    dict(backbone="gcn", class_loss_mode="l2"),
    dict(backbone="sage", class_loss_mode="l2", l2_norm="max"),
    dict(backbone="gcn", refine_mode="subgraph"),
    dict(backbone="gcn", selector="none"),
    dict(backbone="gcn", care_enabled=False),
]


def composed_instance(overrides: dict, seed: int, class_count: int = 3):
    """Encoder -> selector -> refiner -> class loss -> total loss on a tiny batch."""
    rng = np.random.default_rng(seed)
    in_dim = 3
    cfg = ModelConfig(hidden=4, depth=2, seed=seed, **overrides)
    labels = [c % class_count for c in range(4)]
    graphs = [random_graph(rng, int(rng.integers(3, 7)), in_dim, y) for y in labels]
    batch = GraphBatch.from_graphs(graphs)
    model = CareModel(cfg, in_dim, class_count)
    # warm the bags so hc mixes stored and live entries
    model.forward(GraphBatch.from_graphs([random_graph(rng, 5, in_dim, y) for y in range(class_count)]), True)
    saved = [s.copy() for s in model.states]
    loss_cfg = cfg.loss_config()

    def f():
        for r, s in zip(model.refiners, saved):
            r.state = s.copy()
        out = model.forward(batch, training=True)
        l_cls = dc.softmax_cross_entropy(out.logits, batch.labels)
        return compute_losses(loss_cfg, l_cls, out.layers).total

    return f, list(model.params.values())


def instances(count: int = 100, start_seed: int = 0):
    """At least ``count`` seeded instances: every op, then composed paths, cycling seeds."""
    out = []
    seed = start_seed
    while len(out) < count:
        for kind in OP_KINDS:
            out.append((f"{kind}[{seed}]", *op_instance(kind, seed)))
        for ov in COMPOSED:
            name = ",".join(f"{k}={v}" for k, v in ov.items())
            out.append((f"path({name})[{seed}]", *composed_instance(ov, seed)))
        seed += 1
    return out


def run(count: int = 100, start_seed: int = 0) -> list[tuple[str, float]]:
    return [(name, dc.gradcheck(f, inputs)) for name, f, inputs in instances(count, start_seed)]
