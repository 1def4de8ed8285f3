"""Dense 2-D tensors with tape-based reverse-mode differentiation, plus Adam.

Every tensor is a float64 matrix. Operations record their inputs and a
backward rule on the output tensor; :func:`backward` linearises the recorded
graph into a :class:`Tape` (topological order) and replays it in reverse.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

COS_EPS = 1e-12

_ids = itertools.count()


class Tensor:
    """A float64 matrix that may participate in a differentiation graph."""

    __slots__ = ("values", "requires_grad", "grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> Tensor:
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return hadamard(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.node_id = next(_ids)
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    av, bv = a.values, b.values
    ga, gb = a.requires_grad, b.requires_grad
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T if ga else None, av.T @ g if gb else None))


def matmul_const(op, t: Tensor) -> Tensor:
    """``op @ t`` for a fixed left operand (dense array or scipy sparse matrix)."""
    if op.shape[1] != t.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {op.shape} x {t.shape}")
    out = op @ t.values
    return _make(np.asarray(out), (t,), lambda g: (np.asarray(op.T @ g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make(a.values - b.values, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("hadamard", a, b)
    av, bv = a.values, b.values
    ga, gb = a.requires_grad, b.requires_grad
    return _make(av * bv, (a, b), lambda g: (g * bv if ga else None, g * av if gb else None))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.values * c, (a,), lambda g: (g * c,))


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x c row vector to every row of an r x c tensor."""
    if bias.shape[0] != 1 or bias.shape[1] != a.shape[1]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit {a.shape}")
    return _make(a.values + bias.values, (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def add_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Add a 1 x 1 tensor to every entry of ``a``."""
    if s.shape != (1, 1):
        raise ShapeError(f"add_scalar: expected 1x1, got {s.shape}")
    return _make(a.values + s.values[0, 0], (a, s), lambda g: (g, np.array([[g.sum()]])))


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of an r x c tensor by entry i of an r x 1 column."""
    if s.shape != (a.shape[0], 1):
        raise ShapeError(f"scale_rows: column {s.shape} does not fit {a.shape}")
    av, sv = a.values, s.values
    return _make(av * sv, (a, s), lambda g: (g * sv, (g * av).sum(axis=1, keepdims=True)))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the 1 x 1 tensor ``s``."""
    if s.shape != (1, 1):
        raise ShapeError(f"scale_by: expected 1x1 factor, got {s.shape}")
    av, c = a.values, s.values[0, 0]
    return _make(av * c, (a, s), lambda g: (g * c, np.array([[(g * av).sum()]])))


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _make(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.values)
    return _make(y, (a,), lambda g: (g * y,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.values < 0):
        raise DomainError("sqrt of a negative entry")
    y = np.sqrt(a.values)

    def rule(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(y > 0, 0.5 / np.where(y > 0, y, 1.0), 0.0)
        return (g * d,)

    return _make(y, (a,), rule)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "hadamard": hadamard,
    "scale": scale,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
}


def elementwise(op: str, *operands):
    """Dispatch one of add, sub, hadamard, scale, relu, tanh, exp by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# structural


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    c1 = a.shape[1]
    return _make(np.hstack([a.values, b.values]), (a, b), lambda g: (g[:, :c1], g[:, c1:]))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DomainError("concat_rows of an empty list")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ, {p.shape} vs {parts[0].shape}")
    cuts = np.cumsum([0] + [p.shape[0] for p in parts])

    def rule(g):
        return tuple(g[cuts[i] : cuts[i + 1]] for i in range(len(parts)))

    return _make(np.vstack([p.values for p in parts]), tuple(parts), rule)


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.intp)
    n = a.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")

    def rule(g):
        out = np.zeros_like(a.values)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.values[idx], (a,), rule)


def transpose(a: Tensor) -> Tensor:
    return _make(a.values.T.copy(), (a,), lambda g: (g.T,))


def reduce(t: Tensor, mode: str = "mean", axis: str = "rows") -> Tensor:
    """Mean or sum over rows (giving 1 x c) or over all entries (giving 1 x 1)."""
    if t.values.size == 0:
        raise DomainError("reduce over an empty tensor")
    if mode not in ("mean", "sum") or axis not in ("rows", "all"):
        raise DomainError(f"reduce: unsupported mode/axis {mode}/{axis}")
    shape = t.shape
    if axis == "rows":
        count = shape[0]
        out = t.values.sum(axis=0, keepdims=True)
    else:
        count = t.values.size
        out = np.array([[t.values.sum()]])
    if mode == "mean":
        out = out / count
        factor = 1.0 / count
    else:
        factor = 1.0
    return _make(out, (t,), lambda g: (np.broadcast_to(g * factor, shape).copy(),))


def sum_all(t: Tensor) -> Tensor:
    return reduce(t, "sum", "all")


def mean_all(t: Tensor) -> Tensor:
    return reduce(t, "mean", "all")


# ---------------------------------------------------------------------------
# similarity and losses


def row_cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of matching rows, returned as an r x 1 column.

    A zero row yields similarity 0 through the ``COS_EPS`` guard.
    """
    _same_shape("cosine_similarity", u, v)
    if u.shape[1] < 1:
        raise ShapeError("cosine_similarity needs vectors of length >= 1")
    uv, vv = u.values, v.values
    dot = (uv * vv).sum(axis=1, keepdims=True)
    nu = np.sqrt((uv * uv).sum(axis=1, keepdims=True))
    nv = np.sqrt((vv * vv).sum(axis=1, keepdims=True))
    den = nu * nv + COS_EPS
    cos = dot / den

    def rule(g):
        safe_nu = np.where(nu > 0, nu, 1.0)
        safe_nv = np.where(nv > 0, nv, 1.0)
        gu = vv / den - dot * (nv / safe_nu) * uv / den**2
        gv = uv / den - dot * (nu / safe_nv) * vv / den**2
        return g * gu, g * gv

    return _make(cos, (u, v), rule)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    if u.shape[0] != 1 or v.shape[0] != 1:
        raise ShapeError(f"cosine_similarity takes 1 x m rows, got {u.shape} and {v.shape}")
    return row_cosine(u, v)


def euclidean(u: Tensor, v: Tensor) -> Tensor:
    """Euclidean distance of matching rows as an r x 1 column (gradient 0 at coincidence)."""
    _same_shape("euclidean", u, v)
    diff = u.values - v.values
    d = np.sqrt((diff * diff).sum(axis=1, keepdims=True))

    def rule(g):
        unit = np.where(d > 0, diff / np.where(d > 0, d, 1.0), 0.0)
        return g * unit, -g * unit

    return _make(d, (u, v), rule)


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Mean negative log-softmax at ``label`` over the rows of ``logits``.

    ``label`` is a class index for a single row, or one index per row.
    """
    z = logits.values
    rows, k = z.shape
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape[0] != rows:
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0]} labels for {rows} rows")
    if labels.dtype.kind not in "iu":
        raise DomainError(f"labels must be integers, got {labels.dtype}")
    if labels.min() < 0 or labels.max() >= k:
        raise DomainError(f"label out of range [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(rows), labels].mean()

    def rule(g):
        p = np.exp(logp)
        p[np.arange(rows), labels] -= 1.0
        return (g[0, 0] * p / rows,)

    return _make(np.array([[loss]]), (logits,), rule)


# ---------------------------------------------------------------------------
# tape and backward


@dataclass
class TapeEntry:
    output_id: int
    input_ids: tuple[int, ...]
    rule: Callable


@dataclass
class Tape:
    """Operations reachable from a loss, in topological (forward) order."""

    entries: list[TapeEntry] = field(default_factory=list)
    nodes: dict[int, Tensor] = field(default_factory=dict)

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        tape = cls()
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        for node in order:
            tape.nodes[node.node_id] = node
            if node._backward is not None:
                tape.entries.append(
                    TapeEntry(node.node_id, tuple(p.node_id for p in node._parents), node._backward)
                )
        return tape


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> Tape:
    """Populate ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Tensors in ``params`` that the loss does not reach receive an all-zero
    gradient. Gradients accumulate into existing ``.grad`` arrays.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output_id, None)
        if g is None:
            continue
        node = tape.nodes[entry.output_id]
        for parent, pg in zip(node._parents, entry.rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    for node_id, g in grads.items():
        node = tape.nodes.get(node_id)
        if node is None or node._backward is not None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
    return tape


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` with respect to ``x``."""
    grad = np.zeros_like(x.values)
    it = np.nditer(x.values, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x.values[i]
        x.values[i] = old + h
        up = f().item()
        x.values[i] = old - h
        down = f().item()
        x.values[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(max|a|, max|b|, floor)."""
    scale_ = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale_)


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    for x in inputs:
        x.grad = None
    backward(f(), inputs)
    worst = 0.0
    for x in inputs:
        analytic = x.grad.copy()
        numeric = numerical_gradient(f, x, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


# ---------------------------------------------------------------------------
# initialisation and Adam


def init_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Adam over a named parameter dict; reads ``.grad`` and clears it after stepping."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)
        self.zero_grad()
