"""Class-aware refinement: per-class bags, set-encoded class representations,
refinement of graph representations and pseudo-labelling at evaluation time.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .encoders import init_bias, init_weight
from .errors import ConfigError, ContractError, ShapeError

BAG_CAPACITY = 64
REFINE_MODES = ("class", "subgraph")


class MLP:
    """Two affine layers with ReLU between: ``relu(x W1 + b1) W2 + b2``."""

    def __init__(self, params: dict, seed: int, prefix: str, in_dim: int, hidden: int, out_dim: int):
        self.w1 = init_weight(params, seed, f"{prefix}.w1", in_dim, hidden)
        self.b1 = init_bias(params, seed, f"{prefix}.b1", in_dim, hidden)
        self.w2 = init_weight(params, seed, f"{prefix}.w2", hidden, out_dim)
        self.b2 = init_bias(params, seed, f"{prefix}.b2", hidden, out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        z = dc.relu(dc.add_bias(dc.matmul(x, self.w1), self.b1))
        return dc.add_bias(dc.matmul(z, self.w2), self.b2)

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


class RefinerWeights:
    """Set-encoder MLP ``rho`` (m -> m) and transformation MLP ``trans`` (2m -> m)."""

    def __init__(self, width: int, seed: int = 0, prefix: str = "ref"):
        self.width = width
        self.params: dict[str, Tensor] = {}
        self.rho = MLP(self.params, seed, f"{prefix}.rho", width, width, width)
        self.trans = MLP(self.params, seed, f"{prefix}.trans", 2 * width, width, width)


@dataclass
class BagEntry:
    values: np.ndarray
    tag: object = None


_step_tags = itertools.count()


class ClassState:
    """Bounded per-class bags of detached subgraph representations and cached ``hc``."""

    def __init__(self, class_count: int, width: int, capacity: int = BAG_CAPACITY):
        self.class_count = class_count
        self.width = width
        self.capacity = capacity
        self.bags: list[deque[BagEntry]] = [deque(maxlen=capacity) for _ in range(class_count)]
        self.hc: dict[int, np.ndarray] = {}
        self.staleness = [0] * class_count
        self.training = True

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False

    def bag_matrix(self, i: int) -> np.ndarray:
        return np.vstack([e.values for e in self.bags[i]]) if self.bags[i] else np.zeros((0, self.width))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for i in range(self.class_count):
            h.update(self.bag_matrix(i).tobytes())
            h.update(b"|")
            if i in self.hc:
                h.update(self.hc[i].tobytes())
            h.update(b"#")
        return h.hexdigest()

    def copy(self) -> ClassState:
        return copy.deepcopy(self)

    def refresh(self, rho) -> None:
        """Recompute every cached ``hc`` from its bag with the current ``rho``."""
        for i in range(self.class_count):
            if self.bags[i]:
                self.hc[i] = rho(Tensor(self.bag_matrix(i).mean(axis=0, keepdims=True))).values.copy()

    def frozen_matrix(self) -> np.ndarray:
        missing = [i for i in range(self.class_count) if i not in self.hc]
        if missing:
            raise ConfigError(f"no class representation for classes {missing}; never seen in training")
        return np.vstack([self.hc[i] for i in range(self.class_count)])

    def to_dict(self) -> dict:
        return {
            "class_count": self.class_count,
            "capacity": self.capacity,
            "bag_sizes": [len(b) for b in self.bags],
            "hc": {str(i): self.hc[i].ravel().tolist() for i in sorted(self.hc)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def update_bag(state: ClassState, i: int, hg_sub: Tensor, tag=None) -> ClassState:
    """Append a detached copy of ``hg_sub`` to bag ``i`` (oldest evicted when full)."""
    if not state.training:
        raise ContractError("update_bag called while the class state is in eval mode")
    if not 0 <= i < state.class_count:
        raise ConfigError(f"class {i} outside [0, {state.class_count})")
    vals = hg_sub.values if isinstance(hg_sub, Tensor) else np.asarray(hg_sub, dtype=np.float64)
    if vals.shape != (1, state.width):
        raise ShapeError(f"bag entries are 1 x {state.width}, got {vals.shape}")
    state.bags[i].append(BagEntry(vals.copy(), tag))
    for j in range(state.class_count):
        state.staleness[j] = 0 if j == i else state.staleness[j] + 1
    return state


def _bag_mean(state: ClassState, i: int, live: dict) -> Tensor:
    """Mean of bag ``i`` where entries whose tag is in ``live`` use that live tensor."""
    bag = state.bags[i]
    const = np.zeros((1, state.width))
    live_terms = []
    for e in bag:
        if e.tag is not None and e.tag in live:
            live_terms.append(live[e.tag])
        else:
            const = const + e.values
    total = Tensor(const)
    for t in live_terms:
        total = dc.add(total, t)
    return dc.scale(total, 1.0 / len(bag))


def class_representation(state: ClassState, i: int, rho, live_rep: Tensor | None = None) -> Tensor:
    """``hc_i = rho(mean of bag i)``; ``live_rep`` stands in for the newest bag entry.

    With an empty bag, ``live_rep`` alone forms the bag (cold start).
    """
    bag = state.bags[i]
    if not bag:
        if live_rep is None:
            raise ConfigError(f"class {i} has an empty bag and no live representation")
        mean = live_rep
    elif live_rep is None:
        mean = Tensor(state.bag_matrix(i).mean(axis=0, keepdims=True))
    else:
        marker = object()
        newest = bag[-1]
        saved, newest.tag = newest.tag, marker
        try:
            mean = _bag_mean(state, i, {marker: live_rep})
        finally:
            newest.tag = saved
    hc = rho(mean)
    state.hc[i] = hc.values.copy()
    return hc


def refine(hg: Tensor, hc: Tensor, weights: RefinerWeights | None = None, trans=None) -> Tensor:
    """``Trans([hg | hc])`` row by row."""
    if hg.shape != hc.shape:
        raise ShapeError(f"refine: graph rep {hg.shape} and class rep {hc.shape} differ")
    trans = trans if trans is not None else weights.trans
    return trans(dc.concat_cols(hg, hc))


def pseudo_labels(hg_sub: np.ndarray, hc: np.ndarray) -> np.ndarray:
    """Row-wise argmax of cosine similarity to each class row; ties to the lower class."""
    sims = (hg_sub @ hc.T) / (
        np.linalg.norm(hg_sub, axis=1, keepdims=True) * np.linalg.norm(hc, axis=1)[None, :] + dc.COS_EPS
    )
    return np.argmax(sims, axis=1)


def pseudo_label(hg_sub: Tensor, state: ClassState) -> int:
    if state.training:
        raise ContractError("pseudo_label is an evaluation-mode operation")
    vals = hg_sub.values if isinstance(hg_sub, Tensor) else np.asarray(hg_sub, dtype=np.float64)
    return int(pseudo_labels(vals.reshape(1, -1), state.frozen_matrix())[0])


@dataclass
class ClassReps:
    """Class representations as matrix rows; ``classes[r]`` is the class of row ``r``."""

    matrix: Tensor
    classes: list[int]

    def row_of(self, c: int) -> int:
        return self.classes.index(c)

    def rows_for(self, labels: Sequence[int]) -> Tensor:
        index = {c: r for r, c in enumerate(self.classes)}
        return dc.gather_rows(self.matrix, [index[int(c)] for c in labels])


def train_class_reps(state: ClassState, rho, hg_sub: Tensor, labels: Sequence[int]) -> ClassReps:
    """Push a batch into the bags, then encode every non-empty bag.

    The batch's own entries enter the bag means through their live rows of
    ``hg_sub``, so gradients reach ``rho`` and everything upstream of ``hg_sub``.
    """
    step = next(_step_tags)
    live = {}
    for r, c in enumerate(labels):
        tag = (step, r)
        update_bag(state, int(c), Tensor(hg_sub.values[r : r + 1]), tag)
        live[tag] = dc.gather_rows(hg_sub, [r])
    classes = [i for i in range(state.class_count) if state.bags[i]]
    means = [_bag_mean(state, i, live) for i in classes]
    matrix = rho(dc.concat_rows(means))
    for r, i in enumerate(classes):
        state.hc[i] = matrix.values[r : r + 1].copy()
    # live tags only mean something within this step
    for i in classes:
        for e in state.bags[i]:
            if e.tag is not None and e.tag[0] == step:
                e.tag = None
    return ClassReps(matrix, classes)


def frozen_class_reps(state: ClassState) -> ClassReps:
    return ClassReps(Tensor(state.frozen_matrix()), list(range(state.class_count)))


class ClassAwareRefiner:
    """One refiner: weights plus the class state it owns."""

    def __init__(self, class_count: int, width: int, seed: int = 0, prefix: str = "ref",
                 capacity: int = BAG_CAPACITY, mode: str = "class"):
        if mode not in REFINE_MODES:
            raise ConfigError(f"unknown refine mode {mode!r}; choose from {REFINE_MODES}")
        self.weights = RefinerWeights(width, seed, prefix)
        self.state = ClassState(class_count, width, capacity)
        self.mode = mode

    @property
    def params(self) -> dict[str, Tensor]:
        return self.weights.params

    def forward(self, hg: Tensor, hg_sub: Tensor, labels: Sequence[int] | None, training: bool,
                use_labels: bool = False):
        """Refine a batch.

        Training pushes ``hg_sub`` into the bags and refines with the true
        class. Evaluation never touches the state: it refines with the class
        given by ``labels`` when ``use_labels`` is set, else with the pseudo
        label. Returns ``(hg_refined, class_reps, chosen_classes)``.
        """
        if training:
            self.state.train()
            reps = train_class_reps(self.state, self.weights.rho, hg_sub, labels)
            chosen = np.asarray(labels, dtype=int)
        else:
            self.state.eval()
            reps = frozen_class_reps(self.state)
            if use_labels:
                chosen = np.asarray(labels, dtype=int)
            else:
                chosen = pseudo_labels(hg_sub.values, reps.matrix.values)
        other = hg_sub if self.mode == "subgraph" else reps.rows_for(chosen)
        return refine(hg, other, trans=self.weights.trans), reps, chosen


def refiner_training_step(hg: Tensor, hg_sub: Tensor, state: ClassState, weights: RefinerWeights,
                          mode: str = "train", label: int | None = None):
    """One graph through the refiner; returns ``(hg_refined, hg_sub, chosen_class)``.

    ``train``: update bag ``label``, encode it with the live ``hg_sub``, refine.
    ``eval``: pseudo-label against the frozen class representations, refine.
    """
    if mode == "train":
        if label is None:
            raise ContractError("training step needs the ground-truth label")
        state.train()
        update_bag(state, label, hg_sub)
        hc = class_representation(state, label, weights.rho, live_rep=hg_sub)
        chosen = label
    elif mode == "eval":
        state.eval()
        chosen = pseudo_label(hg_sub, state)
        hc = Tensor(state.hc[chosen])
    else:
        raise ConfigError(f"unknown refiner mode {mode!r}")
    return refine(hg, hc, weights), hg_sub, chosen
