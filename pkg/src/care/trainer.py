"""Model assembly, training epochs, evaluation, early stopping and 10-fold CV."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from . import diffcore as dc
from .diffcore import Adam, Tensor
from .encoders import (
    LAYER_KINDS,
    EncoderStack,
    GraphBatch,
    init_bias,
    init_weight,
    pool_matrix,
    segment_readout,
)
from .errors import CareError, ConfigError, NumericalError
from .graphio import Dataset, FoldPlan, GraphRecord, make_folds
from .losses import LossConfig, LossTerms, compute_losses
from .refiner import BAG_CAPACITY, REFINE_MODES, ClassAwareRefiner, ClassState
from .selector import SELECTOR_KINDS, SubgraphSelector

ARCHITECTURES = ("auto", "global", "hierarchical")
EVAL_CHUNK = 64


@dataclass
class ModelConfig:
    backbone: str = "gcn"
    architecture: str = "auto"
    depth: int = 4
    hidden: int = 146
    selector: str = "sagpool"
    pooling_ratio: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    lr: float = 1e-4
    batch_size: int = 20
    max_epochs: int = 1000
    patience: int = 25
    seed: int = 0
    care_enabled: bool = True
    design: str = "combine"
    class_loss_mode: str = "cosine"
    l2_norm: str = "mean"
    refine_mode: str = "class"
    bag_capacity: int = BAG_CAPACITY
    stratified_folds: bool = False

    def __post_init__(self):
        if self.backbone not in LAYER_KINDS:
            raise ConfigError(f"unknown backbone {self.backbone!r}; choose from {LAYER_KINDS}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "hierarchical" and self.backbone != "gin":
            raise ConfigError("the hierarchical architecture needs a per-layer readout backbone (gin)")
        if self.architecture == "global" and self.backbone == "gin":
            raise ConfigError("gin reads out every layer; use the hierarchical architecture")
        if self.selector not in SELECTOR_KINDS:
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.refine_mode not in REFINE_MODES:
            raise ConfigError(f"unknown refine mode {self.refine_mode!r}")
        for name in ("depth", "hidden", "batch_size", "max_epochs", "patience", "bag_capacity"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0.0 < self.pooling_ratio <= 1.0:
            raise ConfigError(f"pooling_ratio must lie in (0, 1], got {self.pooling_ratio}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        self.loss_config()  # validates lambdas, design and class-loss mode

    @property
    def resolved_architecture(self) -> str:
        if self.architecture != "auto":
            return self.architecture
        return "hierarchical" if self.backbone == "gin" else "global"

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lambda1, self.lambda2, self.class_loss_mode, self.design, self.l2_norm)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ForwardOutput:
    logits: Tensor
    embedding: Tensor                       # what the classifier head sees
    layers: list = field(default_factory=list)  # (hg_sub, classes used, ClassReps) per refiner


class CareModel:
    """Backbone encoder, optional selector + refiner per readout point, linear head."""

    def __init__(self, config: ModelConfig, in_dim: int, class_count: int):
        self.config = config
        self.class_count = class_count
        seed = config.seed
        self.encoder = EncoderStack(config.backbone, in_dim, config.hidden, config.depth, seed)
        self.hierarchical = config.resolved_architecture == "hierarchical"
        n_points = config.depth if self.hierarchical else 1
        self.selectors: list[SubgraphSelector] = []
        self.refiners: list[ClassAwareRefiner] = []
        if config.care_enabled:
            for k in range(n_points):
                self.selectors.append(SubgraphSelector(config.selector, config.hidden, config.pooling_ratio,
                                                       seed, prefix=f"sel.{k}"))
                self.refiners.append(ClassAwareRefiner(class_count, config.hidden, seed, prefix=f"ref.{k}",
                                                       capacity=config.bag_capacity, mode=config.refine_mode))
        self.head_params: dict[str, Tensor] = {}
        self.w_head = init_weight(self.head_params, seed, "head.w", config.hidden, class_count)
        self.b_head = init_bias(self.head_params, seed, "head.b", config.hidden, class_count)

    @property
    def params(self) -> dict[str, Tensor]:
        out = dict(self.encoder.params)
        for s in self.selectors:
            out.update(s.params)
        for r in self.refiners:
            out.update(r.params)
        out.update(self.head_params)
        return out

    @property
    def states(self) -> list[ClassState]:
        return [r.state for r in self.refiners]

    def head(self, x: Tensor) -> Tensor:
        return dc.add_bias(dc.matmul(x, self.w_head), self.b_head)

    def forward(self, batch: GraphBatch, training: bool, use_labels: bool = False) -> ForwardOutput:
        """Logits for every graph in ``batch``.

        ``training`` pushes subgraph representations into the class bags and
        refines with the true labels; otherwise class states are read only and
        refinement uses pseudo labels (or the true labels with ``use_labels``).
        """
        outs = self.encoder(batch)
        mode = self.encoder.readout_mode
        points = outs if self.hierarchical else outs[-1:]
        reps, layers = [], []
        for k, h in enumerate(points):
            hg = segment_readout(h, batch.pool(mode))
            if not self.refiners:
                reps.append(hg)
                continue
            sel = self.selectors[k](batch, h)
            hg_sub = segment_readout(sel.h_sub, sparse.csr_matrix(pool_matrix(sel.sizes, mode)))
            refined, class_reps, chosen = self.refiners[k].forward(hg, hg_sub, batch.labels, training, use_labels)
            reps.append(refined)
            layers.append((hg_sub, chosen, class_reps))
        emb = reps[0]
        for r in reps[1:]:
            emb = dc.add(emb, r)
        return ForwardOutput(self.head(emb), emb, layers)

    def snapshot(self) -> dict:
        return {
            "params": {k: t.values.copy() for k, t in self.params.items()},
            "states": [s.copy() for s in self.states],
        }

    def restore(self, snap: dict) -> None:
        for k, t in self.params.items():
            t.values[...] = snap["params"][k]
        for r, s in zip(self.refiners, snap["states"]):
            r.state = s.copy()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].values.tobytes())
        for s in self.states:
            h.update(s.fingerprint().encode())
        return h.hexdigest()


def make_batch(dataset: Dataset, indices: Sequence[int]) -> GraphBatch:
    return GraphBatch.from_graphs([dataset.graphs[i] for i in indices], ids=list(indices))


def forward_graph(graph: GraphRecord, model: CareModel, mode: str = "eval") -> ForwardOutput:
    """One graph through the model; ``mode`` is ``train`` or ``eval``."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    return model.forward(GraphBatch.from_graphs([graph]), training=mode == "train")


# ---------------------------------------------------------------------------
# epochs


@dataclass
class EpochStats:
    batches: int
    loss: float
    accuracy: float
    components: dict


class BatchCache:
    """Memoises block-diagonal batches keyed by their index tuple (eval sets repeat every epoch)."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: dict[tuple, GraphBatch] = {}

    def get(self, indices: Sequence[int]) -> GraphBatch:
        key = tuple(int(i) for i in indices)
        b = self._cache.get(key)
        if b is None:
            b = make_batch(self.dataset, key)
            self._cache[key] = b
        return b


def train_epoch(model: CareModel, dataset: Dataset, indices: Sequence[int], optimizer: Adam,
                rng: np.random.Generator, loss_cfg: LossConfig | None = None,
                batch_size: int | None = None) -> EpochStats:
    """Shuffle ``indices``, then one Adam step per batch on the batch objective."""
    loss_cfg = loss_cfg or model.config.loss_config()
    batch_size = batch_size or model.config.batch_size
    order = rng.permutation(np.asarray(indices))
    n_batches = int(np.ceil(len(order) / batch_size))
    totals = {"L_cls": 0.0, "L_intra": 0.0, "L_inter": 0.0, "L_class": 0.0, "L_total": 0.0}
    correct = 0
    for b in range(n_batches):
        idx = order[b * batch_size : (b + 1) * batch_size]
        batch = make_batch(dataset, idx)
        out = model.forward(batch, training=True)
        l_cls = dc.softmax_cross_entropy(out.logits, batch.labels)
        terms: LossTerms = compute_losses(loss_cfg, l_cls, out.layers)
        if not np.isfinite(terms.total.item()):
            raise NumericalError(f"non-finite training loss in batch {b}")
        optimizer.zero_grad()
        dc.backward(terms.total, optimizer.params.values())
        optimizer.step()
        for k, v in terms.floats().items():
            totals[k] += v * len(idx)
        correct += int((out.logits.values.argmax(axis=1) == batch.labels).sum())
    n = len(order)
    comps = {k: v / n for k, v in totals.items()}
    return EpochStats(n_batches, comps["L_total"], correct / n, comps)


def evaluate(model: CareModel, dataset: Dataset, indices: Sequence[int],
             cache: BatchCache | None = None) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) with class states read only."""
    indices = list(indices)
    if not indices:
        return float("nan"), float("nan")
    for s in model.states:
        s.frozen_matrix()  # raises if some class was never seen
    correct, loss = 0, 0.0
    for start in range(0, len(indices), EVAL_CHUNK):
        chunk = indices[start : start + EVAL_CHUNK]
        batch = cache.get(chunk) if cache else make_batch(dataset, chunk)
        out = model.forward(batch, training=False)
        loss += dc.softmax_cross_entropy(out.logits, batch.labels).item() * len(chunk)
        correct += int((out.logits.values.argmax(axis=1) == batch.labels).sum())
    return correct / len(indices), loss / len(indices)


def embed(model: CareModel, dataset: Dataset, indices: Sequence[int], use_labels: bool = True) -> np.ndarray:
    """Representations fed to the classifier head, one row per graph (state read only)."""
    rows = []
    indices = list(indices)
    for start in range(0, len(indices), EVAL_CHUNK):
        batch = make_batch(dataset, indices[start : start + EVAL_CHUNK])
        rows.append(model.forward(batch, training=False, use_labels=use_labels).embedding.values)
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# early stopping and cross-validation


class EarlyStopping:
    """Stop once ``patience`` epochs pass without a strictly lower validation loss."""

    def __init__(self, patience: int = 25, max_epochs: int = 1000):
        self.patience = patience
        self.max_epochs = max_epochs
        self.best = float("inf")
        self.best_epoch = 0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch's loss; True when it is a new best."""
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch >= self.max_epochs or self.epoch - self.best_epoch >= self.patience


def stop_epoch(val_losses: Sequence[float], patience: int = 25, max_epochs: int = 1000) -> tuple[int, int]:
    """(epoch training stops at, best epoch) for a validation-loss trace, epochs 1-based."""
    es = EarlyStopping(patience, max_epochs)
    for v in val_losses:
        es.update(v)
        if es.should_stop:
            break
    return es.epoch, es.best_epoch


TRACE_FIELDS = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc",
                "L_cls", "L_intra", "L_inter", "L_class", "L_total"]


@dataclass
class FoldResult:
    fold: int
    test_accuracy: float
    test_loss: float
    best_epoch: int
    stop_epoch: int
    trace: list[dict]
    wall_time: float = 0.0


@dataclass
class RunResult:
    folds: list[FoldResult]
    config: dict
    dataset: str

    @property
    def accuracies(self) -> list[float]:
        return [f.test_accuracy for f in self.folds]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def wall_time(self) -> float:
        return sum(f.wall_time for f in self.folds)

    def to_dict(self) -> dict:
        """Deterministic summary; wall time lives in :meth:`timing` so reruns compare byte-equal."""
        return {
            "dataset": self.dataset,
            "fold_accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "epochs": [f.stop_epoch for f in self.folds],
            "best_epochs": [f.best_epoch for f in self.folds],
            "test_losses": [f.test_loss for f in self.folds],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def timing(self) -> dict:
        return {"wall_time": self.wall_time, "per_fold": [f.wall_time for f in self.folds]}


def write_trace(trace: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for row in trace:
            w.writerow({k: row[k] for k in TRACE_FIELDS})


def train_fold(dataset: Dataset, config: ModelConfig, fold: dict,
               on_epoch: Callable[[int, dict], None] | None = None) -> tuple[FoldResult, CareModel]:
    """Fresh model and class state; early stopping on validation cross-entropy; best weights restored."""
    k = fold["fold"]
    t0 = time.perf_counter()
    model = CareModel(config, dataset.feature_dim, dataset.class_count)
    opt = Adam(model.params, lr=config.lr)
    rng = np.random.default_rng([config.seed, k])
    cache = BatchCache(dataset)
    es = EarlyStopping(config.patience, config.max_epochs)
    best = model.snapshot()
    trace = []
    while not es.should_stop:
        stats = train_epoch(model, dataset, fold["train"], opt, rng)
        for r in model.refiners:
            r.state.refresh(r.weights.rho)
        val_acc, val_loss = evaluate(model, dataset, fold["val"], cache)
        if es.update(val_loss):
            best = model.snapshot()
        row = {"epoch": es.epoch, "train_loss": stats.loss, "val_loss": val_loss,
               "train_acc": stats.accuracy, "val_acc": val_acc, **stats.components}
        trace.append(row)
        if on_epoch:
            on_epoch(k, row)
    model.restore(best)
    test_acc, test_loss = evaluate(model, dataset, fold["test"], cache)
    return FoldResult(k, test_acc, test_loss, es.best_epoch, es.epoch, trace,
                      time.perf_counter() - t0), model


def run_cv(dataset: Dataset, config: ModelConfig, plan: FoldPlan | None = None,
           folds: Sequence[int] | None = None, on_fold: Callable[[FoldResult, CareModel], None] | None = None,
           on_epoch: Callable[[int, dict], None] | None = None) -> RunResult:
    """10-fold cross-validation; ``folds`` restricts to a subset of fold indices."""
    plan = plan or make_folds(dataset, config.seed, config.stratified_folds)
    results = []
    for k in folds if folds is not None else range(len(plan)):
        try:
            res, model = train_fold(dataset, config, plan[k], on_epoch)
        except CareError as exc:
            raise type(exc)(f"fold {k} failed: {exc}") from exc
        results.append(res)
        if on_fold:
            on_fold(res, model)
    return RunResult(results, config.to_dict(), dataset.name)


def write_embeddings(path, ids: Sequence[int], labels: Sequence[int], vectors: np.ndarray) -> None:
    """CSV with header ``id,label,e0..e{m-1}``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + [f"e{j}" for j in range(vectors.shape[1])])
        for i, y, v in zip(ids, labels, vectors):
            w.writerow([int(i), int(y)] + [repr(float(x)) for x in v])
