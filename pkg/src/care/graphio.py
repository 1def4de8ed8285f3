"""TUDataset text-format parsing, node features, adjacency normalisation and folds."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError

FEATURE_POLICIES = ("onehot_label", "degree_onehot", "constant")
DEGREE_CAP = 64
N_FOLDS = 10

_SPLIT = re.compile(r"[,\s]+")


@dataclass
class GraphRecord:
    adjacency: np.ndarray
    features: np.ndarray
    label: int
    node_labels: np.ndarray | None = None

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())


@dataclass
class Dataset:
    name: str
    graphs: list[GraphRecord]
    class_count: int
    feature_policy: str = "onehot_label"
    label_values: list = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].features.shape[1]

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs])

    def stats(self) -> dict:
        nodes = np.array([g.node_count for g in self.graphs])
        edges = np.array([g.edge_count for g in self.graphs])
        return {
            "name": self.name,
            "graphs": len(self.graphs),
            "classes": self.class_count,
            "avg_nodes": float(nodes.mean()),
            "avg_edges": float(edges.mean()),
            "class_histogram": np.bincount(self.labels, minlength=self.class_count).tolist(),
            "feature_dim": self.feature_dim,
            "feature_policy": self.feature_policy,
        }


def _read_rows(path: Path, width: int | None, kind=int) -> list[list]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            tokens = [t for t in _SPLIT.split(line) if t]
            if width is not None and len(tokens) != width:
                raise FormatError(f"{path.name}:{lineno}: expected {width} fields, got {len(tokens)}")
            try:
                rows.append([kind(t) for t in tokens])
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: non-numeric token in {line!r}") from None
    return rows


def _required(directory: Path, name: str, suffix: str) -> Path:
    path = directory / f"{name}_{suffix}.txt"
    if not path.is_file():
        raise FileNotFoundError(f"missing TUDataset file {path}")
    return path


def parse_tudataset(directory, name: str, feature_policy: str | None = None) -> Dataset:
    """Read ``{name}_A.txt``, ``_graph_indicator``, ``_graph_labels`` and optional node files.

    Node indices in the files are 1-based. Edges are symmetrised and
    deduplicated, self-loops dropped. Graph labels are remapped to
    ``0..K-1`` in sorted order of the raw values. When ``feature_policy`` is
    None, ``onehot_label`` is used if node labels exist, else ``degree_onehot``.
    """
    directory = Path(directory)
    edges = _read_rows(_required(directory, name, "A"), 2)
    indicator = np.array([r[0] for r in _read_rows(_required(directory, name, "graph_indicator"), 1)])
    raw_labels = [r[0] for r in _read_rows(_required(directory, name, "graph_labels"), 1)]

    node_label_path = directory / f"{name}_node_labels.txt"
    node_labels = None
    if node_label_path.is_file():
        node_labels = np.array([r[0] for r in _read_rows(node_label_path, 1)])
        if len(node_labels) != len(indicator):
            raise FormatError(f"{node_label_path.name}: {len(node_labels)} rows for {len(indicator)} nodes")
    attr_path = directory / f"{name}_node_attributes.txt"
    node_attrs = None
    if attr_path.is_file():
        node_attrs = np.array(_read_rows(attr_path, None, float), dtype=np.float64)
        if len(node_attrs) != len(indicator):
            raise FormatError(f"{attr_path.name}: {len(node_attrs)} rows for {len(indicator)} nodes")

    n_graphs = len(raw_labels)
    if indicator.min() < 1 or indicator.max() != n_graphs:
        raise FormatError(f"{name}_graph_indicator.txt references graphs outside 1..{n_graphs}")
    if np.any(np.diff(indicator) < 0):
        raise FormatError(f"{name}_graph_indicator.txt: nodes are not grouped by graph")
    # first node (0-based) of each graph and its size
    counts = np.bincount(indicator - 1, minlength=n_graphs)
    if np.any(counts == 0):
        raise FormatError(f"graph {int(np.argmin(counts)) + 1} has no nodes")
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])

    adjs = [np.zeros((c, c), dtype=np.float64) for c in counts]
    n_nodes = len(indicator)
    for lineno, (u, v) in enumerate(edges, 1):
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise FormatError(f"{name}_A.txt:{lineno}: node id out of range")
        gu, gv = indicator[u - 1], indicator[v - 1]
        if gu != gv:
            raise FormatError(f"{name}_A.txt:{lineno}: edge ({u}, {v}) crosses graphs {gu} and {gv}")
        if u == v:
            continue
        off = offsets[gu - 1]
        a = adjs[gu - 1]
        a[u - 1 - off, v - 1 - off] = 1.0
        a[v - 1 - off, u - 1 - off] = 1.0

    label_values = sorted(set(raw_labels))
    remap = {v: i for i, v in enumerate(label_values)}

    if feature_policy is None:
        feature_policy = "onehot_label" if node_labels is not None else "degree_onehot"
    per_graph_labels = None
    if node_labels is not None:
        per_graph_labels = [node_labels[o : o + c] for o, c in zip(offsets, counts)]
    features = build_features(adjs, per_graph_labels, feature_policy)
    if node_attrs is not None:
        features = [
            np.hstack([f, node_attrs[o : o + c]]) for f, o, c in zip(features, offsets, counts)
        ]

    graphs = [
        GraphRecord(
            adjacency=a,
            features=f,
            label=remap[raw],
            node_labels=None if per_graph_labels is None else per_graph_labels[i],
        )
        for i, (a, f, raw) in enumerate(zip(adjs, features, raw_labels))
    ]
    return Dataset(name, graphs, len(label_values), feature_policy, label_values)


def build_features(adjacencies, node_labels, policy: str) -> list[np.ndarray]:
    """Node feature matrices for each graph under ``policy``.

    ``onehot_label`` one-hot encodes the distinct node labels seen across the
    whole dataset, ``degree_onehot`` one-hot encodes min(degree, 63), and
    ``constant`` gives a single all-ones column.
    """
    if policy not in FEATURE_POLICIES:
        raise ConfigError(f"unknown feature policy {policy!r}; choose from {FEATURE_POLICIES}")
    if policy == "constant":
        return [np.ones((a.shape[0], 1)) for a in adjacencies]
    if policy == "onehot_label":
        if node_labels is None:
            raise ConfigError("feature policy onehot_label needs a node-label file")
        values = np.unique(np.concatenate([np.asarray(l) for l in node_labels]))
        index = {v: i for i, v in enumerate(values.tolist())}
        out = []
        for labels in node_labels:
            f = np.zeros((len(labels), len(values)))
            f[np.arange(len(labels)), [index[v] for v in np.asarray(labels).tolist()]] = 1.0
            out.append(f)
        return out
    degrees = [a.sum(axis=1).astype(int) for a in adjacencies]
    width = min(max(int(d.max(initial=0)) for d in degrees) + 1, DEGREE_CAP)
    out = []
    for d in degrees:
        f = np.zeros((len(d), width))
        f[np.arange(len(d)), np.minimum(d, width - 1)] = 1.0
        out.append(f)
    return out


def write_tudataset(dataset: Dataset, directory, name: str | None = None) -> Path:
    """Serialise back to the TUDataset text layout (edges listed in both directions)."""
    name = name or dataset.name
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, nl_lines = [], [], []
    offset = 0
    for gi, g in enumerate(dataset.graphs, 1):
        for u, v in zip(*np.nonzero(g.adjacency)):
            a_lines.append(f"{u + 1 + offset}, {v + 1 + offset}")
        ind_lines.extend([str(gi)] * g.node_count)
        if g.node_labels is not None:
            nl_lines.extend(str(int(x)) for x in g.node_labels)
        offset += g.node_count
    values = dataset.label_values or list(range(dataset.class_count))
    (directory / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text(
        "\n".join(str(values[g.label]) for g in dataset.graphs) + "\n"
    )
    if nl_lines:
        (directory / f"{name}_node_labels.txt").write_text("\n".join(nl_lines) + "\n")
    return directory


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalisation with self-loops, D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError("adjacency is not symmetric")
    a_hat = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d[:, None] * d[None, :]


@dataclass
class FoldPlan:
    folds: list[dict]
    seed: int
    stratified: bool = False

    def to_json(self) -> str:
        return json.dumps(self.folds)

    def __len__(self) -> int:
        return len(self.folds)

    def __getitem__(self, k: int) -> dict:
        return self.folds[k]


def make_folds(dataset, seed: int, stratified: bool = False) -> FoldPlan:
    """Ten folds: fold k is test, fold k+1 (mod 10) validation, the rest train.

    Indices are shuffled with ``seed`` and cut into ten contiguous chunks. With
    ``stratified`` each class is shuffled separately and dealt round-robin so
    every chunk gets a near-equal share of each class.
    """
    n = len(dataset)
    if n < N_FOLDS:
        raise ConfigError(f"need at least {N_FOLDS} graphs for {N_FOLDS}-fold CV, got {n}")
    rng = np.random.default_rng(seed)
    if stratified:
        labels = dataset.labels
        order = []
        for c in np.unique(labels):
            order.extend(rng.permutation(np.flatnonzero(labels == c)).tolist())
        chunks = [order[k::N_FOLDS] for k in range(N_FOLDS)]
    else:
        perm = rng.permutation(n).tolist()
        chunks = [list(c) for c in np.array_split(np.array(perm), N_FOLDS)]
        chunks = [[int(i) for i in c] for c in chunks]
    folds = []
    for k in range(N_FOLDS):
        v = (k + 1) % N_FOLDS
        train = sorted(i for j, c in enumerate(chunks) if j not in (k, v) for i in c)
        folds.append({"fold": k, "train": train, "val": sorted(chunks[v]), "test": sorted(chunks[k])})
    return FoldPlan(folds, seed, stratified)
