from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from care.errors import ConfigError, ContractError, FormatError
from care.graphio import (
    build_features,
    make_folds,
    normalize_adjacency,
    parse_tudataset,
    write_tudataset,
)

DATA = Path(__file__).parent / "data"


def write_toy(directory: Path, name="TOY", a="1, 2\n", indicator="1\n1\n2\n", labels="5\n-1\n", node_labels=None):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text(a)
    (directory / f"{name}_graph_indicator.txt").write_text(indicator)
    (directory / f"{name}_graph_labels.txt").write_text(labels)
    if node_labels is not None:
        (directory / f"{name}_node_labels.txt").write_text(node_labels)
    return directory


@pytest.fixture(scope="module")
def mutag():
    return parse_tudataset(DATA / "MUTAG", "MUTAG")


def test_toy_fixture(tmp_path):
    ds = parse_tudataset(write_toy(tmp_path), "TOY")
    assert [g.node_count for g in ds.graphs] == [2, 1]
    assert ds.graphs[0].edge_count == 1
    # labels remapped in sorted order of the raw values
    assert [g.label for g in ds.graphs] == [1, 0]
    assert ds.feature_policy == "degree_onehot"


def test_crlf_and_whitespace_tolerated(tmp_path):
    ds = parse_tudataset(write_toy(tmp_path, a="1 2\r\n2,1\r\n", indicator="1\r\n1\r\n2\r\n"), "TOY")
    assert ds.graphs[0].edge_count == 1


def test_self_loops_dropped_and_symmetric(tmp_path):
    ds = parse_tudataset(write_toy(tmp_path, a="1, 1\n2, 1\n"), "TOY")
    a = ds.graphs[0].adjacency
    np.testing.assert_array_equal(a, [[0, 1], [1, 0]])


def test_missing_file_names_it(tmp_path):
    write_toy(tmp_path)
    (tmp_path / "TOY_graph_labels.txt").unlink()
    with pytest.raises(FileNotFoundError, match="TOY_graph_labels"):
        parse_tudataset(tmp_path, "TOY")


def test_edge_out_of_graph_reports_line(tmp_path):
    write_toy(tmp_path, a="1, 2\n2, 3\n")
    with pytest.raises(FormatError, match=":2:"):
        parse_tudataset(tmp_path, "TOY")


def test_non_integer_token(tmp_path):
    write_toy(tmp_path, a="1, x\n")
    with pytest.raises(FormatError, match="non-numeric"):
        parse_tudataset(tmp_path, "TOY")


def test_mutag_statistics(mutag):
    st_ = mutag.stats()
    assert st_["graphs"] == 188
    assert st_["classes"] == 2
    assert st_["avg_nodes"] == pytest.approx(17.93, abs=0.01)
    assert st_["avg_edges"] == pytest.approx(19.79, abs=0.01)


def test_mutag_histogram_matches_raw_recount(mutag):
    raw = [int(x) for x in (DATA / "MUTAG" / "MUTAG_graph_labels.txt").read_text().split()]
    values, counts = np.unique(raw, return_counts=True)
    assert mutag.stats()["class_histogram"] == counts.tolist()
    assert sorted(counts.tolist()) == [63, 125]


def test_mutag_graph_invariants(mutag):
    for g in mutag.graphs:
        a = g.adjacency
        assert np.array_equal(a, a.T)
        assert not np.any(np.diag(a))
        assert g.features.shape == (g.node_count, mutag.feature_dim)


def test_features_onehot():
    f = build_features([np.zeros((3, 3))], [np.array([0, 1, 0])], "onehot_label")
    np.testing.assert_array_equal(f[0], [[1, 0], [0, 1], [1, 0]])


def test_features_constant():
    f = build_features([np.zeros((3, 3))], None, "constant")
    np.testing.assert_array_equal(f[0], np.ones((3, 1)))


def test_features_degree_triangle():
    tri = np.ones((3, 3)) - np.eye(3)
    f = build_features([tri], None, "degree_onehot")[0]
    assert np.all(f[:, 2] == 1) and f.sum() == 3


def test_features_onehot_without_labels():
    with pytest.raises(ConfigError):
        build_features([np.zeros((2, 2))], None, "onehot_label")


def test_normalize_examples():
    np.testing.assert_allclose(normalize_adjacency(np.zeros((1, 1))), [[1.0]])
    np.testing.assert_allclose(normalize_adjacency(np.array([[0, 1], [1, 0]])), [[0.5, 0.5], [0.5, 0.5]])
    tri = np.ones((3, 3)) - np.eye(3)
    np.testing.assert_allclose(normalize_adjacency(tri), np.full((3, 3), 1 / 3))


def test_normalize_rejects_asymmetric():
    with pytest.raises(ContractError):
        normalize_adjacency(np.array([[0, 1], [0, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_normalize_symmetric_and_bounded(n, seed):
    rng = np.random.default_rng(seed)
    a = np.triu((rng.random((n, n)) < 0.4).astype(float), 1)
    a = a + a.T
    out = normalize_adjacency(a)
    np.testing.assert_allclose(out, out.T)
    assert np.all(out.sum(axis=1) <= np.sqrt(n) + 1e-12)


def test_roundtrip(mutag, tmp_path):
    write_tudataset(mutag, tmp_path)
    back = parse_tudataset(tmp_path, "MUTAG")
    assert len(back) == len(mutag)
    for g, h in zip(mutag.graphs, back.graphs):
        np.testing.assert_array_equal(g.adjacency, h.adjacency)
        assert g.label == h.label
        np.testing.assert_array_equal(g.features, h.features)


class _Sized:
    def __init__(self, n, labels=None):
        self.n = n
        self.labels = np.zeros(n, dtype=int) if labels is None else labels

    def __len__(self):
        return self.n


def test_folds_twenty_graphs():
    plan = make_folds(_Sized(20), seed=0)
    for f in plan.folds:
        assert (len(f["train"]), len(f["val"]), len(f["test"])) == (16, 2, 2)


@pytest.mark.parametrize("n", [10, 23, 188])
@pytest.mark.parametrize("stratified", [False, True])
def test_fold_partition_invariants(n, stratified):
    labels = np.arange(n) % 3
    plan = make_folds(_Sized(n, labels), seed=4, stratified=stratified)
    tests = []
    for k, f in enumerate(plan.folds):
        parts = [set(f["train"]), set(f["val"]), set(f["test"])]
        assert set().union(*parts) == set(range(n))
        assert sum(len(p) for p in parts) == n
        assert f["val"] == plan.folds[(k + 1) % 10]["test"]
        tests.extend(f["test"])
    assert sorted(tests) == list(range(n))


def test_folds_deterministic():
    a = make_folds(_Sized(50), seed=7)
    b = make_folds(_Sized(50), seed=7)
    assert a.to_json() == b.to_json()
    assert a.to_json() != make_folds(_Sized(50), seed=8).to_json()


def test_folds_need_ten_graphs():
    with pytest.raises(ConfigError):
        make_folds(_Sized(9), seed=0)
