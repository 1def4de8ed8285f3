import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from care import diffcore as dc
from care.diffcore import Tensor
from care.encoders import (
    EncoderStack,
    GinMLP,
    GraphBatch,
    gcn_layer,
    gin_layer,
    load_weights,
    readout,
    sage_layer,
    save_weights,
    segment_readout,
)
from care.errors import ConfigError, DomainError, FormatError, ShapeError
from care.graphio import GraphRecord, normalize_adjacency

import gradsuite

PATH2 = np.array([[0.0, 1.0], [1.0, 0.0]])
TRIANGLE = np.ones((3, 3)) - np.eye(3)


def identity_mlp(m):
    return lambda x: x


def random_graph(rng, n):
    a = np.triu((rng.random((n, n)) < 0.4).astype(float), 1)
    return a + a.T


def test_gcn_identity_weights_gives_propagation():
    h = Tensor([[1.0, 2.0], [3.0, -1.0]])
    a_hat = normalize_adjacency(PATH2)
    out = gcn_layer(a_hat, h, Tensor(np.eye(2)), activation=None)
    np.testing.assert_allclose(out.values, a_hat @ h.values)


def test_gcn_isolated_node_is_relu():
    out = gcn_layer(normalize_adjacency(np.zeros((1, 1))), Tensor([[-1.0, 2.0]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.values, [[0.0, 2.0]])


def test_gcn_matches_triple_loop():
    rng = np.random.default_rng(0)
    a_hat = normalize_adjacency(random_graph(rng, 5))
    h, w = rng.normal(size=(5, 3)), rng.normal(size=(3, 4))
    ah = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            ah[i, j] = sum(a_hat[i, k] * h[k, j] for k in range(5))
    ref = np.zeros((5, 4))
    for i in range(5):
        for j in range(4):
            ref[i, j] = sum(ah[i, k] * w[k, j] for k in range(3))
    out = gcn_layer(a_hat, Tensor(h), Tensor(w), activation=None)
    assert np.abs(out.values - ref).max() / np.abs(ref).max() < 1e-10


def test_sparse_and_dense_operators_agree():
    rng = np.random.default_rng(1)
    a_hat = normalize_adjacency(random_graph(rng, 6))
    h, w = Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(3, 2)))
    dense = gcn_layer(a_hat, h, w)
    sp = gcn_layer(sparse.csr_matrix(a_hat), h, w)
    np.testing.assert_allclose(dense.values, sp.values, atol=1e-14)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        gcn_layer(np.eye(3), Tensor(np.ones((2, 2))), Tensor(np.eye(2)))


def test_sage_isolated_node():
    w_self = Tensor([[2.0, 0.0], [0.0, -1.0]])
    out = sage_layer(np.zeros((1, 1)), Tensor([[1.0, 1.0]]), w_self, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.values, [[2.0, 0.0]])


def test_sage_path_sums_self_and_neighbour():
    h = Tensor([[1.0, 2.0], [3.0, 0.5]])
    out = sage_layer(PATH2, h, Tensor(np.eye(2)), Tensor(np.eye(2)))
    np.testing.assert_allclose(out.values, [[4.0, 2.5], [4.0, 2.5]])


def test_gin_examples():
    x = Tensor([[1.5, -0.5]])
    out = gin_layer(np.zeros((1, 1)), x, identity_mlp(2), 0.0, activation=None)
    np.testing.assert_array_equal(out.values, x.values)
    out = gin_layer(TRIANGLE, Tensor(np.ones((3, 1))), identity_mlp(1), 0.0, activation=None)
    np.testing.assert_array_equal(out.values, np.full((3, 1), 3.0))
    out = gin_layer(np.zeros((1, 1)), x, identity_mlp(2), 1.0, activation=None)
    np.testing.assert_array_equal(out.values, 2 * x.values)


def test_readout_examples():
    np.testing.assert_array_equal(readout(Tensor([[1.0, 2.0], [3.0, 4.0]]), "mean").values, [[2.0, 3.0]])
    row = Tensor([[1.0, -2.0]])
    for mode in ("mean", "sum"):
        np.testing.assert_array_equal(readout(row, mode).values, row.values)
    same = Tensor(np.tile([[1.0, 2.0]], (4, 1)))
    np.testing.assert_allclose(readout(same, "sum").values, 4 * readout(same, "mean").values)
    with pytest.raises(DomainError):
        readout(Tensor(np.zeros((0, 2))))


def _layer(kind, rng, a, h):
    m = h.shape[1]
    w = [Tensor(rng.normal(size=(m, m))) for _ in range(4)]
    if kind == "gcn":
        return gcn_layer(normalize_adjacency(a), h, w[0])
    if kind == "sage":
        return sage_layer(a, h, w[0], w[1])
    return gin_layer(a, h, GinMLP(w[0], None, w[1], None), Tensor([[0.3]]))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["gcn", "sage", "gin"]), st.integers(1, 8), st.integers(0, 10_000))
def test_permutation_equivariance(kind, n, seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, n)
    h = rng.normal(size=(n, 3))
    perm = rng.permutation(n)
    p = np.eye(n)[perm]
    out = _layer(kind, np.random.default_rng(seed), a, Tensor(h)).values
    out_p = _layer(kind, np.random.default_rng(seed), p @ a @ p.T, Tensor(p @ h)).values
    np.testing.assert_allclose(out_p, p @ out, atol=1e-9)
    r = readout(Tensor(out)).values
    np.testing.assert_allclose(readout(Tensor(out_p)).values, r, atol=1e-9)


@pytest.mark.parametrize("kind", ["gcn", "sage", "gin"])
def test_zero_weights_give_zeros(kind):
    rng = np.random.default_rng(0)
    stack = EncoderStack(kind, 3, hidden=4, depth=2)
    for t in stack.params.values():
        t.values[...] = 0.0
    batch = GraphBatch.from_graphs([GraphRecord(random_graph(rng, 4), rng.normal(size=(4, 3)), 0)])
    for out in stack(batch):
        assert not np.any(out.values)


@pytest.mark.parametrize("kind", ["gcn", "sage", "gin"])
def test_two_layer_stack_gradients(kind):
    rng = np.random.default_rng(5)
    graphs = [gradsuite.random_graph(rng, n, 3, 0) for n in (3, 5)]
    batch = GraphBatch.from_graphs(graphs)
    stack = EncoderStack(kind, 3, hidden=3, depth=2, seed=2)
    probe = Tensor(rng.normal(size=(2, 3)))
    pool = batch.pool(stack.readout_mode)

    def f():
        return dc.sum_all(dc.hadamard(segment_readout(stack(batch)[-1], pool), probe))

    assert dc.gradcheck(f, list(stack.params.values())) < gradsuite.TOL


def test_batch_equals_per_graph():
    rng = np.random.default_rng(3)
    graphs = [gradsuite.random_graph(rng, n, 3, 0) for n in (2, 4, 5)]
    stack = EncoderStack("sage", 3, hidden=4, depth=2)
    together = stack(GraphBatch.from_graphs(graphs))[-1].values
    alone = np.vstack([stack(GraphBatch.from_graphs([g]))[-1].values for g in graphs])
    np.testing.assert_allclose(together, alone, atol=1e-12)


def test_param_names_and_determinism():
    a = EncoderStack("gin", 3, hidden=4, depth=2, seed=9)
    b = EncoderStack("gin", 3, hidden=4, depth=2, seed=9)
    assert sorted(a.params) == sorted(b.params)
    assert "enc.1.eps" in a.params
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].values, b.params[k].values)


def test_bad_config():
    with pytest.raises(ConfigError):
        EncoderStack("gat", 3)
    with pytest.raises(ConfigError):
        EncoderStack("gcn", 3, depth=0)


def test_checkpoint_roundtrip(tmp_path):
    a = EncoderStack("sage", 3, hidden=4, depth=2, seed=1)
    path = save_weights(a.params, tmp_path / "w.json", extra={"note": "x"})
    b = EncoderStack("sage", 3, hidden=4, depth=2, seed=2)
    load_weights(path, b.params)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].values, b.params[k].values)


def test_checkpoint_rejects_other_formats(tmp_path):
    p = tmp_path / "w.json"
    p.write_text('{"format": "other", "version": 1, "tensors": {}}')
    with pytest.raises(FormatError):
        load_weights(p)
