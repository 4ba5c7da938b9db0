import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privcdr.datasets import table_from_records
from privcdr.graph import GraphError, build_graph, init_id_embeddings, propagate
from privcdr.numeric import Parameter, check_gradients, reduce_sum, mul


def dense_norm(edges, m, n):
    """Oracle: D^-1/2 A D^-1/2 built densely."""
    a = np.zeros((m + n, m + n))
    for u, i in edges:
        a[u, m + i] = a[m + i, u] = 1.0
    d = a.sum(axis=1)
    inv = np.where(d > 0, 1 / np.sqrt(np.maximum(d, 1e-300)), 0.0)
    return inv[:, None] * a * inv[None, :]


def dense_propagate(norm, e0, layers):
    out, cur = [e0], e0
    for _ in range(layers):
        cur = norm @ cur
        out.append(cur)
    return np.hstack(out)


def random_graph(rng, m, n, p=0.3):
    """Random edges with every node covered."""
    adj = rng.random((m, n)) < p
    adj[np.arange(m), rng.integers(0, n, m)] = True
    adj[rng.integers(0, m, n), np.arange(n)] = True
    return np.argwhere(adj)


def test_single_edge():
    g = build_graph([[0, 0]], 1, 1)
    assert g.norm_adj.toarray().tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_two_users_one_item():
    g = build_graph([[0, 0], [1, 0]], 2, 1)
    full = g.norm_adj.toarray()
    assert full[0, 2] == pytest.approx(0.70710678, abs=1e-8)
    assert full[1, 2] == pytest.approx(0.70710678, abs=1e-8)


def test_sparse_matches_dense_oracle():
    rng = np.random.default_rng(0)
    edges = random_graph(rng, 20, 30)
    g = build_graph(edges, 20, 30)
    assert np.abs(g.norm_adj.toarray() - dense_norm(edges, 20, 30)).max() < 1e-12
    full = g.norm_adj.toarray()
    assert np.array_equal(full, full.T)


def test_from_table_and_errors():
    t = table_from_records("A", [("u1", "i1", 0), ("u2", "i1", 0), ("u2", "i2", 0)])
    g = build_graph(t)
    assert g.degree_u.tolist() == [1, 2] and g.degree_i.tolist() == [2, 1]
    with pytest.raises(GraphError):
        build_graph(np.zeros((0, 2)), 1, 1)
    with pytest.raises(GraphError):
        build_graph([[0, 0]], 2, 1)


def test_zero_layers_identity():
    g = build_graph([[0, 0], [1, 1]], 2, 2)
    eu, ei = np.arange(4.0).reshape(2, 2), np.arange(4.0, 8.0).reshape(2, 2)
    out = propagate(g, eu, ei, 0)
    assert np.array_equal(out.user.data, eu) and np.array_equal(out.item.data, ei)
    with pytest.raises(GraphError):
        propagate(g, eu, ei, -1)


def test_one_layer_swap():
    g = build_graph([[0, 0]], 1, 1)
    out = propagate(g, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 1)
    assert out.user.data.tolist() == [[1.0, 0.0, 0.0, 1.0]]
    assert out.item.data.tolist() == [[0.0, 1.0, 1.0, 0.0]]


def test_three_layers_dense_oracle():
    rng = np.random.default_rng(1)
    edges = random_graph(rng, 15, 12)
    g = build_graph(edges, 15, 12)
    e0 = rng.standard_normal((27, 4))
    out = propagate(g, e0[:15], e0[15:], 3)
    ref = dense_propagate(dense_norm(edges, 15, 12), e0, 3)
    assert out.user.shape == (15, 16)
    assert np.abs(out.user.data - ref[:15]).max() < 1e-10
    assert np.abs(out.item.data - ref[15:]).max() < 1e-10


def test_random_suite_against_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        m, n = rng.integers(1, 30, 2)
        edges = random_graph(rng, m, n, rng.uniform(0.05, 0.6))
        layers = int(rng.integers(0, 4))
        e0 = rng.standard_normal((m + n, 3))
        out = propagate(build_graph(edges, m, n), e0[:m], e0[m:], layers)
        ref = dense_propagate(dense_norm(edges, m, n), e0, layers)
        worst = max(worst, np.abs(out.user.data - ref[:m]).max(), np.abs(out.item.data - ref[m:]).max())
    assert worst < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_edge_order_invariance(seed):
    rng = np.random.default_rng(seed)
    edges = random_graph(rng, 8, 6)
    shuffled = edges[rng.permutation(len(edges))]
    g1, g2 = build_graph(edges, 8, 6), build_graph(shuffled, 8, 6)
    assert (g1.norm != g2.norm).nnz == 0
    e0 = rng.standard_normal((14, 3))
    a = propagate(g1, e0[:8], e0[8:], 2)
    b = propagate(g2, e0[:8], e0[8:], 2)
    assert a.user.data.tobytes() == b.user.data.tobytes()
    assert a.item.data.tobytes() == b.item.data.tobytes()


def test_gradient_to_e0():
    rng = np.random.default_rng(3)
    edges = random_graph(rng, 6, 5)
    g = build_graph(edges, 6, 5)
    eu = Parameter(rng.standard_normal((6, 3)), "eu")
    ei = Parameter(rng.standard_normal((5, 3)), "ei")
    w = rng.standard_normal((6, 9))

    def readout():
        out = propagate(g, eu, ei, 2)
        return reduce_sum(mul(mul(out.user, out.user), w))

    assert check_gradients(readout, [eu, ei]) < 1e-4


def test_init_range():
    e = init_id_embeddings(100, 8, np.random.default_rng(0))
    assert e.dtype == np.float32 and np.abs(e).max() <= 0.05
