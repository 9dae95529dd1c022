import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metagps import adcore as ad
from metagps.encoder import GraphEncoder, encode, encode_sgc, init_encoder, propagate_sgc
from metagps.graphcore import Graph, hop_operators, node_homophily
from metagps.probe import linear_probe


def make_graph(X, edges, y=None):
    X = np.asarray(X, dtype=float)
    y = np.zeros(len(X), dtype=int) if y is None else np.asarray(y)
    return Graph(X=X, edges=np.array(edges, dtype=int).reshape(-1, 2), y=y,
                 class_split={"train": sorted(set(y.tolist())), "val": [], "test": []})


def params(W_f, W_r):
    return ad.ParamSet([("W_f", np.asarray(W_f, float)), ("W_r", np.asarray(W_r, float))])


def run(G, p, hops, rows=None):
    return encode(G, hop_operators(G.adjacency(), hops), p, rows=rows).value


def test_no_edges_neighbour_blocks_vanish():
    rng = np.random.default_rng(0)
    G = make_graph(rng.normal(size=(5, 3)), [])
    W_f, W_r = rng.normal(size=(3, 2)), rng.normal(size=(6, 2))
    F = np.maximum(G.X @ W_f, 0)
    want = np.maximum(np.hstack([F, np.zeros((5, 4))]) @ W_r, 0)
    assert np.allclose(run(G, params(W_f, W_r), 2), want, rtol=0, atol=1e-14)


def test_block_selector_recovers_ego():
    rng = np.random.default_rng(1)
    G = make_graph(rng.normal(size=(6, 3)), [(0, 1), (1, 2), (2, 3), (4, 5)])
    W_f = rng.normal(size=(3, 2))
    W_r = np.vstack([np.eye(2), np.zeros((4, 2))])
    assert np.array_equal(run(G, params(W_f, W_r), 2), np.maximum(G.X @ W_f, 0))


def test_path_graph_hand_values():
    G = make_graph([[1.0], [-2.0], [3.0], [0.5]], [(0, 1), (1, 2), (2, 3)])
    Z = run(G, params([[2.0]], [[1.0], [0.5], [-0.25]]), 2)
    s = np.sqrt(2.0)
    want = np.array([[0.5], [1.25 + s / 2], [5.5 + s / 4], [1.0 + 1.5 * s]])
    assert np.allclose(Z, want, rtol=0, atol=1e-14)


def test_path_graph_dense_oracle():
    rng = np.random.default_rng(2)
    G = make_graph(rng.normal(size=(4, 1)), [(0, 1), (1, 2), (2, 3)])
    W_f, W_r = rng.normal(size=(1, 1)), rng.normal(size=(3, 1))
    A1 = np.array([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]], float)
    A2 = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]], float)

    def norm(B):
        d = B.sum(1)
        return B / np.sqrt(np.outer(d, d))

    F = np.maximum(G.X @ W_f, 0)
    want = np.maximum(np.hstack([F, norm(A1) @ F, norm(A2) @ F]) @ W_r, 0)
    assert np.allclose(run(G, params(W_f, W_r), 2), want, rtol=0, atol=1e-13)


def test_dimension_mismatch():
    G = make_graph(np.ones((3, 4)), [(0, 1)])
    with pytest.raises(ad.ShapeError):
        run(G, params(np.ones((3, 2)), np.ones((6, 2))), 2)


@st.composite
def small_graphs(draw):
    n = draw(st.integers(2, 12))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < 0.35
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return rng, make_graph(rng.normal(size=(n, 3)), edges)


@given(small_graphs(), st.integers(1, 3))
def test_permutation_equivariance(data, hops):
    rng, G = data
    p = init_encoder(rng, 3, 4, hops)
    perm = rng.permutation(G.n)
    inv = np.argsort(perm)
    # node v of the permuted graph is node perm[v] of the original
    edges = np.sort(inv[G.edges], axis=1)
    H = make_graph(G.X[perm], edges)
    assert np.allclose(run(H, p, hops), run(G, p, hops)[perm], rtol=0, atol=1e-10)


@given(small_graphs(), st.integers(1, 3))
def test_row_subset_matches_full(data, hops):
    rng, G = data
    p = init_encoder(rng, 3, 4, hops)
    rows = rng.choice(G.n, size=rng.integers(1, G.n + 1), replace=True)
    assert np.allclose(run(G, p, hops, rows=rows), run(G, p, hops)[rows], rtol=0, atol=1e-14)


def test_encoder_gradients():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = 10
        iu = np.triu_indices(n, 1)
        keep = rng.random(len(iu[0])) < 0.3
        G = make_graph(rng.normal(size=(n, 3)), np.stack([iu[0][keep], iu[1][keep]], axis=1))
        adjs = hop_operators(G.adjacency(), 2)
        p = init_encoder(rng, 3, 4, 2)
        target = rng.normal(size=(n, 4))
        f = lambda q: ad.tsum(ad.square(encode(G, adjs, q) - target))
        assert ad.finite_diff_check(f, p) <= 1e-5


def test_ego_block_separates_heterophilic_classes():
    # complete bipartite between the two classes: homophily 0, features one-hot
    y = np.repeat([0, 1], 10)
    edges = [(u, v) for u in range(10) for v in range(10, 20)]
    G = make_graph(np.eye(2)[y], edges, y)
    assert node_homophily(G) == 0.0
    W_r = np.vstack([np.eye(2), np.zeros((4, 2))])
    Z = run(G, params(np.eye(2), W_r), 2)
    assert linear_probe(Z, y, seed=0) == 1.0


# --------------------------------------------------------------- SGC


def test_sgc_power_zero_is_linear_map():
    rng = np.random.default_rng(0)
    G = make_graph(rng.normal(size=(4, 3)), [(0, 1), (2, 3)])
    W = rng.normal(size=(3, 2))
    assert np.array_equal(encode_sgc(G, 0, ad.Tensor(W)).value, G.X @ W)


def test_sgc_isolated_node_fixed_point():
    G = make_graph([[1.5, -2.0]], [])
    W = np.array([[1.0], [2.0]])
    for l in range(4):
        assert np.allclose(encode_sgc(G, l, ad.Tensor(W)).value, G.X @ W, rtol=0, atol=1e-15)


def test_sgc_triangle_dense_power():
    rng = np.random.default_rng(3)
    G = make_graph(rng.normal(size=(3, 3)), [(0, 1), (0, 2), (1, 2)])
    S = (np.ones((3, 3))) / 3.0  # (A + I) has every degree 3
    want = np.linalg.matrix_power(S, 2) @ G.X
    assert np.allclose(encode_sgc(G, 2, ad.Tensor(np.eye(3))).value, want, rtol=0, atol=1e-12)


def test_sgc_negative_power():
    G = make_graph([[1.0]], [])
    with pytest.raises(ValueError):
        propagate_sgc(G, -1)


def test_graph_encoder_kinds():
    rng = np.random.default_rng(4)
    G = make_graph(rng.normal(size=(5, 3)), [(0, 1), (1, 2)])
    hop = GraphEncoder(G, "hop", hops=2)
    sgc = GraphEncoder(G, "sgc", sgc_power=2)
    assert hop.param_names == ("W_f", "W_r") and sgc.param_names == ("W",)
    ph, ps = hop.init(rng, 4), sgc.init(rng, 4)
    assert ph["W_r"].shape == (12, 4) and ps["W"].shape == (3, 4)
    assert hop(ph).shape == (5, 4) and sgc(ps, rows=[1, 3]).shape == (2, 4)
    with pytest.raises(ValueError):
        GraphEncoder(G, "gat")


def test_init_is_seeded_glorot():
    a = init_encoder(np.random.default_rng(5), 3, 4, 2)
    b = init_encoder(np.random.default_rng(5), 3, 4, 2)
    assert a.bit_equal(b)
    assert np.all(np.abs(a["W_f"].value) <= np.sqrt(6 / 7))
    assert np.all(np.abs(a["W_r"].value) <= np.sqrt(6 / 16))
