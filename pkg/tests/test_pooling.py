import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from meshvae.pooling import build_pool_operator, depool, depool_backward, pool, pool_backward, transpose_backprop
from meshvae.simplify import ContractionMap, replay_contractions, simplify_to


def op(parent, coarse=None):
    return build_pool_operator(np.array(parent), coarse)


class TestBuild:
    def test_two_clusters(self):
        o = op([0, 0, 1])
        assert o.cluster_members == ((0, 1), (2,))
        assert np.array_equal(o.P.toarray(), [[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        assert np.array_equal(o.Dp.toarray(), [[1, 0], [1, 0], [0, 1]])

    def test_chained_contractions(self):
        log = [(1, 2, (0, 0, 0)), (0, 1, (0, 0, 0))]
        parent = replay_contractions(4, log)
        cmap = ContractionMap(4, 2, parent, np.zeros((2, 3)), tuple(log))
        o = build_pool_operator(cmap)
        assert o.cluster_members == ((0, 1, 2), (3,))
        assert np.abs(o.P.toarray()[0] - [1 / 3, 1 / 3, 1 / 3, 0]).max() <= 2.0 ** -52

    def test_identity_map(self):
        o = op(np.arange(5))
        assert np.array_equal(o.P.toarray(), np.eye(5))
        assert np.array_equal(o.Dp.toarray(), np.eye(5))

    def test_empty_cluster_rejected(self):
        with pytest.raises(ValueError, match="coarse vertex 1 has no fine members"):
            op([0, 0, 2], 3)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            op([0, 3], 2)

    def test_from_simplification(self, sphere642):
        _, cmap = simplify_to(sphere642, 322)
        o = build_pool_operator(cmap)
        assert o.P.shape == (322, 642) and o.Dp.shape == (642, 322)
        assert np.abs(np.asarray(o.P.sum(axis=1)).ravel() - 1).max() <= 1e-15
        assert (o.P @ o.Dp != sparse.identity(322)).nnz == 0


class TestApply:
    def test_pool_average(self):
        o = op([0, 0, 1])
        X = np.array([[2.0, 1.0], [4.0, 3.0], [7.0, 5.0]])
        assert np.array_equal(pool(o, X), [[3.0, 2.0], [7.0, 5.0]])

    def test_pool_constant_clusters(self, rng):
        o = op([0, 1, 0, 2, 1, 1])
        Y = rng.normal(size=(3, 4))
        assert np.abs(pool(o, depool(o, Y)) - Y).max() <= 1e-14

    def test_depool_copy(self):
        o = op([0, 0, 1])
        assert np.array_equal(depool(o, np.array([[3.0], [7.0]])), [[3.0], [3.0], [7.0]])

    def test_pool_matches_naive_loop(self, rng, sphere642):
        _, cmap = simplify_to(sphere642, 322)
        o = build_pool_operator(cmap)
        X = rng.normal(size=(642, 5))
        naive = np.array([X[list(m)].mean(axis=0) for m in o.cluster_members])
        assert np.abs(pool(o, X) - naive).max() <= 1e-15

    def test_depool_pool_projection(self, rng):
        o = op([0, 0, 1, 1, 2])
        X = rng.normal(size=(5, 2))
        assert not np.allclose(depool(o, pool(o, X)), X)
        Xc = depool(o, rng.normal(size=(3, 2)))
        assert np.array_equal(depool(o, pool(o, Xc)), Xc)

    def test_batched(self, rng):
        o = op([0, 1, 0, 2, 1])
        X = rng.normal(size=(4, 5, 3))
        out = pool(o, X)
        assert out.shape == (4, 3, 3)
        for b in range(4):
            assert np.array_equal(out[b], pool(o, X[b]))
            assert np.array_equal(depool(o, out)[b], depool(o, out[b]))

    def test_shape_errors(self):
        o = op([0, 0, 1])
        with pytest.raises(ValueError):
            pool(o, np.zeros((2, 1)))
        with pytest.raises(ValueError):
            depool(o, np.zeros((3, 1)))
        with pytest.raises(ValueError):
            pool_backward(o, np.zeros((3, 1)))
        with pytest.raises(ValueError):
            depool_backward(o, np.zeros((2, 1)))


class TestBackward:
    def test_pool_gradient_splits(self):
        o = op([0, 0, 1])
        g = np.array([[2.0], [5.0]])
        assert np.array_equal(pool_backward(o, g), [[1.0], [1.0], [5.0]])
        assert np.array_equal(transpose_backprop(o, g, "pool"), pool_backward(o, g))

    def test_depool_gradient_sums(self):
        o = op([0, 0, 1])
        g = np.array([[1.0], [2.0], [4.0]])
        assert np.array_equal(depool_backward(o, g), [[3.0], [4.0]])
        assert np.array_equal(transpose_backprop(o, g, "depool"), depool_backward(o, g))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            transpose_backprop(op([0]), np.zeros((1, 1)), "max")

    @pytest.mark.parametrize("which", ["pool", "depool"])
    def test_finite_differences(self, rng, which):
        o = op([0, 1, 0, 2, 1, 1])
        fwd, bwd = (pool, pool_backward) if which == "pool" else (depool, depool_backward)
        X = rng.normal(size=(6, 2) if which == "pool" else (3, 2))
        W = rng.normal(size=fwd(o, X).shape)

        def f(x):
            return float((fwd(o, x) * W).sum())

        grad = bwd(o, W)
        h = 1e-6
        num = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            d = np.zeros_like(X)
            d[idx] = h
            num[idx] = (f(X + d) - f(X - d)) / (2 * h)
        assert np.abs(num - grad).max() / np.abs(grad).max() < 1e-7


sizes = st.lists(st.integers(1, 20), min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(sizes, st.integers(0, 2 ** 32 - 1))
def test_algebra_properties(cluster_sizes, seed):
    rng = np.random.default_rng(seed)
    parent = rng.permutation(np.repeat(np.arange(len(cluster_sizes)), cluster_sizes))
    o = op(parent, len(cluster_sizes))
    rows = np.asarray(o.P.sum(axis=1)).ravel()
    assert np.abs(rows - 1.0).max() <= 1e-15
    assert (o.P @ o.Dp != sparse.identity(len(cluster_sizes))).nnz == 0
    sizes_arr = np.array(cluster_sizes)
    weights = np.asarray(o.P[parent, np.arange(len(parent))]).ravel()
    assert np.abs(weights - 1.0 / sizes_arr[parent]).max() <= 2.0 ** -52
    Y = rng.normal(size=(len(cluster_sizes), 3))
    assert np.abs(pool(o, depool(o, Y)) - Y).max() <= 1e-14
    X1, X2 = rng.normal(size=(2, len(parent), 3))
    a, b = rng.normal(size=2)
    assert np.abs(pool(o, a * X1 + b * X2) - (a * pool(o, X1) + b * pool(o, X2))).max() <= 1e-14
    Z1, Z2 = rng.normal(size=(2, len(cluster_sizes), 3))
    assert np.abs(depool(o, a * Z1 + b * Z2) - (a * depool(o, Z1) + b * depool(o, Z2))).max() <= 1e-14


@pytest.mark.parametrize("n", list(range(1, 40)) + [97, 1000])
def test_row_sums_exact_in_any_order(n, rng):
    o = op(np.zeros(n, dtype=int), 1)
    assert (o.P @ o.Dp).toarray()[0, 0] == 1.0
    w = o.P.data.copy()
    for _ in range(5):
        total = 0.0
        for x in rng.permutation(w):
            total += x
        assert total == 1.0
    if n & (n - 1) == 0:
        assert (w == 1.0 / n).all()
