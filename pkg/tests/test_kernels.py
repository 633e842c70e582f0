import numpy as np
import pytest

from edgemark import _kernels as K


def _random_edges(rng, n, m):
    src = rng.integers(0, n, size=m).astype(np.int64)
    dst = rng.integers(0, n, size=m).astype(np.int64)
    return src, dst


def test_scatter_add_matches_sequential_loop():
    rng = np.random.default_rng(0)
    out = np.zeros((5, 3))
    idx = rng.integers(0, 5, size=20).astype(np.int64)
    rows = rng.standard_normal((20, 3))
    expected = np.zeros((5, 3))
    for i, j in enumerate(idx):
        expected[j] += rows[i]
    K.scatter_add_rows(out, idx, rows)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_neighbor_sum_matches_dense_adjacency():
    rng = np.random.default_rng(1)
    n, m = 8, 30
    src, dst = _random_edges(rng, n, m)
    x = rng.standard_normal((n, 4))
    adj = np.zeros((n, n))
    for u, v in zip(src, dst):
        adj[v, u] += 1.0
    np.testing.assert_allclose(K.neighbor_sum(x, src, dst, n), adj @ x,
                               rtol=1e-12, atol=1e-12)


def test_weighted_neighbor_sum_matches_dense():
    rng = np.random.default_rng(2)
    n, m = 7, 25
    src, dst = _random_edges(rng, n, m)
    w = rng.standard_normal(m)
    x = rng.standard_normal((n, 3))
    adj = np.zeros((n, n))
    for e in range(m):
        adj[dst[e], src[e]] += w[e]
    np.testing.assert_allclose(K.weighted_neighbor_sum(x, src, dst, w, n),
                               adj @ x, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(not K.HAS_NUMBA, reason="numba unavailable")
def test_numba_and_numpy_paths_agree_bitwise():
    rng = np.random.default_rng(3)
    n, m = 50, 400
    src, dst = _random_edges(rng, n, m)
    x = rng.standard_normal((n, 16))
    w = rng.standard_normal(m)

    a = K._neighbor_sum_numba(x, src, dst, n)
    b = K._neighbor_sum_numpy(x, src, dst, n)
    assert np.array_equal(a, b)

    a = K._weighted_neighbor_sum_numba(x, src, dst, w, n)
    b = K._weighted_neighbor_sum_numpy(x, src, dst, w, n)
    assert np.array_equal(a, b)

    rows = rng.standard_normal((m, 16))
    out_a = np.zeros((n, 16))
    out_b = np.zeros((n, 16))
    K._scatter_add_rows_numba(out_a, dst, rows)
    K._scatter_add_rows_numpy(out_b, dst, rows)
    assert np.array_equal(out_a, out_b)


def test_env_flag_selects_backend():
    assert K.backend() in ("numba", "numpy")
    if K.USE_NUMBA:
        assert K.scatter_add_rows is K._scatter_add_rows_numba
    else:
        assert K.scatter_add_rows is K._scatter_add_rows_numpy
