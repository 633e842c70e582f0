"""Hot scatter/gather kernels used by message passing and its backward pass.

Each kernel has a numba-jitted implementation and a pure-numpy fallback.
The numpy path accumulates with ``np.add.at`` in edge order, which performs
the same sequence of float additions as the jitted loops, so both paths
produce bit-identical results. Set ``EDGEMARK_NO_NUMBA=1`` to force the
numpy path (the jitted path is the default whenever numba imports).

``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

import numpy as np


def _scatter_add_rows_numpy(out, idx, rows):
    np.add.at(out, idx, rows)
    return out


def _neighbor_sum_numpy(x, src, dst, n_out):
    out = np.zeros((n_out, x.shape[1]))
    np.add.at(out, dst, x[src])
    return out


def _weighted_neighbor_sum_numpy(x, src, dst, w, n_out):
    out = np.zeros((n_out, x.shape[1]))
    np.add.at(out, dst, x[src] * w[:, None])
    return out


try:
    from numba import njit

    HAS_NUMBA = True

    @njit(cache=True)
    def _scatter_add_rows_numba(out, idx, rows):
        for i in range(idx.shape[0]):
            j = idx[i]
            for k in range(rows.shape[1]):
                out[j, k] += rows[i, k]
        return out

    @njit(cache=True)
    def _neighbor_sum_numba(x, src, dst, n_out):
        out = np.zeros((n_out, x.shape[1]))
        for e in range(src.shape[0]):
            u = src[e]
            v = dst[e]
            for k in range(x.shape[1]):
                out[v, k] += x[u, k]
        return out

    @njit(cache=True)
    def _weighted_neighbor_sum_numba(x, src, dst, w, n_out):
        out = np.zeros((n_out, x.shape[1]))
        for e in range(src.shape[0]):
            u = src[e]
            v = dst[e]
            we = w[e]
            for k in range(x.shape[1]):
                out[v, k] += x[u, k] * we
        return out

except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("EDGEMARK_NO_NUMBA", "") not in ("1", "true", "yes")

if USE_NUMBA:
    scatter_add_rows = _scatter_add_rows_numba
    neighbor_sum = _neighbor_sum_numba
    weighted_neighbor_sum = _weighted_neighbor_sum_numba
else:
    scatter_add_rows = _scatter_add_rows_numpy
    neighbor_sum = _neighbor_sum_numpy
    weighted_neighbor_sum = _weighted_neighbor_sum_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
