#!/usr/bin/env python3
"""Benchmark the jitted scatter/gather kernels against the numpy fallback.

Runs each hot kernel on edge lists shaped like the desk-scale graphs this
package trains on, at several sizes, and prints the per-call times plus
speedup. The numba path is also verified bit-identical to the fallback on
every case before timing.

Usage: python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from edgemark import _kernels as K


def time_call(fn, *args, repeats=200):
    fn(*args)  # warm up (JIT compile on the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return np.median(times)


def make_case(rng, n_nodes, mean_degree, dim):
    m = n_nodes * mean_degree
    src = rng.integers(0, n_nodes, size=m).astype(np.int64)
    dst = rng.integers(0, n_nodes, size=m).astype(np.int64)
    x = rng.standard_normal((n_nodes, dim))
    w = rng.standard_normal(m)
    rows = rng.standard_normal((m, dim))
    return src, dst, x, w, rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    if not K.HAS_NUMBA:
        print("numba not importable; nothing to compare")
        return

    print(f"active backend: {K.backend()} (EDGEMARK_NO_NUMBA to force numpy)")
    header = f"{'case':<28} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for n_nodes, deg, dim in ((1000, 6, 32), (1000, 6, 96),
                              (3000, 6, 64), (3000, 20, 64)):
        src, dst, x, w, rows = make_case(rng, n_nodes, deg, dim)
        label = f"n={n_nodes} deg={deg} dim={dim}"

        a = K._neighbor_sum_numpy(x, src, dst, n_nodes)
        b = K._neighbor_sum_numba(x, src, dst, n_nodes)
        assert np.array_equal(a, b), "neighbor_sum paths disagree"
        t_np = time_call(K._neighbor_sum_numpy, x, src, dst, n_nodes,
                         repeats=args.repeats)
        t_nb = time_call(K._neighbor_sum_numba, x, src, dst, n_nodes,
                         repeats=args.repeats)
        print(f"neighbor_sum {label:<15} {t_np * 1e3:>9.3f}ms {t_nb * 1e3:>9.3f}ms "
              f"{t_np / t_nb:>7.1f}x")

        a = K._weighted_neighbor_sum_numpy(x, src, dst, w, n_nodes)
        b = K._weighted_neighbor_sum_numba(x, src, dst, w, n_nodes)
        assert np.array_equal(a, b), "weighted_neighbor_sum paths disagree"
        t_np = time_call(K._weighted_neighbor_sum_numpy, x, src, dst, w, n_nodes,
                         repeats=args.repeats)
        t_nb = time_call(K._weighted_neighbor_sum_numba, x, src, dst, w, n_nodes,
                         repeats=args.repeats)
        print(f"weighted_sum {label:<15} {t_np * 1e3:>9.3f}ms {t_nb * 1e3:>9.3f}ms "
              f"{t_np / t_nb:>7.1f}x")

        out_a = np.zeros_like(x)
        out_b = np.zeros_like(x)
        K._scatter_add_rows_numpy(out_a, dst, rows)
        K._scatter_add_rows_numba(out_b, dst, rows)
        assert np.array_equal(out_a, out_b), "scatter_add paths disagree"
        out = np.zeros_like(x)
        t_np = time_call(K._scatter_add_rows_numpy, out, dst, rows,
                         repeats=args.repeats)
        t_nb = time_call(K._scatter_add_rows_numba, out, dst, rows,
                         repeats=args.repeats)
        print(f"scatter_add  {label:<15} {t_np * 1e3:>9.3f}ms {t_nb * 1e3:>9.3f}ms "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
