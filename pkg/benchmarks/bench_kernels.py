#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --sizes 10000 100000 --repeats 5
    python benchmarks/bench_kernels.py --output results.json

The same comparison can be forced onto the fallback path for a whole
pipeline run with LIFTSEG_NO_NUMBA=1.
"""

import argparse
import json
import time

import numpy as np

from liftseg import _kernels as K


def timeit(fn, *args, repeats=5):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_scatter(n, rng, repeats):
    u = rng.integers(-2, 258, n)
    v = rng.integers(-2, 258, n)
    z = rng.uniform(0.1, 10.0, n)
    K.scatter_min_depth(u[:10], v[:10], z[:10], 256, 256, 0)  # warm up JIT
    t_jit, a = timeit(K.scatter_min_depth, u, v, z, 256, 256, 0,
                      repeats=repeats)
    t_np, b = timeit(K.scatter_min_depth_numpy, u, v, z, 256, 256, 0,
                     repeats=repeats)
    assert np.array_equal(a, b)
    return t_jit, t_np


def bench_winners(n, rng, repeats):
    u = rng.integers(-2, 258, n)
    v = rng.integers(-2, 258, n)
    z = rng.uniform(0.1, 10.0, n)
    depth = K.scatter_min_depth(u, v, z, 256, 256, 0)
    K.pixel_winners(u[:10], v[:10], z[:10], depth)
    t_jit, a = timeit(K.pixel_winners, u, v, z, depth, repeats=repeats)
    t_np, b = timeit(K.pixel_winners_numpy, u, v, z, depth, repeats=repeats)
    assert np.array_equal(a, b)
    return t_jit, t_np


def bench_prim(n, rng, repeats):
    n = min(n, 4000)  # quadratic kernel
    pts = rng.normal(size=(n, 3))
    core = rng.uniform(0.05, 1.0, n)
    K.prim_mst(pts[:10], core[:10])
    t_jit, a = timeit(K.prim_mst, pts, core, repeats=repeats)
    t_np, b = timeit(K.prim_mst_numpy, pts, core, repeats=repeats)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    return t_jit, t_np


def bench_fh(n, rng, repeats):
    m = 8 * n
    ei = rng.integers(0, n, m).astype(np.int64)
    ej = rng.integers(0, n, m).astype(np.int64)
    w = rng.uniform(0.0, 1.0, m)
    order = np.lexsort((ej, ei, w))
    ei, ej, w = ei[order], ej[order], w[order]
    K.fh_segment(ei[:10], ej[:10], w[:10], n, 0.1, 5)
    t_jit, a = timeit(K.fh_segment, ei, ej, w, n, 0.1, 5, repeats=repeats)
    t_np, b = timeit(K.fh_segment_numpy, ei, ej, w, n, 0.1, 5,
                     repeats=repeats)
    assert np.array_equal(a, b)
    return t_jit, t_np


BENCHES = {
    "scatter_min_depth": bench_scatter,
    "pixel_winners": bench_winners,
    "prim_mst": bench_prim,
    "fh_segment": bench_fh,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[10_000, 100_000])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--output", type=str, default=None)
    args = parser.parse_args()

    if not K.USING_NUMBA:
        print("numba backend unavailable or disabled "
              "(LIFTSEG_NO_NUMBA set?); both columns run the numpy path")

    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':>20} {'n':>8} {'numba (ms)':>12} {'numpy (ms)':>12} "
          f"{'speedup':>8}")
    print("-" * 64)
    for name, bench in BENCHES.items():
        for n in args.sizes:
            t_jit, t_np = bench(n, rng, args.repeats)
            speedup = t_np / t_jit if t_jit > 0 else float("inf")
            print(f"{name:>20} {n:>8} {t_jit * 1e3:>12.2f} "
                  f"{t_np * 1e3:>12.2f} {speedup:>7.1f}x")
            results.append({"kernel": name, "n": n, "numba_s": t_jit,
                            "numpy_s": t_np, "speedup": speedup})
    if args.output:
        with open(args.output, "w") as f:
            json.dump({"backend": K.backend_name(), "results": results}, f,
                      indent=1)
        print(f"\nresults written to {args.output}")


if __name__ == "__main__":
    main()
