#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Each kernel is run on both backends from identical seeds; results are
checked for agreement before timing.  Timings take the best of three
repeats after a warm-up call (which also absorbs JIT compilation).

Usage: python benchmarks/bench_backends.py
"""

import time

import numpy as np

from grnas import kernels


def best_of(fn, repeats=3):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def check_agreement(name, make_args):
    outs = {}
    for backend in kernels.BACKENDS:
        rng = np.random.default_rng(42)
        outs[backend] = kernels.BACKENDS[backend][name](*make_args(), rng)
    if len(outs) < 2:
        return
    a, b = outs["numba"], outs["numpy"]
    if not isinstance(a, tuple):
        a, b = (a,), (b,)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-9, atol=1e-12), f"{name}: backend mismatch"


def main():
    theta5 = np.linspace(-0.5, 0.5, 5)
    g_table = np.eye(5)
    g_star = np.zeros(5)
    d_idx = np.random.default_rng(0).integers(0, 5, size=20_000)

    cases = [
        ("gumbel_max_indices", lambda: (theta5, 10**6)),
        ("conditional_values", lambda: (theta5, 1, 10**6)),
        ("pooled_conditional", lambda: (theta5, 2 * 10**5)),
        ("grmc_stats", lambda: (theta5, d_idx, g_table, g_star, 0.5, 100)),
    ]

    print(f"active backend: {kernels.active_backend()}")
    print(f"{'kernel':<22} {'numpy (s)':>10} {'numba (s)':>10} {'speedup':>8}")
    for name, make_args in cases:
        check_agreement(name, make_args)
        timings = {}
        for backend in kernels.BACKENDS:
            fn = kernels.BACKENDS[backend][name]
            fn(*make_args(), np.random.default_rng(1))  # warm-up / JIT
            timings[backend] = best_of(lambda: fn(*make_args(), np.random.default_rng(1)))
        numpy_t = timings["numpy"]
        numba_t = timings.get("numba", float("nan"))
        speedup = numpy_t / numba_t if "numba" in timings else float("nan")
        print(f"{name:<22} {numpy_t:>10.4f} {numba_t:>10.4f} {speedup:>7.1f}x")


if __name__ == "__main__":
    main()
