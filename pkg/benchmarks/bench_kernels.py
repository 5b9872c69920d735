"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run twice to compare the two paths:

    python3 benchmarks/bench_kernels.py
    KINWASS_NO_NUMBA=1 python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from kinwass import _kernels


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm-up (includes jit compilation on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    path = "numba" if _kernels.USE_NUMBA else "numpy"
    print(f"kernel path: {path}")

    for n in (512, 2048, 4096):
        x1, v1 = rng.random((n, 1)), rng.normal(size=(n, 1))
        x2, v2 = rng.random((n, 1)), rng.normal(size=(n, 1))
        dt = timeit(_kernels.pair_costs, x1, v1, x2, v2, 2.0, True)
        print(f"pair_costs  n={n:5d}        {dt * 1e3:9.2f} ms")

    for n, grid in ((10_000, 256), (100_000, 256), (100_000, 1024)):
        x = rng.random((n, 1))
        w = np.full(n, 1.0 / n)
        dt = timeit(_kernels.deposit_raw, x, w, grid)
        print(f"deposit 1d  n={n:6d} g={grid:4d} {dt * 1e3:9.2f} ms")
        field = rng.random(grid)
        dt = timeit(_kernels.gather, field, x)
        print(f"gather  1d  n={n:6d} g={grid:4d} {dt * 1e3:9.2f} ms")

    for n, grid in ((10_000, 64), (100_000, 128)):
        x = rng.random((n, 2))
        w = np.full(n, 1.0 / n)
        dt = timeit(_kernels.deposit_raw, x, w, grid)
        print(f"deposit 2d  n={n:6d} g={grid:4d} {dt * 1e3:9.2f} ms")
        field = rng.random((grid, grid))
        dt = timeit(_kernels.gather, field, x)
        print(f"gather  2d  n={n:6d} g={grid:4d} {dt * 1e3:9.2f} ms")


if __name__ == "__main__":
    main()
