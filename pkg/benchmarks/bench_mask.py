#!/usr/bin/env python3
"""Benchmark the pairwise mask kernels: compiled extension vs NumPy fallback.

Usage: python benchmarks/bench_mask.py [--repeats 3]

Builds the rotation-compensated allowed-pair set over token grids of growing
size with both backends and reports wall time per build plus the speedup.
Both backends must return identical index sets; this is asserted on the fly.
"""

import argparse
import math
import time

import numpy as np

from panosphere._kernels import compiled_backend, python_backend
from panosphere.geometry import ErpGrid, EulerAngles
from panosphere.mask import TokenGrid, build_mask

CASES = [
    (1, 8, 16),    # n = 128
    (2, 12, 24),   # n = 576
    (4, 12, 24),   # n = 1152
    (4, 16, 32),   # n = 2048
    (8, 16, 32),   # n = 4096
]


def time_build(grid, orientations, tau, backend, repeats):
    best = math.inf
    result = None
    for _ in range(repeats):
        start = time.perf_counter()
        result = build_mask(grid, orientations, tau, _backend=backend)
        best = min(best, time.perf_counter() - start)
    return best, result


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--tau", type=float, default=0.35)
    args = parser.parse_args()

    if compiled_backend is None:
        print("compiled backend not built; showing fallback timings only")

    rng = np.random.default_rng(7)
    print(f"{'n':>6}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for frames, rows, cols in CASES:
        grid = TokenGrid(frames, rows, cols, ErpGrid(cols * 8, rows * 8))
        orientations = [
            EulerAngles(*rng.uniform(-0.5, 0.5, size=3)) for _ in range(frames)
        ]
        t_py, mask_py = time_build(grid, orientations, args.tau, python_backend, args.repeats)
        if compiled_backend is None:
            print(f"{grid.n:>6}  {t_py * 1e3:>8.1f}ms  {'-':>10}  {'-':>8}")
            continue
        t_c, mask_c = time_build(grid, orientations, args.tau, compiled_backend, args.repeats)
        assert mask_py == mask_c, "backends disagree"
        print(
            f"{grid.n:>6}  {t_py * 1e3:>8.1f}ms  {t_c * 1e3:>8.1f}ms  {t_py / t_c:>7.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
