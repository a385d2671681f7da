#!/usr/bin/env python3
"""Benchmark the compiled transport solver against the pure-Python fallback.

Times exact min-cost transport on random weighted instances of growing
size and prints a table. The pure backend is skipped above a size cutoff
(it is a correctness fallback, not a performance target).

Usage: python benchmarks/bench_ot.py [--max-size 1024]
"""

import argparse
import time

import numpy as np

from atlasae._flow import BACKEND, solve_transport, solve_transport_pure
from atlasae.discrepancy import cost_matrix

PURE_CUTOFF = 256


def one_instance(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = rng.normal(size=(n, 3)) + 0.25
    a = rng.random(n) + 0.1
    a /= a.sum()
    b = rng.random(n) + 0.1
    b /= b.sum()
    return cost_matrix(x, y), a, b


def timed(fn, *args):
    started = time.perf_counter()
    total, *_ = fn(*args)
    return total, time.perf_counter() - started


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--max-size", type=int, default=1024)
    args = parser.parse_args()

    print(f"selected backend: {BACKEND}")
    print(f"{'n':>6}  {'compiled [s]':>12}  {'pure [s]':>10}  {'speedup':>8}")
    n = 16
    while n <= args.max_size:
        costs, a, b = one_instance(n, seed=n)
        total_c, sec_c = timed(solve_transport, costs, a, b)
        if n <= PURE_CUTOFF:
            total_p, sec_p = timed(solve_transport_pure, costs, a, b)
            assert abs(total_c - total_p) < 1e-10, "backends disagree"
            print(f"{n:>6}  {sec_c:>12.4f}  {sec_p:>10.4f}  {sec_p / sec_c:>7.1f}x")
        else:
            print(f"{n:>6}  {sec_c:>12.4f}  {'skipped':>10}  {'':>8}")
        n *= 2


if __name__ == "__main__":
    main()
