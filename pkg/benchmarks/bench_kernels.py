#!/usr/bin/env python3
"""Benchmark the hot kernels: numba @njit loops vs the pure-numpy fallback.

Covers the two paths selected by QIMLAB_BACKEND: the Kubo tuple enumeration
(d^n terms) and the Monte-Carlo trace-product chain.  Values are checked to
agree to roundoff before timing.

    python benchmarks/bench_kernels.py [--samples 200000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from qimlab.backend import HAS_NUMBA
from qimlab.gibbs import make_state
from qimlab.kubo import kubo_n_point, kubo_oracle
from qimlab.speccalc import HermitianOperator


def random_hermitian(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return HermitianOperator.from_array((g + g.conj().T) / 2)


def time_call(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_enumeration(repeat):
    print("\nKubo tuple enumeration (value check + best-of timing)")
    print(f"{'case':>14} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for d, n in ((6, 4), (8, 4), (6, 6), (4, 8)):
        state = make_state(HermitianOperator.from_array(
            np.diag(1.0 + np.arange(d, dtype=float))), 0.5)
        dirs = [random_hermitian(rng, d) for _ in range(n)]
        if HAS_NUMBA:
            kubo_n_point(state, dirs, backend="numba")  # jit warmup
        t_nb, r_nb = time_call(lambda: kubo_n_point(state, dirs, backend="numba"), repeat) \
            if HAS_NUMBA else (float("nan"), None)
        t_np, r_np = time_call(lambda: kubo_n_point(state, dirs, backend="numpy"), repeat)
        if r_nb is not None:
            assert abs(r_nb.value - r_np.value) <= 1e-10 * (1 + abs(r_np.value))
        ratio = t_np / t_nb if HAS_NUMBA else float("nan")
        print(f"d={d} n={n:<6} {t_nb*1e3:>8.2f}ms {t_np*1e3:>8.2f}ms {ratio:>7.1f}x")


def bench_mc(samples, repeat):
    print(f"\nMonte-Carlo trace chain ({samples} samples)")
    print(f"{'case':>14} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    rng = np.random.default_rng(1)
    for d, n in ((4, 2), (8, 3), (8, 4)):
        state = make_state(HermitianOperator.from_array(
            np.diag(1.0 + np.arange(d, dtype=float))), 0.5)
        dirs = [random_hermitian(rng, d) for _ in range(n)]
        if HAS_NUMBA:
            kubo_oracle(state, dirs, samples=1000, seed=0, backend="numba")  # warmup
        t_nb, e_nb = time_call(
            lambda: kubo_oracle(state, dirs, samples=samples, seed=7, backend="numba"),
            repeat) if HAS_NUMBA else (float("nan"), None)
        t_np, e_np = time_call(
            lambda: kubo_oracle(state, dirs, samples=samples, seed=7, backend="numpy"),
            repeat)
        if e_nb is not None:
            assert abs(e_nb.value - e_np.value) <= 1e-9 * (1 + abs(e_np.value))
        ratio = t_np / t_nb if HAS_NUMBA else float("nan")
        print(f"d={d} n={n:<6} {t_nb*1e3:>8.1f}ms {t_np*1e3:>8.1f}ms {ratio:>7.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not HAS_NUMBA:
        print("numba not importable: timing the numpy fallback only")
    bench_enumeration(args.repeat)
    bench_mc(args.samples, args.repeat)


if __name__ == "__main__":
    main()
