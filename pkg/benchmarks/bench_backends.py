"""Benchmark the two Jacobi-sweep kernel builds against each other.

Runs `jacobi_orthogonalize` from the numba build and the pure-numpy
build on identical inputs across a range of shapes, checks that they
produce the same spectrum, and prints a timing table.  The numba
figures exclude JIT compilation (one warm-up call per signature).

Usage:
    python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from peftlab import backend
from peftlab._kernels_numpy import jacobi_orthogonalize as kernel_numpy
from peftlab.linalg import JACOBI_MAX_SWEEPS, JACOBI_REL_TOL, svd

try:
    from peftlab._kernels_numba import jacobi_orthogonalize as kernel_numba
except ImportError:
    kernel_numba = None

SHAPES = ((24, 16), (64, 48), (96, 128), (192, 128), (384, 256))


def time_kernel(kernel, w, repeats):
    """Best-of-`repeats` wall time for one full orthogonalization, in ms."""
    best = np.inf
    for _ in range(repeats):
        a = w.T.copy()
        v = np.eye(w.shape[0])
        start = time.perf_counter()
        kernel(a, v, JACOBI_REL_TOL, JACOBI_MAX_SWEEPS)
        best = min(best, time.perf_counter() - start)
    return best * 1e3, np.sort(np.sqrt(np.einsum("ki,ki->i", a, a)))[::-1]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    print(f"selected backend for peftlab.linalg: {backend.backend_name()}")
    if kernel_numba is None:
        print("numba is not importable; timing the numpy kernel only")
    else:
        warm = np.random.default_rng(0).standard_normal((6, 4))
        kernel_numba(warm.T.copy(), np.eye(6), JACOBI_REL_TOL, JACOBI_MAX_SWEEPS)

    rng = np.random.default_rng(42)
    header = f"{'shape':>10s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for n, m in SHAPES:
        # the kernels orthogonalize columns of the transposed wide form,
        # mirroring what linalg.svd feeds them
        w = rng.standard_normal((min(n, m), max(n, m)))
        t_np, sig_np = time_kernel(kernel_numpy, w, args.repeats)
        if kernel_numba is None:
            print(f"{n:>4d}x{m:<5d} {t_np:>10.2f} {'-':>10s} {'-':>8s}")
            continue
        t_nb, sig_nb = time_kernel(kernel_numba, w, args.repeats)
        np.testing.assert_allclose(sig_np, sig_nb, rtol=1e-10, atol=1e-10)
        print(f"{n:>4d}x{m:<5d} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>7.1f}x")

    w = rng.standard_normal((128, 96))
    start = time.perf_counter()
    for _ in range(args.repeats):
        svd(w)
    per_call = (time.perf_counter() - start) / args.repeats * 1e3
    print(f"\nfull svd(128x96) via selected backend: {per_call:.2f} ms/call")


if __name__ == "__main__":
    main()
