"""Compare the numba and pure-numpy implementations of the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--reps 10000] [--n 20] [--boot 10000]

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed with timeit's autorange; the best of five runs is shown.
The outputs of the two backends are compared as well.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hetancova import _kernels
from hetancova.numerics import pseudo_inverse, range_basis


def _inputs(reps: int, n: int, boot: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    n1 = n // 2
    M = 5.0 + rng.standard_normal((reps, n, 3))
    Y = M @ np.array([1.0, 0.6, 0.7]) + rng.standard_normal((reps, n))
    X = np.zeros((n, 2))
    X[:n1, 0] = X[n1:, 1] = 1.0
    Xt = np.hstack([X, M[0]])
    G = pseudo_inverse(Xt)
    U = range_basis(Xt)
    e = Y[0] - U @ (U.T @ Y[0])
    signs = rng.integers(0, 2, (boot, n)) * 2.0 - 1.0
    a = rng.uniform(0.5, 50.0, reps)
    x = rng.uniform(0.0, 1.0, reps)
    return {
        "ancova_batch": (lambda: _kernels.ancova_batch(Y, M, n1)),
        "wild_statistics": (lambda: _kernels.wild_statistics(G[0] - G[1], U, e, signs)),
        "betainc": (lambda: _kernels.betainc(a, 0.5, x)),
    }


def _best(fn, repeats: int = 5) -> float:
    timer = timeit.Timer(fn)
    return min(total / number for number, total in (timer.autorange() for _ in range(repeats)))


def _max_diff(a, b) -> float:
    if isinstance(a, dict):
        return max(_max_diff(a[k], b[k]) for k in a)
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=10_000, help="datasets per batch")
    ap.add_argument("--n", type=int, default=20, help="observations per dataset")
    ap.add_argument("--boot", type=int, default=10_000, help="bootstrap resamples")
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
        return
    kernels = _inputs(args.reps, args.n, args.boot)
    print(f"{'kernel':<16} {'numba [ms]':>11} {'numpy [ms]':>11} {'speedup':>8} {'max rel diff':>13}")
    for name, fn in kernels.items():
        out, t = {}, {}
        for backend in ("numba", "numpy"):
            with _kernels.use_backend(backend):
                out[backend] = fn()
                t[backend] = _best(fn)
        print(f"{name:<16} {1e3 * t['numba']:>11.2f} {1e3 * t['numpy']:>11.2f} "
              f"{t['numpy'] / t['numba']:>7.1f}x {_max_diff(out['numba'], out['numpy']):>13.1e}")


if __name__ == "__main__":
    main()
