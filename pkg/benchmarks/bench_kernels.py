"""Time the numba kernels against the numpy/scipy fallback.

    python3 benchmarks/bench_kernels.py [--n 2048] [--steps 2000]
"""

import argparse
import os
import time

import numpy as np

from chronomech import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, steps):
    xs = np.linspace(-10, 10, n)
    h = xs[1] - xs[0]
    off = np.full(n - 1, -0.5 / h**2)
    diag = 1 / h**2 + 0.5 * xs**2
    psi0 = np.exp(-((xs - 2) ** 2)).astype(complex)
    rhs = np.random.default_rng(0).normal(size=n)
    return {
        "solve_tridiagonal": lambda: _kernels.solve_tridiagonal(off, diag, off, rhs),
        "cn_evolve": lambda: _kernels.cn_evolve(
            off.astype(complex), diag.astype(complex), off.astype(complex), psi0, 1e-3, 1.0, steps, xs, h
        ),
        "eigh_lowest(k=3)": lambda: _kernels.eigh_lowest(diag, off, 3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    results = {}
    for flag in ("0", "1"):
        os.environ[_kernels.ENV_FLAG] = flag
        backend = _kernels.backend_name()
        for name, fn in cases(args.n, args.steps).items():
            fn()  # warm-up, includes jit compilation
            results[name, backend] = best_of(fn, args.repeat)
    os.environ.pop(_kernels.ENV_FLAG, None)
    print(f"n={args.n} steps={args.steps} best of {args.repeat}")
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name in cases(8, 1):
        a, b = results[name, "numba"], results[name, "numpy"]
        print(f"{name:<20}{a:>12.5f}{b:>12.5f}{b / a:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
