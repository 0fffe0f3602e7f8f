"""Compare the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--atoms 1000] [--points 200] [--repeat 5]

Prints the best-of-``repeat`` wall time per workload for each backend, the
speedup, and the largest disagreement between the two results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from freespike import _kernels_py
from freespike.measure import DensitySpec, discretize
from freespike.subordination import SolverOptions

try:
    from freespike import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(n_atoms: int, n_points: int):
    mu_A = discretize(DensitySpec.uniform(0.5, 1.5), n_atoms)
    mu_B = discretize(DensitySpec.beta_like(0.2, 3.0, 0.5, 0.5), n_atoms)
    xa, wa, xb, wb = mu_A.atoms, mu_A.weights, mu_B.atoms, mu_B.weights
    args = SolverOptions().kernel_args()
    zs = np.linspace(0.1, 4.0, n_points) + 0.02j

    def moments(k):
        return lambda: [k.moment_sums(xa, wa, z) for z in zs]

    def solves(k):
        return lambda: [k.solve(xa, wa, xb, wb, z, z, *args)[:2] for z in zs]

    def path(k):
        return lambda: k.solve_path(xa, wa, xb, wb, zs, zs[0], *args)[:2]

    return {"moment_sums": moments, "solve (cold)": solves, "solve_path (warm)": path}


def spread(a, b) -> float:
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--atoms", type=int, default=1000)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _core is None:
        print("compiled extension not built; only the fallback is available")
    print(f"atoms={args.atoms} points={args.points} best of {args.repeat}")
    print(f"{'workload':<20}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max rel diff':>14}")
    for name, make in workloads(args.atoms, args.points).items():
        t_py, r_py = best_of(make(_kernels_py), args.repeat)
        if _core is None:
            print(f"{name:<20}{t_py:>12.4f}{'-':>12}{'-':>10}{'-':>14}")
            continue
        t_cy, r_cy = best_of(make(_core), args.repeat)
        print(f"{name:<20}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>10.1f}{spread(r_py, r_cy):>14.2e}")


if __name__ == "__main__":
    main()
