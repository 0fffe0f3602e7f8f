"""Subordination functions of the free multiplicative convolution.

For two atomic measures ``mu_A`` and ``mu_B`` the pair ``(Omega_A, Omega_B)``
solves::

    z M_A(Omega_B(z)) = z M_B(Omega_A(z)) = Omega_A(z) Omega_B(z)

and ``M(z) = M_A(Omega_B(z))`` is the M-transform of ``mu_A [x] mu_B``.  The
system is reduced to a scalar fixed point in ``Omega_A`` and iterated by the
compiled kernels in :mod:`freespike._core` (or the numpy fallback).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np

from ._backend import kernels
from .errors import ConfigError, DomainError, SingularityError, SolverError
from .measure import AtomicMeasure, GridDensity

__all__ = [
    "SolverOptions",
    "SubordinationValue",
    "ConvolutionValue",
    "PathResult",
    "ConvolutionHandle",
    "solve",
    "solve_grid",
    "m_of_convolution",
    "density_on_grid",
    "omega_derivative",
    "default_grid",
]

_CONVERGED, _MAX_ITER, _POLE = 0, 1, 2


@dataclass(frozen=True)
class SubordinationValue:
    """Solved subordination pair at a single point ``z``."""

    z: complex
    omega_A: complex
    omega_B: complex
    residual: float
    iterations: int


@dataclass(frozen=True)
class SolverOptions:
    """Controls for the fixed-point iteration.

    Parameters
    ----------
    tolerance : float
        Convergence threshold; the residual must fall below
        ``tolerance * (1 + |z|**2)``.
    max_iterations : int
        Iteration budget per point.
    damping : float
        Relaxation factor in ``(0, 1]`` for plain fixed-point steps.
    adaptive : bool
        Halve the damping whenever the residual grows (regrowing it on
        decrease).  Off by default; the Newton safeguard below already handles
        near-edge slowdown and the halving tends to stall there.
    accelerate : bool
        Try a safeguarded Newton step on the scalar map before each plain
        step; it is kept only if it lowers the residual and stays in the
        correct half plane.
    warm_start : SubordinationValue, optional
        Initial ``Omega_A``; the default guess is ``Omega_A = z``.
    """

    tolerance: float = 1e-12
    max_iterations: int = 500
    damping: float = 1.0
    adaptive: bool = False
    accelerate: bool = True
    warm_start: Optional[SubordinationValue] = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")

    def kernel_args(self):
        return (self.tolerance, int(self.max_iterations), float(self.damping),
                bool(self.adaptive), bool(self.accelerate))


_DEFAULT = SolverOptions()


def _run(mu_A, mu_B, z, guess, opts):
    return kernels.solve(mu_A.atoms, mu_A.weights, mu_B.atoms, mu_B.weights,
                         z, guess, *opts.kernel_args())


def solve(mu_A: AtomicMeasure, mu_B: AtomicMeasure, z: complex,
          opts: SolverOptions | None = None) -> SubordinationValue:
    """Solve the subordination system at ``z``.

    Raises
    ------
    DomainError
        If ``z == 0``.
    SolverError
        If the iteration does not converge, or hits a pole twice.
    """
    opts = opts or _DEFAULT
    z = complex(z)
    if z == 0:
        raise DomainError("the subordination system is degenerate at z = 0")
    guess = z if opts.warm_start is None else complex(opts.warm_start.omega_A)
    oa, ob, res, it, st = _run(mu_A, mu_B, z, guess, opts)
    if st == _POLE:
        # nudge off the pole and retry once
        guess = guess * (1.0 + 1e-7) + (1e-9j if z.imag >= 0 else -1e-9j) * (z.imag != 0)
        oa, ob, res, it2, st = _run(mu_A, mu_B, z, guess, opts)
        it += it2
        if st == _POLE:
            raise SolverError(f"iteration hit a pole at z = {z}", last=oa, residual=res, iterations=it)
    if st != _CONVERGED:
        raise SolverError(f"no convergence at z = {z} after {it} iterations (residual {res:.3e})",
                          last=oa, residual=res, iterations=it)
    return SubordinationValue(z, complex(oa), complex(ob), float(res), int(it))


@dataclass(frozen=True)
class PathResult:
    """Outcome of solving along many points; ``status`` 0 means converged."""

    z: np.ndarray
    omega_A: np.ndarray
    omega_B: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    status: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == _CONVERGED

    def value(self, k: int) -> SubordinationValue:
        return SubordinationValue(complex(self.z[k]), complex(self.omega_A[k]), complex(self.omega_B[k]),
                                  float(self.residual[k]), int(self.iterations[k]))


def solve_grid(mu_A: AtomicMeasure, mu_B: AtomicMeasure, zs,
               opts: SolverOptions | None = None) -> PathResult:
    """Solve at many points by continuation.

    Points are visited by ascending real part, then descending imaginary
    part, each warm-started from its predecessor; results are returned in the
    input order.  Failures are reported through ``status`` rather than raised.
    """
    opts = opts or _DEFAULT
    zs = np.asarray(zs, dtype=complex).ravel()
    order = np.lexsort((-zs.imag, zs.real))
    ordered = np.ascontiguousarray(zs[order])
    out = kernels.solve_path(mu_A.atoms, mu_A.weights, mu_B.atoms, mu_B.weights,
                             ordered, ordered[0], *opts.kernel_args())
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    oa, ob, res, it, st = (np.asarray(a)[inv] for a in out)
    return PathResult(zs, oa, ob, res, it, st)


@dataclass(frozen=True)
class ConvolutionValue:
    """M-transform and Stieltjes transform of the convolution at ``z``."""

    z: complex
    M: complex
    m: complex
    sub: SubordinationValue


def _m_from_sub(mu_A: AtomicMeasure, sub: SubordinationValue) -> ConvolutionValue:
    s1 = kernels.moment_sums(mu_A.atoms, mu_A.weights, sub.omega_B)[1]
    M = 1.0 - 1.0 / s1
    if abs(1.0 - M) <= 1e-14:
        raise DomainError(f"M = 1 at z = {sub.z}; the Stieltjes transform has a pole")
    return ConvolutionValue(sub.z, M, M / (sub.z * (1.0 - M)), sub)


class ConvolutionHandle:
    """Solver state bound to a fixed pair ``(mu_A, mu_B)``.

    Edge data, the density on the default grid and quantiles are computed
    lazily and cached.  Instances are not mutated after the caches fill, so
    they can be shared between threads once warmed up.
    """

    def __init__(self, mu_A: AtomicMeasure, mu_B: AtomicMeasure,
                 opts: SolverOptions | None = None):
        self.mu_A = mu_A
        self.mu_B = mu_B
        self.opts = opts or _DEFAULT

    def solve(self, z: complex, warm: SubordinationValue | None = None) -> SubordinationValue:
        opts = self.opts if warm is None else replace(self.opts, warm_start=warm)
        return solve(self.mu_A, self.mu_B, z, opts)

    def m(self, z: complex) -> ConvolutionValue:
        return m_of_convolution(self, z)

    def omega_derivative(self, z: complex, value: SubordinationValue | None = None):
        return omega_derivative(self.mu_A, self.mu_B, z, value=value, opts=self.opts)

    @cached_property
    def edge(self):
        from .edge import locate_upper_edge

        return locate_upper_edge(self.mu_A, self.mu_B)

    @cached_property
    def density(self) -> GridDensity:
        return density_on_grid(self.mu_A, self.mu_B, default_grid(self.mu_A, self.mu_B, self.edge.E_plus),
                               opts=self.opts)

    def quantiles(self, N: int):
        from .measure import quantile_locations

        return quantile_locations(self.density, N)


def m_of_convolution(handle: ConvolutionHandle, z: complex,
                     value: SubordinationValue | None = None) -> ConvolutionValue:
    """Return ``M(z) = M_A(Omega_B(z))`` and ``m(z) = M / (z (1 - M))``."""
    sub = value if value is not None else handle.solve(z)
    return _m_from_sub(handle.mu_A, sub)


def default_grid(mu_A: AtomicMeasure, mu_B: AtomicMeasure, E_plus: float | None = None,
                 n: int = 2000) -> np.ndarray:
    """Uniform grid covering the support of the convolution.

    The support lies inside ``[a_min b_min, a_max b_max]``; if the upper edge
    is known the grid stops a little above it.
    """
    lo = mu_A.min * mu_B.min
    hi = mu_A.max * mu_B.max if E_plus is None else E_plus
    pad = 0.02 * (hi - lo) if hi > lo else 0.02 * hi
    return np.linspace(max(lo - pad, 0.5 * lo), hi + pad, n)


def density_on_grid(mu_A: AtomicMeasure, mu_B: AtomicMeasure, grid, eta_den: float = 1e-6,
                    opts: SolverOptions | None = None) -> GridDensity:
    """Density of the convolution by Stieltjes inversion at height ``eta_den``.

    The grid is swept left to right with warm starts.  Negative values from
    rounding are clipped to zero (the largest clipped magnitude is recorded);
    points where the solver fails are zeroed and flagged in the mask.
    """
    if not 1e-8 <= eta_den <= 1e-3:
        raise DomainError("eta_den must lie in [1e-8, 1e-3]")
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must be strictly ascending")
    opts = opts or _DEFAULT
    zs = np.ascontiguousarray(grid + 1j * eta_den)
    oa, ob, res, it, st = kernels.solve_path(mu_A.atoms, mu_A.weights, mu_B.atoms, mu_B.weights,
                                             zs, zs[0], *opts.kernel_args())
    values = np.zeros(grid.size)
    fail = np.asarray(st) != _CONVERGED
    for k in np.flatnonzero(~fail):
        s1 = kernels.moment_sums(mu_A.atoms, mu_A.weights, ob[k])[1]
        M = 1.0 - 1.0 / s1
        m = M / (zs[k] * (1.0 - M))
        values[k] = m.imag / math.pi
    bad = ~np.isfinite(values)
    fail |= bad
    values[bad] = 0.0
    clip = float(max(0.0, -values.min()))
    values = np.maximum(values, 0.0)
    return GridDensity(grid, values, clip_magnitude=clip, failure_mask=fail, eta=eta_den)


def omega_derivative(mu_A: AtomicMeasure, mu_B: AtomicMeasure, z: complex, order: int = 1,
                     value: SubordinationValue | None = None,
                     opts: SolverOptions | None = None) -> tuple[complex, complex]:
    """Derivatives ``(Omega_A'(z), Omega_B'(z))`` by implicit differentiation.

    Differentiating both equations of the system gives the linear system::

        [ -Omega_B            z M_A'(Omega_B) - Omega_A ] [Omega_A']   [-M_A(Omega_B)]
        [ z M_B'(Omega_A) - Omega_B           -Omega_A  ] [Omega_B'] = [-M_B(Omega_A)]

    Raises
    ------
    SingularityError
        If the system is numerically singular, which happens at the edge.
    """
    if order != 1:
        raise ConfigError("only first derivatives are available")
    z = complex(z)
    sub = value if value is not None else solve(mu_A, mu_B, z, opts)
    oa, ob = sub.omega_A, sub.omega_B
    _, s1a, s2a = kernels.moment_sums(mu_A.atoms, mu_A.weights, ob)
    _, s1b, s2b = kernels.moment_sums(mu_B.atoms, mu_B.weights, oa)
    ma, dma = 1.0 - 1.0 / s1a, s2a / (s1a * s1a)
    mb, dmb = 1.0 - 1.0 / s1b, s2b / (s1b * s1b)
    J = np.array([[-ob, z * dma - oa], [z * dmb - ob, -oa]], dtype=complex)
    rhs = np.array([-ma, -mb], dtype=complex)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    scale = np.linalg.norm(J[0]) * np.linalg.norm(J[1])
    if not scale > 0 or abs(det) <= 1e-12 * scale:
        raise SingularityError(f"subordination Jacobian is singular at z = {z}")
    da, db = np.linalg.solve(J, rhs)
    return complex(da), complex(db)
