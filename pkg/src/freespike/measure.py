"""Probability measures on the positive half-line and their analytic transforms.

Every solver in the package works on :class:`AtomicMeasure` objects, the
empirical spectral distributions of the diagonal matrices ``A`` and ``B``.
Absolutely continuous limits enter only through :class:`DensitySpec`, which is
discretized at quantile midpoints and compared against atomic measures with the
Levy distance.

Transforms follow the usual conventions::

    m(z) = sum_k w_k / (x_k - z)                  (Stieltjes)
    M(z) = z m(z) / (1 + z m(z))
         = 1 - 1 / sum_k w_k x_k / (x_k - z)      (M-transform)
    L(z) = M(z) / z
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy import stats

from ._backend import kernels
from .errors import ConfigError, DomainError

__all__ = [
    "AtomicMeasure",
    "DensitySpec",
    "GridDensity",
    "QuantileLocations",
    "stieltjes",
    "m_transform",
    "m_transform_integral",
    "m_transform_derivative",
    "l_transform",
    "discretize",
    "levy_distance",
    "quantile_locations",
]

MERGE_TOL = 1e-12
_ATOM_TOL = 1e-14
_POLE_TOL = 1e-14


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finitely supported probability measure on ``(0, inf)``.

    Atoms are sorted ascending on construction; atoms closer than
    ``1e-12`` are merged and their weights summed.  Weights must sum to one
    within ``1e-9`` and are then renormalized exactly.

    Parameters
    ----------
    atoms : array_like
        Strictly positive support points, in any order.
    weights : array_like, optional
        Nonnegative masses. Defaults to equal weights.
    label : str
        Free-text name used in reports.
    """

    atoms: np.ndarray
    weights: np.ndarray = None
    label: str = ""

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        if atoms.size == 0:
            raise ConfigError("an atomic measure needs at least one atom")
        if self.weights is None:
            weights = np.full(atoms.size, 1.0 / atoms.size)
        else:
            weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.shape != atoms.shape:
            raise ConfigError("atoms and weights must have the same length")
        if not np.all(np.isfinite(atoms)) or np.any(atoms <= 0):
            raise ConfigError("atoms must be finite and strictly positive")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ConfigError("weights must be finite and nonnegative")
        total = weights.sum()
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"weights sum to {total}, expected 1")

        order = np.argsort(atoms, kind="stable")
        atoms, weights = atoms[order], weights[order]
        keep = weights > 0
        atoms, weights = atoms[keep], weights[keep]
        # merge near-duplicates into the first atom of each run
        new_run = np.empty(atoms.size, dtype=bool)
        new_run[0] = True
        new_run[1:] = np.diff(atoms) > MERGE_TOL
        starts = np.flatnonzero(new_run)
        merged_w = np.add.reduceat(weights, starts)
        merged_x = atoms[starts]
        merged_w = merged_w / merged_w.sum()

        object.__setattr__(self, "atoms", _readonly(np.ascontiguousarray(merged_x)))
        object.__setattr__(self, "weights", _readonly(np.ascontiguousarray(merged_w)))

    @classmethod
    def point_mass(cls, x: float, label: str = "") -> "AtomicMeasure":
        return cls([x], [1.0], label=label or f"delta({x:g})")

    @property
    def n(self) -> int:
        return int(self.atoms.size)

    @property
    def max(self) -> float:
        return float(self.atoms[-1])

    @property
    def min(self) -> float:
        return float(self.atoms[0])

    @property
    def mean(self) -> float:
        return float(np.dot(self.atoms, self.weights))

    @property
    def breakpoints(self) -> np.ndarray:
        return self.atoms

    def cdf(self, x):
        """Right-continuous distribution function ``mu((-inf, x])``."""
        cum = np.concatenate(([0.0], np.cumsum(self.weights)))
        idx = np.searchsorted(self.atoms, x, side="right")
        return np.minimum(cum[idx], 1.0)

    def cdf_left(self, x):
        """Left limit ``mu((-inf, x))``."""
        cum = np.concatenate(([0.0], np.cumsum(self.weights)))
        idx = np.searchsorted(self.atoms, x, side="left")
        return np.minimum(cum[idx], 1.0)

    def to_csv(self, path) -> None:
        data = np.column_stack([self.atoms, self.weights])
        np.savetxt(path, data, delimiter=",", header="atom,weight", comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, label: str = "") -> "AtomicMeasure":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], label=label or Path(path).stem)

    def __repr__(self) -> str:
        return f"AtomicMeasure(n={self.n}, range=[{self.min:.6g}, {self.max:.6g}], label={self.label!r})"


# ---------------------------------------------------------------------------
# piecewise-linear density helpers (shared by table specs and grid densities)


def _pl_cell_masses(x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return 0.5 * np.diff(x) * (rho[:-1] + rho[1:])


def _pl_first_moment(x: np.ndarray, rho: np.ndarray) -> float:
    h = np.diff(x)
    x0, x1, r0, r1 = x[:-1], x[1:], rho[:-1], rho[1:]
    return float(np.sum(h * (x0 * (2 * r0 + r1) + x1 * (r0 + 2 * r1)) / 6.0))


def _pl_cdf(x: np.ndarray, rho: np.ndarray, cum: np.ndarray, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2)
    h = x[k + 1] - x[k]
    s = np.clip(t - x[k], 0.0, h)
    slope = (rho[k + 1] - rho[k]) / h
    val = cum[k] + rho[k] * s + 0.5 * slope * s * s
    val = np.where(t < x[0], 0.0, val)
    return np.where(t >= x[-1], cum[-1], val)


def _pl_inverse(x: np.ndarray, rho: np.ndarray, cum: np.ndarray, mass) -> np.ndarray:
    # smallest-gap inverse of the cumulative of a piecewise-linear density;
    # for a zero target returns the start of the support
    mass = np.atleast_1d(np.asarray(mass, dtype=float))
    k = np.searchsorted(cum, mass, side="right") - 1
    k = np.clip(k, 0, x.size - 2)
    m = np.clip(mass - cum[k], 0.0, None)
    h = x[k + 1] - x[k]
    r0 = rho[k]
    delta = rho[k + 1] - rho[k]
    disc = np.maximum(r0 * r0 + 2.0 * delta * m / h, 0.0)
    den = r0 + np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(den > 0, 2.0 * m / den, 0.0)
    return x[k] + np.clip(s, 0.0, h)


_KINDS = ("uniform", "beta-like", "table")


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Absolutely continuous law on a single interval of ``(0, inf)``.

    ``kind`` is one of ``"uniform"`` (``lo``, ``hi``), ``"beta-like"``
    (density proportional to ``(x-lo)**t_minus * (hi-x)**t_plus``) or
    ``"table"`` (piecewise-linear density through ``x``, ``rho``).  With
    ``normalize=True`` (the default) the support is rescaled so the mean is
    exactly one.
    """

    kind: str
    lo: float = None
    hi: float = None
    t_minus: float = 0.0
    t_plus: float = 0.0
    x: np.ndarray = None
    rho: np.ndarray = None
    normalize: bool = True
    scale: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown density kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "table":
            self._init_table()
        else:
            if self.lo is None or self.hi is None:
                raise ConfigError(f"{self.kind} density needs lo and hi")
            lo, hi = float(self.lo), float(self.hi)
            if not (0 < lo < hi < math.inf):
                raise ConfigError(f"support must satisfy 0 < lo < hi, got ({lo}, {hi})")
            if self.kind == "beta-like":
                for t in (self.t_minus, self.t_plus):
                    if not -1.0 < t < 1.0:
                        raise ConfigError("edge exponents must lie in (-1, 1)")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
            if self.normalize:
                s = 1.0 / self._raw_mean()
                object.__setattr__(self, "lo", lo * s)
                object.__setattr__(self, "hi", hi * s)
                object.__setattr__(self, "scale", s)

    def _init_table(self):
        if self.x is None or self.rho is None:
            raise ConfigError("table density needs x and rho")
        x = np.asarray(self.x, dtype=float).ravel()
        rho = np.asarray(self.rho, dtype=float).ravel()
        if x.size < 2 or x.shape != rho.shape:
            raise ConfigError("table density needs matching x, rho of length >= 2")
        if np.any(np.diff(x) <= 0) or x[0] <= 0:
            raise ConfigError("table grid must be strictly ascending and positive")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ConfigError("table density must be finite and nonnegative")
        mass = _pl_cell_masses(x, rho).sum()
        if not mass > 0:
            raise ConfigError("table density is not normalizable (zero mass)")
        rho = rho / mass
        s = 1.0
        if self.normalize:
            s = 1.0 / _pl_first_moment(x, rho)
            x = x * s
            rho = rho / s
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "rho", _readonly(rho))
        object.__setattr__(self, "lo", float(x[0]))
        object.__setattr__(self, "hi", float(x[-1]))
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "_cum", np.concatenate(([0.0], np.cumsum(_pl_cell_masses(x, rho)))))

    def _raw_mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        a, b = self.t_minus + 1.0, self.t_plus + 1.0
        return self.lo + (self.hi - self.lo) * a / (a + b)

    @property
    def mean(self) -> float:
        if self.kind == "table":
            return _pl_first_moment(self.x, self.rho)
        return self._raw_mean()

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @property
    def breakpoints(self) -> np.ndarray:
        if self.kind == "table":
            return self.x
        return np.array([self.lo, self.hi])

    def _beta(self):
        return stats.beta(self.t_minus + 1.0, self.t_plus + 1.0, loc=self.lo, scale=self.hi - self.lo)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "uniform":
            return np.clip((t - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        if self.kind == "beta-like":
            return self._beta().cdf(t)
        return _pl_cdf(self.x, self.rho, self._cum, t)

    cdf_left = cdf

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "uniform":
            return self.lo + q * (self.hi - self.lo)
        if self.kind == "beta-like":
            return self._beta().ppf(q)
        return _pl_inverse(self.x, self.rho, self._cum, q).reshape(q.shape)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "uniform":
            inside = (t >= self.lo) & (t <= self.hi)
            return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)
        if self.kind == "beta-like":
            return self._beta().pdf(t)
        return np.interp(t, self.x, self.rho, left=0.0, right=0.0)

    @classmethod
    def uniform(cls, lo: float, hi: float, normalize: bool = True) -> "DensitySpec":
        return cls("uniform", lo=lo, hi=hi, normalize=normalize)

    @classmethod
    def beta_like(cls, lo, hi, t_minus, t_plus, normalize: bool = True) -> "DensitySpec":
        return cls("beta-like", lo=lo, hi=hi, t_minus=t_minus, t_plus=t_plus, normalize=normalize)

    @classmethod
    def table(cls, x, rho, normalize: bool = True) -> "DensitySpec":
        return cls("table", x=x, rho=rho, normalize=normalize)

    @classmethod
    def from_dict(cls, d: dict) -> "DensitySpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise ConfigError("density spec is missing 'kind'")
        normalize = bool(d.pop("normalize", True))
        try:
            if kind == "uniform":
                return cls.uniform(d["lo"], d["hi"], normalize=normalize)
            if kind in ("beta-like", "beta_like", "beta"):
                return cls.beta_like(d["lo"], d["hi"], d.get("t_minus", 0.0), d.get("t_plus", 0.0),
                                     normalize=normalize)
            if kind == "table":
                return cls.table(d["x"], d["rho"], normalize=normalize)
        except KeyError as exc:
            raise ConfigError(f"density spec of kind {kind!r} is missing {exc}") from None
        raise ConfigError(f"unknown density kind {kind!r}")

    @classmethod
    def from_json(cls, text_or_path) -> "DensitySpec":
        p = Path(str(text_or_path))
        text = p.read_text() if p.exists() else str(text_or_path)
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        if self.kind == "table":
            return {"kind": "table", "x": self.x.tolist(), "rho": self.rho.tolist(), "normalize": False}
        out = {"kind": self.kind, "lo": self.lo, "hi": self.hi, "normalize": False}
        if self.kind == "beta-like":
            out.update(t_minus=self.t_minus, t_plus=self.t_plus)
        return out


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Density sampled on an ascending grid.

    ``clip_magnitude`` records the largest negative value removed by clipping
    at zero; ``failure_mask`` marks grid points where the solver failed (their
    value is set to zero).
    """

    grid: np.ndarray
    values: np.ndarray
    clip_magnitude: float = 0.0
    failure_mask: np.ndarray = None
    eta: float = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if grid.shape != values.shape or grid.size < 2:
            raise ConfigError("grid and values must match and have length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("grid must be strictly ascending")
        if np.any(values < 0):
            raise ConfigError("density values must be nonnegative")
        mask = np.zeros(grid.size, dtype=bool) if self.failure_mask is None else np.asarray(self.failure_mask, bool)
        object.__setattr__(self, "grid", _readonly(grid))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "failure_mask", _readonly(mask))

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self.values, self.grid))

    def is_normalized(self, tol: float = 5e-3) -> bool:
        return abs(self.integral() - 1.0) <= tol

    @property
    def complete(self) -> bool:
        return not bool(self.failure_mask.any())

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.grid, self.values]), delimiter=",",
                   header="x,rho", comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# transforms


def _check_real_z(m: AtomicMeasure, z: complex) -> None:
    if z.imag == 0.0:
        k = int(np.argmin(np.abs(m.atoms - z.real)))
        if abs(m.atoms[k] - z.real) <= _ATOM_TOL:
            raise DomainError(f"z = {z.real} sits on atom {m.atoms[k]} of {m.label or 'the measure'}")


def _scalar_or_map(fn, m, z):
    if np.ndim(z) == 0:
        return fn(m, complex(z))
    z = np.asarray(z, dtype=complex)
    return np.array([fn(m, complex(v)) for v in z.ravel()]).reshape(z.shape)


def _stieltjes(m: AtomicMeasure, z: complex) -> complex:
    _check_real_z(m, z)
    return kernels.moment_sums(m.atoms, m.weights, z)[0]


def stieltjes(m: AtomicMeasure, z):
    """Stieltjes transform ``sum_k w_k / (x_k - z)``.

    Raises :class:`DomainError` for real ``z`` within ``1e-14`` of an atom.
    """
    return _scalar_or_map(_stieltjes, m, z)


def _m_transform(m: AtomicMeasure, z: complex) -> complex:
    s = _stieltjes(m, z)
    denom = 1.0 + z * s
    if abs(denom) <= _POLE_TOL:
        raise DomainError(f"M-transform pole at z = {z} (1 + z m(z) vanishes)")
    return z * s / denom


def m_transform(m: AtomicMeasure, z):
    """M-transform through the Stieltjes transform, ``z m / (1 + z m)``."""
    return _scalar_or_map(_m_transform, m, z)


def _m_transform_integral(m: AtomicMeasure, z: complex) -> complex:
    _check_real_z(m, z)
    s1 = kernels.moment_sums(m.atoms, m.weights, z)[1]
    if abs(s1) <= _POLE_TOL:
        raise DomainError(f"M-transform pole at z = {z} (integral of x/(x-z) vanishes)")
    return 1.0 - 1.0 / s1


def m_transform_integral(m: AtomicMeasure, z):
    """M-transform through ``1 - (integral of x/(x-z))**-1``.

    Algebraically identical to :func:`m_transform`; kept as an independent
    code path for cross-checking.
    """
    return _scalar_or_map(_m_transform_integral, m, z)


def _m_transform_derivative(m: AtomicMeasure, z: complex) -> complex:
    _check_real_z(m, z)
    _, s1, s2 = kernels.moment_sums(m.atoms, m.weights, z)
    if abs(s1) <= _POLE_TOL:
        raise DomainError(f"M-transform pole at z = {z}")
    return s2 / (s1 * s1)


def m_transform_derivative(m: AtomicMeasure, z):
    """Exact derivative of the M-transform."""
    return _scalar_or_map(_m_transform_derivative, m, z)


def l_transform(m: AtomicMeasure, z):
    """L-transform ``M(z) / z``."""
    return m_transform(m, z) / z


# ---------------------------------------------------------------------------
# discretization and distances


def discretize(spec: DensitySpec, n: int, label: str = "") -> AtomicMeasure:
    """Equal-weight atoms at the ``(j - 1/2)/n`` quantiles of ``spec``."""
    if n < 2:
        raise ConfigError("discretization needs n >= 2")
    q = (np.arange(1, n + 1) - 0.5) / n
    atoms = np.asarray(spec.ppf(q), dtype=float)
    return AtomicMeasure(atoms, np.full(n, 1.0 / n), label=label or f"{spec.kind}[{n}]")


Measure = Union[AtomicMeasure, DensitySpec]


def _candidates(f: Measure, g: Measure, shift: float) -> np.ndarray:
    pts = [g.breakpoints, f.breakpoints + shift]
    if isinstance(f, DensitySpec) and isinstance(g, DensitySpec):
        # neither CDF is a step function; fall back to a fine scan
        lo = min(f.lo + shift, g.lo)
        hi = max(f.hi + shift, g.hi)
        pts.append(np.linspace(lo, hi, 20001))
    return np.concatenate(pts)


def _levy_feasible(f: Measure, g: Measure, eps: float) -> bool:
    # Between consecutive candidate points one CDF is constant and the other
    # monotone, so each one-sided sup is attained at a candidate either from
    # the right or as a left limit.
    xs = _candidates(f, g, -eps)
    d_right = g.cdf(xs) - f.cdf(xs + eps)
    d_left = g.cdf_left(xs) - f.cdf_left(xs + eps)
    if max(d_right.max(), d_left.max()) > eps:
        return False
    xs = _candidates(f, g, eps)
    d_right = f.cdf(xs - eps) - g.cdf(xs)
    d_left = f.cdf_left(xs - eps) - g.cdf_left(xs)
    return bool(max(d_right.max(), d_left.max()) <= eps)


def levy_distance(m1: Measure, m2: Measure) -> float:
    """Levy distance between two measures.

    When at least one argument is atomic, feasibility of a candidate ``eps`` is
    decided exactly by evaluating both distribution functions at breakpoints;
    the infimum is then located by bisection down to the spacing of doubles.
    Two continuous laws are compared on a fine grid instead.
    """
    if _levy_feasible(m1, m2, 0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _levy_feasible(m1, m2, mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class QuantileLocations:
    """Typical locations ``gamma_1 >= ... >= gamma_N`` and a precision note."""

    locations: np.ndarray
    mass: float
    warning: str | None = None


def quantile_locations(density: GridDensity, N: int) -> QuantileLocations:
    """Solve ``integral_{gamma_j}^inf rho = j/N`` for ``j = 1..N``.

    The density is treated as piecewise linear between grid points, whose
    cumulative is piecewise quadratic and inverted in closed form.  The total
    mass is renormalized to one first.
    """
    if N < 1:
        raise ConfigError("N must be positive")
    x, rho = density.grid, density.values
    cells = _pl_cell_masses(x, rho)
    total = cells.sum()
    if not total > 0:
        raise ConfigError("density has zero mass")
    rho = rho / total
    cum = np.concatenate(([0.0], np.cumsum(cells / total)))
    cum[-1] = 1.0
    j = np.arange(1, N + 1)
    gam = _pl_inverse(x, rho, cum, np.clip(1.0 - j / N, 0.0, 1.0))
    warning = None
    if abs(total - 1.0) > 5e-3:
        warning = f"density mass {total:.6g} differs from 1 by more than 5e-3"
    top = x[np.flatnonzero(rho > 0)[-1]] if np.any(rho > 0) else x[-1]
    cells_in_tail = np.count_nonzero((x > gam[0]) & (x <= top))
    if cells_in_tail < 2:
        note = "tail mass 1/N resolved by fewer than 2 grid cells"
        warning = note if warning is None else f"{warning}; {note}"
    return QuantileLocations(_readonly(gam), float(total), warning)
