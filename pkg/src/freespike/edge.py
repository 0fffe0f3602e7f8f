"""Upper spectral edge of the convolution and inverse subordination functions.

Above the support every quantity is real.  Writing ``omega = Omega_B(x)`` and
``y = Omega_A(x)`` for real ``x > E_+``, the system reads::

    M_A(omega) = M_B(y) = t,    x = omega * y / t

so the curve ``omega -> x(omega)`` is available in closed form once the
monotone branch of ``M_B`` above ``b_max`` is inverted.  ``x(omega)`` is
``Omega_B^{-1}``; it decreases and then increases, and its first local minimum
coming down from large ``omega`` is the edge ``E_+`` with ``Omega_B(E_+)`` the
minimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, DomainError, EdgeInconsistencyError, SolverError
from .measure import AtomicMeasure, GridDensity
from .subordination import (SolverOptions, SubordinationValue, m_of_convolution, omega_derivative,
                            solve, ConvolutionHandle)

__all__ = [
    "EdgeData",
    "locate_upper_edge",
    "inverse_omega_B",
    "inverse_omega_A",
    "inverse_omega_B_derivative",
    "inverse_omega_A_derivative",
    "inverse_point",
    "sqrt_coefficients_from_density",
]

_RTOL = 1e-15


@dataclass(frozen=True)
class EdgeData:
    """Upper edge of ``mu_A [x] mu_B`` and the subordination values there.

    Attributes
    ----------
    E_plus : float
        Upper edge of the support.
    omega_A_edge, omega_B_edge : float
        ``Omega_A(E_+)`` and ``Omega_B(E_+)``; these are the thresholds for
        b-spikes and a-spikes respectively.
    sqrt_coeff_A, sqrt_coeff_B : float
        Coefficients ``C`` in ``Omega(x) - Omega(E_+) ~ C sqrt(x - E_+)``;
        NaN for degenerate pairs.
    bracket : tuple of float
        Final bracket on ``omega`` around the minimizer.
    precision : float
        Width of that bracket.
    dist_A, dist_B : float
        ``omega_B_edge - max supp mu_A`` and ``omega_A_edge - max supp mu_B``.
    degenerate : bool
        One of the measures is a point mass; the thresholds then touch a
        support and the distances are zero.
    """

    E_plus: float
    omega_A_edge: float
    omega_B_edge: float
    sqrt_coeff_A: float
    sqrt_coeff_B: float
    bracket: tuple
    precision: float
    dist_A: float
    dist_B: float
    degenerate: bool = False
    im_m_above: float = math.nan
    im_m_below: float = math.nan

    def swapped(self) -> "EdgeData":
        """Edge data for the pair with the roles of A and B exchanged."""
        return EdgeData(self.E_plus, self.omega_B_edge, self.omega_A_edge, self.sqrt_coeff_B,
                        self.sqrt_coeff_A, self.bracket, self.precision, self.dist_B, self.dist_A,
                        self.degenerate, self.im_m_above, self.im_m_below)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


# ---------------------------------------------------------------------------
# real-axis helpers


def _t_and_dt(m: AtomicMeasure, s: float) -> tuple[float, float]:
    d = 1.0 / (m.atoms - s)
    wx = m.weights * m.atoms * d
    return float(wx.sum()), float(np.dot(wx, d))


def _m_real(m: AtomicMeasure, s: float) -> tuple[float, float]:
    """``M(s)`` and ``M'(s)`` for real ``s`` above the support."""
    T, dT = _t_and_dt(m, s)
    return 1.0 - 1.0 / T, dT / (T * T)


def _m_inverse_above(m: AtomicMeasure, t: float) -> float:
    """The unique ``y > max supp m`` with ``M_m(y) = t`` for ``t > 1``.

    On that half line ``T_m`` increases from ``-inf`` to ``0-``, so the
    equation ``T_m(y) = 1/(1 - t)`` has exactly one root.
    """
    if not t > 1.0:
        raise DomainError(f"M-transform values above the support exceed 1; got {t}")
    target = 1.0 / (1.0 - t)
    top = m.max
    f = lambda y: _t_and_dt(m, y)[0] - target  # noqa: E731
    lo_gap = 1e-3 * top
    for _ in range(1100):
        if f(top + lo_gap) < 0:
            break
        lo_gap *= 0.5
    else:
        raise SolverError("could not bracket the inverse M-transform from below")
    hi = top + max(1.0, 2.0 * m.mean / abs(target))
    for _ in range(60):
        if f(hi) > 0:
            break
        hi = top + 2.0 * (hi - top)
    else:
        raise SolverError("could not bracket the inverse M-transform from above")
    return optimize.brentq(f, top + lo_gap, hi, xtol=1e-300, rtol=_RTOL, maxiter=500)


@dataclass(frozen=True)
class _CurvePoint:
    omega: float
    t: float
    dt: float
    y: float
    dy: float
    x: float
    dx: float


def _curve(mu_X: AtomicMeasure, mu_Y: AtomicMeasure, omega: float) -> _CurvePoint:
    # omega is Omega_Y-side input living above supp mu_X; y lives above supp mu_Y
    t, dt = _m_real(mu_X, omega)
    y = _m_inverse_above(mu_Y, t)
    dmy = _m_real(mu_Y, y)[1]
    dy = dt / dmy
    x = omega * y / t
    dx = y / t + omega * dy / t - omega * y * dt / (t * t)
    return _CurvePoint(omega, t, dt, y, dy, x, dx)


# ---------------------------------------------------------------------------
# edge


def _degenerate_edge(mu_A: AtomicMeasure, mu_B: AtomicMeasure) -> EdgeData:
    # Omega for a point mass delta_c is z / c, so the edge is c times the
    # top of the other support and the threshold sits exactly on it
    if mu_B.n == 1:
        c = mu_B.atoms[0]
        E, oa, ob = c * mu_A.max, c, mu_A.max
    else:
        c = mu_A.atoms[0]
        E, oa, ob = c * mu_B.max, mu_B.max, c
    return EdgeData(float(E), float(oa), float(ob), math.nan, math.nan, (float(ob), float(ob)), 0.0,
                    float(ob - mu_A.max), float(oa - mu_B.max), degenerate=True)


def _im_m(handle: ConvolutionHandle, x: float, eta: float) -> float:
    opts = SolverOptions(max_iterations=20000)
    return float(m_of_convolution(handle, 0, value=solve(handle.mu_A, handle.mu_B, x + 1j * eta, opts)).m.imag)


def _density_edge(handle: ConvolutionHandle, guess: float, eta: float = 1e-7) -> float:
    # crude alternative: bisection on Im m crossing a small level
    lo, hi = 0.5 * guess, 1.5 * guess
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        try:
            v = _im_m(handle, mid, eta)
        except SolverError:
            return math.nan
        if v > 1e-3:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def locate_upper_edge(mu_A: AtomicMeasure, mu_B: AtomicMeasure, cross_validate: bool = True,
                      n_scan: int = 400) -> EdgeData:
    """Upper edge of ``mu_A [x] mu_B`` by minimizing the parametric curve.

    The derivative of ``x(omega)`` is analytic, so the minimizer is located
    as the first sign change of ``x'`` coming down from large ``omega`` on a
    logarithmic scan, then refined with Brent's method.

    Parameters
    ----------
    cross_validate : bool
        Check that ``Im m`` is small just above the edge and clearly positive
        just below it.

    Raises
    ------
    ConfigError
        If ``x'`` never changes sign, i.e. the minimum sits on the support of
        ``mu_A``.
    EdgeInconsistencyError
        If the Stieltjes-transform check disagrees with the parametric edge.
    """
    if mu_A.n == 1 or mu_B.n == 1:
        return _degenerate_edge(mu_A, mu_B)
    a_max = mu_A.max
    gaps = np.geomspace(1e-12 * a_max, 100.0 * (1.0 + a_max), n_scan)
    dx = np.array([_curve(mu_A, mu_B, a_max + g).dx for g in gaps])
    if dx[-1] <= 0:
        raise ConfigError("parametric edge curve is not increasing at large omega")
    neg = np.flatnonzero(dx <= 0)
    if neg.size == 0:
        raise ConfigError("no admissible bracket for the edge: the minimum touches supp mu_A")
    k = neg[-1]
    lo, hi = a_max + gaps[k], a_max + gaps[k + 1]
    root, info = optimize.brentq(lambda w: _curve(mu_A, mu_B, w).dx, lo, hi, xtol=1e-300,
                                 rtol=_RTOL, full_output=True)
    p = _curve(mu_A, mu_B, root)
    E = p.x
    # second derivative of x at the minimizer gives the square-root coefficient
    h = 1e-5 * (hi - lo + abs(root) * 1e-3)
    d2 = (_curve(mu_A, mu_B, root + h).dx - _curve(mu_A, mu_B, root - h).dx) / (2 * h)
    c_B = math.sqrt(2.0 / d2) if d2 > 0 else math.nan
    c_A = p.dy * c_B
    prec = abs(np.nextafter(root, math.inf) - root) * 4
    edge = EdgeData(float(E), float(p.y), float(root), abs(float(c_A)), float(c_B), (float(lo), float(hi)),
                    float(prec), float(root - a_max), float(p.y - mu_B.max))
    if cross_validate:
        edge = _cross_validate(mu_A, mu_B, edge)
    return edge


def _cross_validate(mu_A, mu_B, edge: EdgeData) -> EdgeData:
    handle = ConvolutionHandle(mu_A, mu_B)
    E = edge.E_plus
    try:
        above = _im_m(handle, E + 1e-3, 1e-7)
        below = _im_m(handle, E - 1e-2, 1e-7)
    except SolverError as exc:
        raise EdgeInconsistencyError(f"Stieltjes check could not be evaluated: {exc}",
                                     parametric=E, density_based=math.nan) from exc
    if not (above <= 1e-3 and below >= 1e-2):
        raise EdgeInconsistencyError(
            f"Im m = {above:.3e} above and {below:.3e} below the parametric edge {E}",
            parametric=E, density_based=_density_edge(handle, E))
    return EdgeData(**{**edge.__dict__, "im_m_above": above, "im_m_below": below})


# ---------------------------------------------------------------------------
# inverse subordination functions


@dataclass(frozen=True)
class InversePoint:
    """Solution of ``Omega_B(x) = a_hat`` (or the mirror) above the edge."""

    x: float
    omega_A: float
    omega_B: float
    dx: float


def _inverse_point(mu_X, mu_Y, hat: float) -> _CurvePoint:
    p = _curve(mu_X, mu_Y, hat)
    # the scalar defect in the y variable is monotone, so this root is unique
    if not p.y > mu_Y.max:
        raise SolverError("inverse landed inside the support")
    return p


def inverse_point(edge: EdgeData, mu_A: AtomicMeasure, mu_B: AtomicMeasure, hat: float,
                  side: str = "a") -> InversePoint:
    """Full inverse data for an a-spike (``side='a'``) or b-spike above threshold."""
    if side == "a":
        if not hat > edge.omega_B_edge:
            raise DomainError(f"a_hat = {hat} is not above the threshold {edge.omega_B_edge}")
        p = _inverse_point(mu_A, mu_B, hat)
        return InversePoint(p.x, p.y, hat, p.dx)
    if side == "b":
        if not hat > edge.omega_A_edge:
            raise DomainError(f"b_hat = {hat} is not above the threshold {edge.omega_A_edge}")
        p = _inverse_point(mu_B, mu_A, hat)
        return InversePoint(p.x, hat, p.y, p.dx)
    raise ConfigError("side must be 'a' or 'b'")


def inverse_omega_B(edge: EdgeData, mu_A: AtomicMeasure, mu_B: AtomicMeasure, a_hat: float) -> float:
    """``Omega_B^{-1}(a_hat)``, equal to ``E_+`` at or below the threshold.

    Above the threshold the scalar equation
    ``M_B(x M_A(a_hat) / a_hat) = M_A(a_hat)`` is solved in the variable
    ``y = x M_A(a_hat) / a_hat`` on ``(max supp mu_B, inf)``, where the defect
    is monotone and has exactly one root.
    """
    if not a_hat > 0:
        raise DomainError("a_hat must be positive")
    if a_hat <= edge.omega_B_edge:
        return edge.E_plus
    return inverse_point(edge, mu_A, mu_B, a_hat, "a").x


def inverse_omega_A(edge: EdgeData, mu_A: AtomicMeasure, mu_B: AtomicMeasure, b_hat: float) -> float:
    """``Omega_A^{-1}(b_hat)``; mirror of :func:`inverse_omega_B`."""
    if not b_hat > 0:
        raise DomainError("b_hat must be positive")
    if b_hat <= edge.omega_A_edge:
        return edge.E_plus
    return inverse_point(edge, mu_A, mu_B, b_hat, "b").x


def _inverse_derivative(edge, mu_A, mu_B, hat, side):
    p = inverse_point(edge, mu_A, mu_B, hat, side)
    sub = SubordinationValue(complex(p.x), complex(p.omega_A), complex(p.omega_B), 0.0, 0)
    da, db = omega_derivative(mu_A, mu_B, p.x, value=sub)
    d = (db if side == "a" else da).real
    if not d > 0:
        raise DomainError("subordination function is not increasing at the inverse point")
    return 1.0 / d


def inverse_omega_B_derivative(edge: EdgeData, mu_A: AtomicMeasure, mu_B: AtomicMeasure,
                               a_hat: float) -> float:
    """``(Omega_B^{-1})'(a_hat) = 1 / Omega_B'(x)`` at ``x = Omega_B^{-1}(a_hat)``.

    Raises
    ------
    DomainError
        At or below the threshold, where the derivative is undefined.
    """
    return _inverse_derivative(edge, mu_A, mu_B, a_hat, "a")


def inverse_omega_A_derivative(edge: EdgeData, mu_A: AtomicMeasure, mu_B: AtomicMeasure,
                               b_hat: float) -> float:
    """Mirror of :func:`inverse_omega_B_derivative` for b-spikes."""
    return _inverse_derivative(edge, mu_A, mu_B, b_hat, "b")


def sqrt_coefficients_from_density(edge: EdgeData, mu_A: AtomicMeasure, density: GridDensity,
                                   t_range: tuple[float, float] = (1e-3, 1e-2)) -> tuple[float, float]:
    """Square-root coefficients implied by the density near the edge.

    With ``rho(E_+ - t) ~ c sqrt(t)`` the Stieltjes inversion gives
    ``C_B = pi c E_+ (1 - M)**2 / M_A'(Omega_B(E_+))`` with ``M = M_A(Omega_B(E_+))``.

    Returns
    -------
    (c, C_B) : tuple of float
        The density coefficient (median of ``rho(E_+ - t)/sqrt(t)``) and the
        implied subordination coefficient.
    """
    E = edge.E_plus
    t = np.geomspace(*t_range, 25)
    rho = np.interp(E - t, density.grid, density.values)
    c = float(np.median(rho / np.sqrt(t)))
    M, dM = _m_real(mu_A, edge.omega_B_edge)
    return c, math.pi * c * E * (1.0 - M) ** 2 / dM
