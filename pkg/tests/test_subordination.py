from __future__ import annotations

import cmath

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freespike.errors import ConfigError, DomainError, SingularityError, SolverError
from freespike.measure import AtomicMeasure, DensitySpec, discretize, m_transform, m_transform_derivative
from freespike.subordination import (
    ConvolutionHandle,
    SolverOptions,
    SubordinationValue,
    default_grid,
    density_on_grid,
    m_of_convolution,
    omega_derivative,
    solve,
    solve_grid,
)

delta1 = AtomicMeasure.point_mass(1.0)


def defects(mu_A, mu_B, v):
    """Both system defects, recomputed through the Stieltjes-based transform path."""
    prod = v.omega_A * v.omega_B
    return (abs(v.z * m_transform(mu_A, v.omega_B) - prod), abs(v.z * m_transform(mu_B, v.omega_A) - prod))


@pytest.fixture(scope="module")
def pair():
    m = discretize(DensitySpec.uniform(0.5, 1.5), 1000)
    return m, m


@pytest.fixture(scope="module")
def generic():
    return (discretize(DensitySpec.uniform(0.5, 1.5), 300),
            discretize(DensitySpec.beta_like(0.2, 3.0, 0.5, 0.5), 300))


def test_options_validation():
    with pytest.raises(ConfigError):
        SolverOptions(tolerance=0.0)
    with pytest.raises(ConfigError):
        SolverOptions(max_iterations=0)
    with pytest.raises(ConfigError):
        SolverOptions(damping=1.5)


def test_identity_pair():
    v = solve(delta1, delta1, 2 + 1j)
    assert v.omega_A == pytest.approx(2 + 1j, abs=1e-14)
    assert v.omega_B == pytest.approx(2 + 1j, abs=1e-14)


def test_identity_element(uniform_1000):
    v = solve(uniform_1000, delta1, -1.0)
    assert v.omega_B == pytest.approx(-1.0, abs=1e-12)
    assert v.omega_A == pytest.approx(m_transform(uniform_1000, -1.0), abs=1e-12)


def test_uniform_pair_near_support(pair):
    v = solve(*pair, 2 + 0.01j)
    assert v.residual <= 1e-12 * (1 + abs(v.z) ** 2)
    assert v.omega_A.imag > 0 and v.omega_B.imag > 0
    assert max(defects(*pair, v)) <= 1e-11 * (1 + abs(v.z) ** 2)


def test_zero_rejected(pair):
    with pytest.raises(DomainError):
        solve(*pair, 0.0)


def test_nonconvergence_carries_state(pair):
    with pytest.raises(SolverError) as info:
        solve(*pair, 1.9 + 1e-4j, SolverOptions(max_iterations=1, accelerate=False))
    assert info.value.iterations >= 1 and info.value.residual is not None and info.value.last is not None


def test_warm_start_cuts_iterations(pair):
    cold = solve(*pair, 1.95 + 0.001j)
    warm = solve(*pair, 1.951 + 0.001j, SolverOptions(warm_start=cold))
    assert warm.iterations <= cold.iterations


def test_m_of_convolution_examples(uniform_1000):
    z = 0.4 + 0.3j
    c = m_of_convolution(ConvolutionHandle(delta1, delta1), z)
    assert c.M == pytest.approx(z, abs=1e-13)
    assert c.m == pytest.approx(1 / (1 - z), abs=1e-12)
    c = ConvolutionHandle(uniform_1000, delta1).m(z)
    assert c.M == pytest.approx(m_transform(uniform_1000, z), abs=1e-12)


def test_both_sides_agree(pair, generic):
    for mu_A, mu_B in (pair, generic):
        for z in (1.2 + 0.5j, 3.0 + 0.01j, -2.0 + 0.0j, 0.3 + 2.0j):
            v = solve(mu_A, mu_B, z)
            lhs, rhs = m_transform(mu_A, v.omega_B), m_transform(mu_B, v.omega_A)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_solve_grid_matches_pointwise(generic):
    zs = np.array([2.5 + 0.1j, 0.7 + 0.05j, 1.5 + 0.5j, 4 + 0.001j])
    path = solve_grid(*generic, zs)
    assert path.converged.all()
    for k, z in enumerate(zs):
        v = solve(*generic, z)
        assert path.value(k).omega_A == pytest.approx(v.omega_A, abs=1e-9)


def test_density_uniform_pair(pair):
    handle = ConvolutionHandle(*pair)
    dens = handle.density
    assert dens.values.min() >= 0
    assert abs(dens.integral() - 1.0) <= 5e-3
    mean = np.trapezoid(dens.grid * dens.values, dens.grid)
    assert abs(mean - 1.0) <= 5e-3
    t = np.geomspace(1e-3, 1e-2, 20)
    ratio = np.interp(handle.edge.E_plus - t, dens.grid, dens.values) / np.sqrt(t)
    assert ratio.max() / ratio.min() <= 2.0


def test_density_identity_follows_a(uniform_spec):
    mu_A = discretize(uniform_spec, 400)
    grid = default_grid(mu_A, delta1, n=800)
    dens = density_on_grid(mu_A, delta1, grid, eta_den=1e-3)
    inside = (grid >= 0.5) & (grid <= 1.5)
    assert np.trapezoid(dens.values[inside], grid[inside]) >= 0.98


def test_density_argument_checks(pair):
    with pytest.raises(DomainError):
        density_on_grid(*pair, np.linspace(0.1, 3, 10), eta_den=1e-2)
    with pytest.raises(ConfigError):
        density_on_grid(*pair, np.array([1.0, 0.5]))


def test_omega_derivative_examples(uniform_1000):
    da, db = omega_derivative(delta1, delta1, 3 + 1j)
    assert da == pytest.approx(1.0, abs=1e-12) and db == pytest.approx(1.0, abs=1e-12)
    z = -0.7 + 0.2j
    da, db = omega_derivative(uniform_1000, delta1, z)
    assert db == pytest.approx(1.0, abs=1e-10)
    assert da == pytest.approx(m_transform_derivative(uniform_1000, z), rel=1e-9)
    with pytest.raises(ConfigError):
        omega_derivative(delta1, delta1, 2.0, order=2)


def test_omega_derivative_sqrt_scaling(generic):
    h = ConvolutionHandle(*generic)
    E = h.edge.E_plus
    near = omega_derivative(*generic, E + 0.025)[1].real
    far = omega_derivative(*generic, E + 0.1)[1].real
    assert near / far == pytest.approx(2.0, rel=0.3)


def test_omega_derivative_singular_at_edge(pair):
    e = ConvolutionHandle(*pair).edge
    at_edge = SubordinationValue(complex(e.E_plus), complex(e.omega_A_edge), complex(e.omega_B_edge), 0.0, 0)
    with pytest.raises(SingularityError):
        omega_derivative(*pair, e.E_plus, value=at_edge)


# ---------------------------------------------------------------------------
# properties

point_strategy = st.tuples(st.floats(0.1, 4.0), st.floats(1e-3, 2.0)).map(lambda t: complex(*t))


@settings(max_examples=50, deadline=None)
@given(point_strategy)
def test_property_half_plane_and_argument(generic, z):
    v = solve(*generic, z)
    assert v.omega_A.imag > 0 and v.omega_B.imag > 0
    assert cmath.phase(v.omega_A) >= cmath.phase(z) - 1e-12
    assert cmath.phase(v.omega_B) >= cmath.phase(z) - 1e-12
    assert max(defects(*generic, v)) <= 1e-11 * (1 + abs(z) ** 2)


@settings(max_examples=30, deadline=None)
@given(point_strategy)
def test_property_conjugate_and_swap(generic, z):
    mu_A, mu_B = generic
    v = solve(mu_A, mu_B, z)
    c = solve(mu_A, mu_B, z.conjugate())
    assert abs(c.omega_A - v.omega_A.conjugate()) <= 1e-10 * abs(v.omega_A)
    assert abs(c.omega_B - v.omega_B.conjugate()) <= 1e-10 * abs(v.omega_B)
    s = solve(mu_B, mu_A, z)
    assert abs(s.omega_A - v.omega_B) <= 1e-10 * abs(v.omega_B)
    M1 = ConvolutionHandle(mu_A, mu_B).m(z).M
    M2 = ConvolutionHandle(mu_B, mu_A).m(z).M
    assert abs(M1 - M2) <= 1e-10 * max(1.0, abs(M1))


@settings(max_examples=30, deadline=None)
@given(point_strategy)
def test_property_identity_element(uniform_1000, z):
    v = solve(uniform_1000, delta1, z)
    assert abs(v.omega_B - z) <= 1e-10 * (1 + abs(z))


def test_property_derivative_vs_finite_difference(generic):
    rng = np.random.default_rng(7)
    zs = rng.uniform(0.2, 4.0, 50) + 1j * rng.uniform(0.05, 1.5, 50)
    h = 1e-6
    for z in zs:
        da, db = omega_derivative(*generic, z)
        up, dn = solve(*generic, z + h), solve(*generic, z - h)
        fa = (up.omega_A - dn.omega_A) / (2 * h)
        fb = (up.omega_B - dn.omega_B) / (2 * h)
        assert abs(da - fa) <= 1e-5 * abs(da)
        assert abs(db - fb) <= 1e-5 * abs(db)
