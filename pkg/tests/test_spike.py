from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freespike.edge import inverse_omega_A, inverse_omega_B, locate_upper_edge
from freespike.errors import ConfigError, DomainError
from freespike.measure import DensitySpec, discretize, m_transform
from freespike.spike import (
    MAX_SPIKES,
    SpikeModel,
    base_atoms,
    classify,
    master_equation_factors,
    predict,
    predict_nonoutlier_bounds,
    predict_outlier_locations,
    predict_overlaps,
    separations,
    sticking_bound,
)

N = 1000
# 30-digit evaluation (mpmath) for the uniform(0.5, 1.5) pair with 1000 midpoint atoms and a
# spike at threshold + 0.5: outlier location and overlap a * (x'(a)) / x(a) on the curve x(w) = w^2 / M(w).
LOCATION_UNIFORM = 2.24497803565228127402
OVERLAP_UNIFORM = 0.831795651390736448413


@pytest.fixture(scope="module")
def base():
    a = discretize(DensitySpec.uniform(0.5, 1.5), N).atoms[::-1].copy()
    return a, a.copy(), locate_upper_edge(*(2 * [discretize(DensitySpec.uniform(0.5, 1.5), N)]))


@pytest.fixture(scope="module")
def identity():
    a = discretize(DensitySpec.uniform(0.5, 1.5), N).atoms[::-1].copy()
    b = np.ones(N)
    m = SpikeModel(a, b)
    return a, b, locate_upper_edge(m.mu_A, m.mu_B)


@pytest.fixture(scope="module")
def single(base):
    a, b, edge = base
    return SpikeModel.from_margins(a, b, edge, [0.5]), edge


# ---------------------------------------------------------------------------
# model


def test_model_basics(base):
    a, b, edge = base
    m = SpikeModel(a[::-1], b, [0.5, 0.1])
    assert m.N == N and m.r == 2 and m.s == 0
    assert np.all(np.diff(m.base_a) <= 0)
    assert m.a_hat[0] == pytest.approx(m.base_a[0] * 1.5)
    assert m.a_hat[1] == pytest.approx(m.base_a[1] * 1.1)
    np.testing.assert_array_equal(m.a_hat[2:], m.base_a[2:])
    np.testing.assert_array_equal(m.b_hat, m.base_b)
    assert m.unspiked().r == 0


def test_canonical_order(base):
    a, b, _ = base
    m = SpikeModel(a, b, [0.0, 1.0])
    # the stronger spike on the second atom overtakes the first
    assert m.a_hat[0] == pytest.approx(a[1] * 2.0)
    assert m.a_hat[1] == pytest.approx(a[0])


def test_model_validation(base):
    a, b, edge = base
    with pytest.raises(ConfigError):
        SpikeModel(a, b, [-0.1])
    with pytest.raises(ConfigError):
        SpikeModel(a, b[:-1])
    with pytest.raises(ConfigError):
        SpikeModel(a, b, np.full(MAX_SPIKES + 1, 0.1))
    with pytest.raises(ConfigError):
        SpikeModel.from_margins(a, b, edge, [-0.5])


def test_from_dict_and_json(tmp_path):
    cfg = {"base_a": {"kind": "uniform", "lo": 0.5, "hi": 1.5}, "base_b": {"kind": "point", "at": 1.0},
           "N": 50, "d_a": [0.5]}
    m = SpikeModel.from_dict(cfg)
    assert m.N == 50 and m.r == 1
    np.testing.assert_array_equal(m.base_b, np.ones(50))
    p = tmp_path / "m.json"
    p.write_text(json.dumps(cfg))
    assert SpikeModel.from_json(p).a_hat[0] == m.a_hat[0]
    with pytest.raises(ConfigError):
        SpikeModel.from_dict({"N": 10})
    with pytest.raises(ConfigError):
        SpikeModel.from_dict({"base": {"kind": "point", "at": 1.0}, "N": 1})


def test_base_atoms_descending():
    x = base_atoms({"kind": "uniform", "lo": 0.5, "hi": 1.5}, 4)
    np.testing.assert_allclose(x, [1.375, 1.125, 0.875, 0.625])


# ---------------------------------------------------------------------------
# classification and locations


def test_no_spikes(base):
    a, b, edge = base
    labels = classify(SpikeModel(a, b), edge)
    assert labels.O == labels.O_plus == frozenset()
    assert labels.r_plus == labels.s_plus == 0
    assert labels.pi_a[0] == 1 and labels.pi_a[-1] == N


def test_identity_single_spike(identity):
    a, b, edge = identity
    m = SpikeModel(a, b, [(a[0] + 1.0) / a[0] - 1.0])
    labels = classify(m, edge, 2)
    assert labels.O_plus == {1} and labels.pi_a[0] == 1
    spikes, _ = predict_outlier_locations(m, classify(m, edge), edge, N, 10)
    assert spikes[0].location == pytest.approx(m.a_hat[0], rel=1e-12)
    S = {int(labels.pi_a[0])}
    v = np.zeros(N)
    v[0] = 1.0
    assert predict_overlaps(m, classify(m, edge), edge, S, v).g_a == pytest.approx(1.0, abs=1e-9)


def test_two_spike_labels(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.8], [0.3])
    labels = classify(m, edge)
    xa = inverse_omega_B(edge, m.mu_A, m.mu_B, m.a_hat[0])
    xb = inverse_omega_A(edge, m.mu_A, m.mu_B, m.b_hat[0])
    assert xa > xb
    assert (labels.pi_a[0], labels.pi_b[0]) == (1, 2)
    assert labels.spike_of_label(2) == ("b", 1)
    assert labels.pi_a[1] == 3 and labels.pi_b[1] == 3


def test_tie_puts_a_first(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.4], [0.4])
    labels = classify(m, edge)
    assert (labels.pi_a[0], labels.pi_b[0]) == (1, 2)


def test_subcritical_prediction(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.5 * N ** (-1 / 3)])
    labels = classify(m, edge)
    assert labels.O == {1} and labels.O_plus == frozenset()
    spikes, extremal = predict_outlier_locations(m, labels, edge, N, 5)
    assert spikes[0].status == "subcritical"
    assert spikes[0].location == edge.E_plus
    assert spikes[0].rate_bound == pytest.approx(N ** (-2 / 3))
    assert len(extremal) == 5 and all(e.location == edge.E_plus for e in extremal)


def test_multiplier_moves_cut(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.5 * N ** (-1 / 3)])
    assert classify(m, edge, multiplier=0.25).r_plus == 1


def test_uniform_frozen_prediction(single):
    m, edge = single
    pred = predict(m, edge, N)
    p = pred.by_label(1)
    assert p.status == "supercritical"
    assert p.location == pytest.approx(LOCATION_UNIFORM, rel=1e-10)
    assert p.overlap == pytest.approx(OVERLAP_UNIFORM, rel=1e-8)
    assert p.delta == pytest.approx(math.sqrt(0.5), rel=1e-9)
    assert p.rate_bound == pytest.approx(N ** -0.5 * math.sqrt(0.5), rel=1e-9)
    d = pred.to_dict()
    assert json.dumps(json.loads(json.dumps(d))) == json.dumps(d)


def test_master_factor_zero_at_prediction(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.6, 0.3], [0.45])
    labels = classify(m, edge)
    spikes, _ = predict_outlier_locations(m, labels, edge, N, 0)
    for p in spikes:
        f = master_equation_factors(m, edge, p.location)
        k = p.index - 1 if p.kind == "a" else m.r + p.index - 1
        assert abs(f[k]) <= 1e-8


def test_master_factors_far_away(single):
    m, edge = single
    assert np.all(np.abs(master_equation_factors(m, edge, 50.0)) >= 0.1)
    with pytest.raises(DomainError):
        master_equation_factors(m, edge, edge.E_plus)


@pytest.mark.parametrize("margin", [0.3, 0.05, -0.03, -0.07])
def test_factor_root_iff_supercritical(base, margin):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [margin])
    xs = edge.E_plus + np.geomspace(1e-6, 20.0, 400)
    vals = np.array([master_equation_factors(m, edge, x)[0] for x in xs])
    has_root = bool(np.any(np.sign(vals[1:]) != np.sign(vals[:-1])))
    assert has_root == (margin > 0)


# ---------------------------------------------------------------------------
# separations and overlaps


def test_equal_spikes_zero_separation(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.5, 0.5])
    labels = classify(m, edge)
    t = separations(m, labels, edge, labels.O_plus)
    assert t.pair_a(m, 1, 2) == 0.0
    g = predict_overlaps(m, labels, edge, labels.O_plus, np.eye(N)[0])
    assert 0 < g.g_a < 1


def test_singleton_against_b_spike(base):
    a, b, edge = base
    # a subcritical b-spike sits between the top base atom and the cross value
    m = SpikeModel.from_margins(a, b, edge, [0.5], [-0.02])
    labels = classify(m, edge)
    t = separations(m, labels, edge, {int(labels.pi_a[0])})
    assert t.delta_a[0] == pytest.approx(abs(m.b_hat[0] - t.cross_a[0]), rel=1e-12)


def test_identity_cross_value(identity):
    a, b, edge = identity
    m = SpikeModel(a, b, [1.0])
    labels = classify(m, edge)
    t = separations(m, labels, edge, labels.O_plus)
    assert t.cross_a[0] == pytest.approx(m_transform(m.mu_A, m.a_hat[0]).real, rel=1e-9)


def test_overlap_edge_cases(single):
    m, edge = single
    labels = classify(m, edge)
    v = np.zeros(N)
    v[5] = 1.0
    assert predict_overlaps(m, labels, edge, labels.O_plus, v).g_a == 0.0
    with pytest.raises(DomainError):
        separations(m, labels, edge, {2})
    with pytest.raises(ConfigError):
        predict_overlaps(m, labels, edge, labels.O_plus, np.ones(3))
    e1 = np.eye(N)[0]
    g = predict_overlaps(m, labels, edge, labels.O_plus, e1)
    assert g.g_a == pytest.approx(OVERLAP_UNIFORM, rel=1e-8)
    assert g.budget_a == pytest.approx(sum(g.terms_a)) and g.budget_a > 0


# ---------------------------------------------------------------------------
# non-outlier bounds and sticking


def test_nonoutlier_far_coordinate(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [0.5])
    labels = classify(m, edge)
    kappa = 3 ** (2 / 3) * N ** (-2 / 3)
    got = predict_nonoutlier_bounds(m, labels, edge, 3, np.eye(N)[0])
    assert got == pytest.approx(1.0 / (N * (kappa + 0.25)), rel=1e-9)


def test_nonoutlier_plug_in(base):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [-0.05])
    labels = classify(m, edge)
    v = np.eye(N)[1]
    gap = m.a_hat[1] - edge.omega_B_edge
    expected = 1.0 / (N * (N ** (-2 / 3) + gap ** 2))
    assert predict_nonoutlier_bounds(m, labels, edge, 1, v) == pytest.approx(expected, rel=1e-12)


def test_nonoutlier_errors(single):
    m, edge = single
    labels = classify(m, edge)
    v = np.eye(N)[0]
    with pytest.raises(DomainError):
        predict_nonoutlier_bounds(m, labels, edge, 0, v)
    with pytest.raises(DomainError):
        predict_nonoutlier_bounds(m, labels, edge, 500, v)
    # a-index 1 carries the outlier label
    with pytest.raises(DomainError, match="outlier label 1"):
        predict_nonoutlier_bounds(m, labels, edge, 1, v)


def test_sticking_examples(single, base):
    m, edge = single
    sb = sticking_bound(m, edge, N)
    assert sb.gamma == pytest.approx(0.5, rel=1e-12)
    assert sb.bound == pytest.approx(1 / 500, rel=1e-12)
    assert not sb.degenerate
    full = sticking_bound(m, edge, N, over="all")
    # the top unspiked b atom is the closest entry overall
    assert full.gamma == pytest.approx(edge.omega_A_edge - m.b_hat[0], rel=1e-12)
    a, b, _ = base
    on = SpikeModel.from_margins(a, b, edge, [0.0])
    d = sticking_bound(on, edge, N)
    assert d.degenerate and d.bound == math.inf
    with pytest.raises(DomainError):
        sticking_bound(SpikeModel(a, b), edge, N)
    with pytest.raises(ConfigError):
        sticking_bound(m, edge, N, over="some")


# ---------------------------------------------------------------------------
# properties

margin_lists = st.lists(st.floats(-0.07, 1.5), min_size=1, max_size=3)


@settings(max_examples=25, deadline=None)
@given(margin_lists, margin_lists)
def test_property_labels_bijective(base, ma, mb):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, ma, mb)
    labels = classify(m, edge)
    got = sorted([int(x) for x in labels.pi_a[: m.r]] + [int(x) for x in labels.pi_b[: m.s]])
    assert got == list(range(1, m.r + m.s + 1))
    assert labels.O_plus <= labels.O
    locs = np.concatenate([labels.locations_a, labels.locations_b])
    assert np.all(locs >= edge.E_plus)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_property_monotone_locations(base, m1, m2):
    a, b, edge = base
    if abs(m1 - m2) < 1e-6:
        return
    m = SpikeModel.from_margins(a, b, edge, [m1, m2])
    loc = classify(m, edge).locations_a
    assert (loc[0] > loc[1]) == (m.a_hat[0] > m.a_hat[1])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.11, 2.0))
def test_property_overlap_in_unit_interval(base, margin):
    a, b, edge = base
    m = SpikeModel.from_margins(a, b, edge, [margin])
    labels = classify(m, edge)
    g = predict_overlaps(m, labels, edge, labels.O_plus, np.eye(N)[0]).g_a
    assert 0.0 < g <= 1.0 + 1e-9
