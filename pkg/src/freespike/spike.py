"""Spiked models and closed-form predictions for outliers and eigenvectors.

A spiked model rescales the top ``r`` entries of ``A`` and the top ``s``
entries of ``B``::

    a_hat_k = a_k (1 + d_a[k]),   b_hat_k = b_k (1 + d_b[k])

Spike ``i`` on the A side produces an outlier at ``Omega_B^{-1}(a_hat_i)``
once ``a_hat_i`` exceeds ``Omega_B(E_+)``; b-spikes mirror this with
``Omega_A``.  Thresholds and inverse functions are taken from the unspiked
atomic pair.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .edge import EdgeData, inverse_omega_A_derivative, inverse_omega_B_derivative, inverse_point
from .errors import ConfigError, DomainError
from .measure import AtomicMeasure, DensitySpec, discretize
from .subordination import SubordinationValue, solve

__all__ = [
    "MAX_SPIKES",
    "SpikeModel",
    "LabelMap",
    "SpikePrediction",
    "PredictionSet",
    "SeparationTable",
    "OverlapPrediction",
    "StickingBound",
    "base_atoms",
    "classify",
    "predict_outlier_locations",
    "predict",
    "separations",
    "predict_overlaps",
    "predict_nonoutlier_bounds",
    "sticking_bound",
    "master_equation_factors",
]

MAX_SPIKES = 32


def base_atoms(spec, N: int) -> np.ndarray:
    """Descending atoms of length ``N`` from a density spec or a config dict.

    Besides the :class:`DensitySpec` kinds, a dict ``{"kind": "point",
    "at": c}`` gives the constant diagonal ``c I``.
    """
    if isinstance(spec, dict):
        if spec.get("kind") in ("point", "identity"):
            c = float(spec.get("at", 1.0))
            if not c > 0:
                raise ConfigError("point mass must sit at a positive value")
            return np.full(N, c)
        spec = DensitySpec.from_dict(spec)
    return discretize(spec, N).atoms[::-1].copy()


def _as_strengths(d, name: str) -> np.ndarray:
    d = np.atleast_1d(np.asarray([] if d is None else d, dtype=float)).ravel()
    if np.any(~np.isfinite(d)) or np.any(d < 0):
        raise ConfigError(f"{name} must be finite and nonnegative")
    return d


@dataclass(frozen=True, eq=False)
class SpikeModel:
    """Base diagonals plus multiplicative spike strengths.

    ``base_a`` and ``base_b`` are sorted descending.  Spikes act on the first
    ``r`` (resp. ``s``) coordinates; within that block the (atom, strength)
    pairs are reordered so that ``a_hat`` is descending, which keeps spike
    ``i`` on coordinate ``i``.
    """

    base_a: np.ndarray
    base_b: np.ndarray
    d_a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    label: str = ""

    def __post_init__(self):
        a = np.sort(np.asarray(self.base_a, dtype=float).ravel())[::-1]
        b = np.sort(np.asarray(self.base_b, dtype=float).ravel())[::-1]
        if a.shape != b.shape:
            raise ConfigError("base_a and base_b must have the same length")
        if a.size < 2:
            raise ConfigError("N must be at least 2")
        if np.any(a <= 0) or np.any(b <= 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ConfigError("base atoms must be finite and positive")
        da, db = _as_strengths(self.d_a, "d_a"), _as_strengths(self.d_b, "d_b")
        if da.size + db.size > MAX_SPIKES:
            raise ConfigError(f"at most {MAX_SPIKES} spikes are supported")
        if da.size > a.size or db.size > b.size:
            raise ConfigError("more spikes than coordinates")
        a, da = self._canonical(a, da)
        b, db = self._canonical(b, db)
        for name, val in (("base_a", a), ("base_b", b), ("d_a", da), ("d_b", db)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @staticmethod
    def _canonical(base: np.ndarray, d: np.ndarray):
        r = d.size
        if r == 0:
            return base, d
        hat = base[:r] * (1.0 + d)
        order = np.argsort(-hat, kind="stable")
        base = base.copy()
        base[:r] = base[:r][order]
        return base, d[order].copy()

    @property
    def N(self) -> int:
        return int(self.base_a.size)

    @property
    def r(self) -> int:
        return int(self.d_a.size)

    @property
    def s(self) -> int:
        return int(self.d_b.size)

    @property
    def a_hat(self) -> np.ndarray:
        out = self.base_a.copy()
        out[: self.r] *= 1.0 + self.d_a
        return out

    @property
    def b_hat(self) -> np.ndarray:
        out = self.base_b.copy()
        out[: self.s] *= 1.0 + self.d_b
        return out

    @property
    def mu_A(self) -> AtomicMeasure:
        return AtomicMeasure(self.base_a, label="A")

    @property
    def mu_B(self) -> AtomicMeasure:
        return AtomicMeasure(self.base_b, label="B")

    def unspiked(self) -> "SpikeModel":
        return SpikeModel(self.base_a, self.base_b, label=self.label)

    @classmethod
    def from_margins(cls, base_a, base_b, edge: EdgeData, margins_a: Sequence[float] = (),
                     margins_b: Sequence[float] = (), label: str = "") -> "SpikeModel":
        """Spikes placed at ``threshold + margin`` for the given unspiked edge."""
        a = np.sort(np.asarray(base_a, dtype=float))[::-1]
        b = np.sort(np.asarray(base_b, dtype=float))[::-1]
        ma = np.asarray(margins_a, dtype=float)
        mb = np.asarray(margins_b, dtype=float)
        da = (edge.omega_B_edge + ma) / a[: ma.size] - 1.0
        db = (edge.omega_A_edge + mb) / b[: mb.size] - 1.0
        if np.any(da < 0) or np.any(db < 0):
            raise ConfigError("requested margin puts a spike below its base atom (negative strength)")
        return cls(a, b, da, db, label=label)

    @classmethod
    def from_dict(cls, cfg: dict, N: int | None = None) -> "SpikeModel":
        """Build from ``{"base": {...}, "N": 1000, "d_a": [...], "d_b": [...]}``.

        ``base_a`` / ``base_b`` override ``base`` per side.
        """
        N = int(N if N is not None else cfg.get("N", 0))
        if N < 2:
            raise ConfigError("config needs N >= 2")
        spec_a = cfg.get("base_a", cfg.get("base"))
        spec_b = cfg.get("base_b", cfg.get("base"))
        if spec_a is None or spec_b is None:
            raise ConfigError("config needs 'base' or both 'base_a' and 'base_b'")
        return cls(base_atoms(spec_a, N), base_atoms(spec_b, N), cfg.get("d_a", []), cfg.get("d_b", []),
                   label=str(cfg.get("label", "")))

    @classmethod
    def from_json(cls, text_or_path) -> "SpikeModel":
        p = Path(str(text_or_path))
        return cls.from_dict(json.loads(p.read_text() if p.exists() else str(text_or_path)))


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class LabelMap:
    """Outlier labels and index sets.

    ``pi_a[i-1]`` is the label of a-index ``i`` (1-based labels, as in the
    theory); indices past the spikes get ``min(i + s, N)``.
    """

    pi_a: np.ndarray
    pi_b: np.ndarray
    O: frozenset
    O_plus: frozenset
    r_plus: int
    s_plus: int
    threshold_a: float
    threshold_b: float
    margin_cut: float
    locations_a: np.ndarray
    locations_b: np.ndarray

    def spike_of_label(self, label: int) -> tuple[str, int]:
        """Inverse of the label maps on spike labels: ``('a', i)`` or ``('b', j)``, 1-based."""
        for side, pi, n in (("a", self.pi_a, self.locations_a.size), ("b", self.pi_b, self.locations_b.size)):
            hit = np.flatnonzero(pi[:n] == label)
            if hit.size:
                return side, int(hit[0]) + 1
        raise KeyError(label)


def classify(model: SpikeModel, edge: EdgeData, N: int | None = None,
             multiplier: float = 1.0) -> LabelMap:
    """Labels, outlier sets and supercritical counts.

    A spike counts toward ``O_plus`` when it clears its threshold by at least
    ``multiplier * N**(-1/3)``.  Ties between predicted locations put
    a-spikes first, then lower indices.
    """
    N = model.N if N is None else int(N)
    mu_A, mu_B = model.mu_A, model.mu_B
    a_hat, b_hat = model.a_hat, model.b_hat
    r, s = model.r, model.s
    thr_a, thr_b = edge.omega_B_edge, edge.omega_A_edge
    loc_a = np.array([_location(edge, mu_A, mu_B, a_hat[i], "a") for i in range(r)])
    loc_b = np.array([_location(edge, mu_A, mu_B, b_hat[j], "b") for j in range(s)])
    keys = [(-loc_a[i], 0, i) for i in range(r)] + [(-loc_b[j], 1, j) for j in range(s)]
    pi_a = np.array([min(i + 1 + s, N) for i in range(N)], dtype=np.int64)
    pi_b = np.array([min(j + 1 + r, N) for j in range(N)], dtype=np.int64)
    for rank, (_, side, idx) in enumerate(sorted(keys), start=1):
        (pi_a if side == 0 else pi_b)[idx] = rank
    cut = multiplier * N ** (-1.0 / 3.0)
    r_plus = int(np.count_nonzero(a_hat[:r] >= thr_a + cut))
    s_plus = int(np.count_nonzero(b_hat[:s] >= thr_b + cut))
    O = frozenset(int(pi_a[i]) for i in range(r) if a_hat[i] > thr_a) | \
        frozenset(int(pi_b[j]) for j in range(s) if b_hat[j] > thr_b)
    O_plus = frozenset(int(pi_a[i]) for i in range(r_plus)) | frozenset(int(pi_b[j]) for j in range(s_plus))
    for arr in (pi_a, pi_b, loc_a, loc_b):
        arr.flags.writeable = False
    return LabelMap(pi_a, pi_b, O, O_plus, r_plus, s_plus, thr_a, thr_b, cut, loc_a, loc_b)


def _location(edge, mu_A, mu_B, hat, side):
    thr = edge.omega_B_edge if side == "a" else edge.omega_A_edge
    if hat <= thr:
        return edge.E_plus
    # rounding can land a hair below the edge for spikes right at threshold
    return max(inverse_point(edge, mu_A, mu_B, float(hat), side).x, edge.E_plus)


# ---------------------------------------------------------------------------
# eigenvalue predictions


@dataclass(frozen=True)
class SpikePrediction:
    """Prediction attached to one spike or one extremal non-outlier rank."""

    kind: str            # "a", "b" or "extremal"
    index: int           # spike index (1-based) or eigenvalue rank
    label: int
    value: float         # a_hat, b_hat, or NaN for extremal ranks
    status: str          # "supercritical", "subcritical" or "extremal"
    margin: float        # signed distance to threshold
    delta: float         # sqrt of the margin when supercritical, else NaN
    location: float
    rate_bound: float
    overlap: float = math.nan

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class StickingBound:
    gamma: float
    bound: float
    degenerate: bool


@dataclass(frozen=True)
class PredictionSet:
    """Everything predicted for one spiked model without simulation."""

    N: int
    edge: EdgeData
    labels: LabelMap
    spikes: tuple
    extremal: tuple
    sticking: StickingBound | None

    def by_label(self, label: int) -> SpikePrediction:
        for p in self.spikes:
            if p.label == label:
                return p
        raise KeyError(label)

    def to_dict(self) -> dict:
        lab = self.labels
        return {
            "N": self.N,
            "edge": self.edge.to_dict(),
            "r_plus": lab.r_plus,
            "s_plus": lab.s_plus,
            "O": sorted(lab.O),
            "O_plus": sorted(lab.O_plus),
            "threshold_a": lab.threshold_a,
            "threshold_b": lab.threshold_b,
            "margin_cut": lab.margin_cut,
            "spikes": [p.to_dict() for p in self.spikes],
            "extremal": [p.to_dict() for p in self.extremal],
            "sticking": None if self.sticking is None else dict(self.sticking.__dict__),
            "subcritical": all(p.status != "supercritical" for p in self.spikes),
        }


def predict_outlier_locations(model: SpikeModel, labels: LabelMap, edge: EdgeData,
                              N: int | None = None, varpi: int = 10) -> tuple[tuple, tuple]:
    """Outlier locations with their rate bounds.

    Supercritical spikes sit at ``Omega_B^{-1}(a_hat)`` (or the b mirror) with
    bound ``N**-0.5 * sqrt(margin)``; every other spike and every
    non-outlier rank up to ``varpi`` sits at ``E_+`` with bound ``N**(-2/3)``.

    Returns
    -------
    (spikes, extremal) : tuple of tuple of SpikePrediction
    """
    N = model.N if N is None else int(N)
    mu_A, mu_B = model.mu_A, model.mu_B
    out = []
    edge_rate = N ** (-2.0 / 3.0)
    for side, hats, pi, n_plus, thr in (("a", model.a_hat, labels.pi_a, labels.r_plus, labels.threshold_a),
                                        ("b", model.b_hat, labels.pi_b, labels.s_plus, labels.threshold_b)):
        n = model.r if side == "a" else model.s
        for i in range(n):
            margin = float(hats[i] - thr)
            if i < n_plus:
                x = inverse_point(edge, mu_A, mu_B, float(hats[i]), side).x
                d = math.sqrt(margin)
                out.append(SpikePrediction(side, i + 1, int(pi[i]), float(hats[i]), "supercritical", margin,
                                           d, x, N ** -0.5 * d))
            else:
                out.append(SpikePrediction(side, i + 1, int(pi[i]), float(hats[i]), "subcritical", margin,
                                           math.nan, edge.E_plus, edge_rate))
    out.sort(key=lambda p: p.label)
    k0 = labels.r_plus + labels.s_plus
    extremal = tuple(SpikePrediction("extremal", k, k, math.nan, "extremal", math.nan, math.nan,
                                     edge.E_plus, edge_rate) for k in range(k0 + 1, max(varpi, k0) + 1))
    return tuple(out), extremal


def predict(model: SpikeModel, edge: EdgeData, N: int | None = None, varpi: int = 10,
            multiplier: float = 1.0) -> PredictionSet:
    """Classification, locations, single-spike overlaps and the sticking bound."""
    N = model.N if N is None else int(N)
    labels = classify(model, edge, N, multiplier)
    spikes, extremal = predict_outlier_locations(model, labels, edge, N, varpi)
    with_overlap = []
    for p in spikes:
        g = math.nan
        if p.status == "supercritical":
            g = _single_overlap(model, edge, p.kind, p.index)
        with_overlap.append(SpikePrediction(**{**p.__dict__, "overlap": g}))
    stick = sticking_bound(model, edge, N) if model.r + model.s > 0 else None
    return PredictionSet(N, edge, labels, tuple(with_overlap), extremal, stick)


# ---------------------------------------------------------------------------
# eigenvector predictions


def _single_overlap(model: SpikeModel, edge: EdgeData, side: str, index: int) -> float:
    mu_A, mu_B = model.mu_A, model.mu_B
    if side == "a":
        hat = float(model.a_hat[index - 1])
        x = inverse_point(edge, mu_A, mu_B, hat, "a").x
        return hat * inverse_omega_B_derivative(edge, mu_A, mu_B, hat) / x
    hat = float(model.b_hat[index - 1])
    x = inverse_point(edge, mu_A, mu_B, hat, "b").x
    return hat * inverse_omega_A_derivative(edge, mu_A, mu_B, hat) / x


@dataclass(frozen=True)
class SeparationTable:
    """Set separations ``delta_{pi_a(i)}(S)`` and ``delta_{pi_b(j)}(S)`` for all indices.

    ``cross_a[i]`` holds ``Omega_A(Omega_B^{-1}(a_hat_i))`` for supercritical
    a-spikes and ``cross_b[j]`` holds ``Omega_B(Omega_A^{-1}(b_hat_j))``.
    """

    S: frozenset
    delta_a: np.ndarray
    delta_b: np.ndarray
    cross_a: np.ndarray
    cross_b: np.ndarray

    def pair_a(self, model: SpikeModel, i1: int, i2: int) -> float:
        """``delta^a`` between a-indices ``i1`` (supercritical) and ``i2``, 1-based."""
        return abs(model.a_hat[i1 - 1] - model.a_hat[i2 - 1])

    def pair_ab(self, model: SpikeModel, i1: int, j: int) -> float:
        """``delta^a`` between a-spike ``i1`` and b-index ``j``, 1-based."""
        return abs(model.b_hat[j - 1] - self.cross_a[i1 - 1])


def _check_subset(S, labels: LabelMap) -> frozenset:
    S = frozenset(int(k) for k in S)
    if not S <= labels.O_plus:
        raise DomainError(f"S = {sorted(S)} is not contained in O_plus = {sorted(labels.O_plus)}")
    return S


def separations(model: SpikeModel, labels: LabelMap, edge: EdgeData, S: Iterable[int]) -> SeparationTable:
    """Separation table for the index set ``S``.

    All ``N`` coordinates enter the minima, not only the spiked ones.  Empty
    minima are ``inf``.
    """
    S = _check_subset(S, labels)
    mu_A, mu_B = model.mu_A, model.mu_B
    a_hat, b_hat = model.a_hat, model.b_hat
    N = model.N
    cross_a = np.full(model.r, math.nan)
    cross_b = np.full(model.s, math.nan)
    for i in range(labels.r_plus):
        cross_a[i] = inverse_point(edge, mu_A, mu_B, float(a_hat[i]), "a").omega_A
    for j in range(labels.s_plus):
        cross_b[j] = inverse_point(edge, mu_A, mu_B, float(b_hat[j]), "b").omega_B
    in_a = np.array([int(labels.pi_a[i]) in S for i in range(N)])
    in_b = np.array([int(labels.pi_b[j]) in S for j in range(N)])

    def _min(vals):
        return float(np.min(vals)) if np.size(vals) else math.inf

    delta_a = np.empty(N)
    delta_b = np.empty(N)
    for i in range(N):
        if in_a[i]:
            delta_a[i] = min(_min(np.abs(a_hat[i] - a_hat[~in_a])), _min(np.abs(b_hat[~in_b] - cross_a[i])))
        else:
            delta_a[i] = min(_min(np.abs(a_hat[in_a] - a_hat[i])), _min(np.abs(a_hat[i] - cross_b[in_b[: model.s]]))
                             if model.s else math.inf)
    for j in range(N):
        if in_b[j]:
            delta_b[j] = min(_min(np.abs(a_hat[~in_a] - cross_b[j])), _min(np.abs(b_hat[j] - b_hat[~in_b])))
        else:
            delta_b[j] = min(_min(np.abs(b_hat[j] - cross_a[in_a[: model.r]])) if model.r else math.inf,
                             _min(np.abs(b_hat[in_b] - b_hat[j])))
    for arr in (delta_a, delta_b, cross_a, cross_b):
        arr.flags.writeable = False
    return SeparationTable(S, delta_a, delta_b, cross_a, cross_b)


@dataclass(frozen=True)
class OverlapPrediction:
    """Limits ``g_a``, ``g_b`` and their three-term error budgets."""

    g_a: float
    g_b: float
    budget_a: float
    budget_b: float
    terms_a: tuple
    terms_b: tuple


def _ratio(w2: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(w2 > 0, w2 / den, 0.0)


def predict_overlaps(model: SpikeModel, labels: LabelMap, edge: EdgeData, S: Iterable[int],
                     v, v_b=None, table: SeparationTable | None = None) -> OverlapPrediction:
    """Projection limits ``<v, P_S v>`` for left (``g_a``) and right (``g_b``) vectors.

    ``v_b`` defaults to ``v``.  The budget for each side is the sum of the
    spike-margin term, the separation term and the cross term.
    """
    S = _check_subset(S, labels)
    N = model.N
    v = np.asarray(v)
    v_b = v if v_b is None else np.asarray(v_b)
    if v.shape != (N,) or v_b.shape != (N,):
        raise ConfigError("test vectors must have length N")
    table = table if table is not None else separations(model, labels, edge, S)
    mu_A, mu_B = model.mu_A, model.mu_B
    w_a, w_b = np.abs(v) ** 2, np.abs(v_b) ** 2
    in_a = np.array([int(labels.pi_a[i]) in S for i in range(N)])
    in_b = np.array([int(labels.pi_b[j]) in S for j in range(N)])

    def side(hats, w, inside, n_spk, thr, deriv, delta):
        g = 0.0
        margin_term = 0.0
        for i in np.flatnonzero(inside[:n_spk]):
            if w[i] == 0:
                continue
            hat = float(hats[i])
            x = inverse_point(edge, mu_A, mu_B, hat, "a" if deriv is inverse_omega_B_derivative else "b").x
            g += hat * deriv(edge, mu_A, mu_B, hat) / x * w[i]
            margin_term += w[i] / math.sqrt(N * (hat - thr))
        sep = _ratio(w, N * delta)
        t2 = float(sep.sum())
        t3 = math.sqrt(g) * math.sqrt(float(sep[~inside].sum()))
        return g, (margin_term, t2, t3)

    g_a, ta = side(model.a_hat, w_a, in_a, model.r, labels.threshold_a, inverse_omega_B_derivative, table.delta_a)
    g_b, tb = side(model.b_hat, w_b, in_b, model.s, labels.threshold_b, inverse_omega_A_derivative, table.delta_b)
    return OverlapPrediction(g_a, g_b, sum(ta), sum(tb), ta, tb)


def predict_nonoutlier_bounds(model: SpikeModel, labels: LabelMap, edge: EdgeData, i: int, v,
                              N: int | None = None, side: str = "a", tau: float = 0.1) -> float:
    """Bound on ``|<v, u_hat_{pi_a(i)}>|**2`` for a non-outlier index ``i``.

    Returns ``sum_j |v_j|**2 / (N (kappa_i + |a_hat_j - threshold|**2))`` with
    ``kappa_i = i**(2/3) N**(-2/3)``; ``side='b'`` gives the right-vector
    mirror.
    """
    N = model.N if N is None else int(N)
    if not 1 <= i <= tau * N:
        raise DomainError(f"index {i} outside 1..{int(tau * N)}")
    pi = labels.pi_a if side == "a" else labels.pi_b
    if int(pi[i - 1]) in labels.O_plus:
        raise DomainError(f"index {i} carries outlier label {int(pi[i - 1])}")
    hats = model.a_hat if side == "a" else model.b_hat
    thr = labels.threshold_a if side == "a" else labels.threshold_b
    kappa = i ** (2.0 / 3.0) * N ** (-2.0 / 3.0)
    w = np.abs(np.asarray(v)) ** 2
    return float(np.sum(w / (N * (kappa + (hats - thr) ** 2))))


def sticking_bound(model: SpikeModel, edge: EdgeData, N: int | None = None,
                   over: str = "spikes") -> StickingBound:
    """Minimal margin ``gamma`` and the sticking scale ``1 / (N gamma)``.

    ``over='spikes'`` takes the minimum over spiked entries only;
    ``over='all'`` also includes the unspiked atoms, which is smaller when
    the top base atom sits close to its threshold.

    Raises
    ------
    DomainError
        If the model has no spikes.
    """
    N = model.N if N is None else int(N)
    if model.r + model.s == 0:
        raise DomainError("sticking bound needs at least one spike")
    if over not in ("spikes", "all"):
        raise ConfigError("over must be 'spikes' or 'all'")
    ka, kb = (model.r, model.s) if over == "spikes" else (model.N, model.N)
    margins = np.concatenate([np.abs(model.a_hat[:ka] - edge.omega_B_edge),
                              np.abs(model.b_hat[:kb] - edge.omega_A_edge)])
    gamma = float(margins.min())
    scale = max(edge.omega_A_edge, edge.omega_B_edge)
    if gamma <= 1e-14 * scale:
        return StickingBound(gamma, math.inf, True)
    return StickingBound(gamma, 1.0 / (N * gamma), False)


# ---------------------------------------------------------------------------
# master equation


def _factor_values(model: SpikeModel, omega_A: complex, omega_B: complex) -> np.ndarray:
    out = []
    for d, base, om in ((model.d_a, model.base_a, omega_B), (model.d_b, model.base_b, omega_A)):
        for k, dk in enumerate(d):
            if dk == 0:
                out.append(math.inf)
                continue
            out.append((dk + 1.0) / dk + om / (base[k] - om))
    return np.array(out, dtype=complex)


def master_equation_factors(model: SpikeModel, edge_or_resolvent, x: float,
                            value: SubordinationValue | None = None):
    """Factors of the outlier equation at ``x``.

    With an :class:`EdgeData` argument this returns the ``r + s`` asymptotic
    factors ``(d+1)/d + Omega/(base - Omega)`` (real, signed) using the
    subordination functions at ``x > E_+``.  With a resolvent object from
    :mod:`freespike.rmt` it returns the finite-N determinant
    ``det(D^{-1} + x U* G(x) U)`` together with its Hadamard scale.
    """
    if isinstance(edge_or_resolvent, EdgeData):
        edge = edge_or_resolvent
        if not x > edge.E_plus:
            raise DomainError(f"x = {x} is not above the edge {edge.E_plus}")
        sub = value if value is not None else solve(model.mu_A, model.mu_B, x)
        return _factor_values(model, sub.omega_A, sub.omega_B).real
    return edge_or_resolvent.master_determinant(x)
