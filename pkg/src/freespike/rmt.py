"""Monte Carlo side: Haar sampling, spiked matrices and resolvent diagnostics.

The unspiked and spiked matrices of one trial always share the same Haar
draw, so sticking and interlacing can be compared eigenvalue by eigenvalue.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import ConfigError, DomainError, NumericError, SingularityError, SolverError
from .subordination import SubordinationValue, solve_grid

__all__ = [
    "trial_seed",
    "rng",
    "HaarSample",
    "sample_haar",
    "ModelSample",
    "build_model",
    "SpectralData",
    "spectral_decomposition",
    "eigvalsh_desc",
    "empirical_overlap",
    "interlacing_violations",
    "theta_matrix",
    "LinearizedResolvent",
    "MasterDeterminant",
    "ResolventDiagnostics",
    "domain_tag",
    "local_law_residual",
    "estimate_omega_beta_edge",
    "RigidityReport",
    "rigidity_report",
    "DelocalizationReport",
    "delocalization_report",
    "theta_profile",
]


# ---------------------------------------------------------------------------
# randomness


def trial_seed(master_seed: int, N: int, trial: int, purpose: str = "haar") -> int:
    """64-bit seed for one (N, trial, purpose) cell, independent of run order."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(N), int(trial), zlib.crc32(purpose.encode())))
    return int(ss.generate_state(1, np.uint64)[0])


def rng(seed: int) -> np.random.Generator:
    """Counter-based generator for a seed from :func:`trial_seed`."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class HaarSample:
    """A Haar orthogonal (``field='real'``) or unitary (``'complex'``) matrix."""

    U: np.ndarray
    seed: int | None
    field: str

    @property
    def N(self) -> int:
        return int(self.U.shape[0])


def sample_haar(N: int, field: str = "real", seed=None) -> HaarSample:
    """Draw from Haar measure by QR of a Gaussian matrix with a phase fix.

    Parameters
    ----------
    N : int
        Dimension, at least 2.
    field : {'real', 'complex'}
    seed : int, numpy Generator or None
        Integer seeds go through the Philox generator so that a seed written
        to a results file reproduces the matrix.
    """
    if int(N) < 2:
        raise ConfigError("Haar sampling needs N >= 2")
    if field not in ("real", "complex"):
        raise ConfigError(f"unknown field {field!r}")
    if isinstance(seed, np.random.Generator):
        gen, s = seed, None
    else:
        s = None if seed is None else int(seed)
        gen = rng(s) if s is not None else np.random.default_rng()
    N = int(N)
    Z = gen.standard_normal((N, N))
    if field == "complex":
        Z = (Z + 1j * gen.standard_normal((N, N))) / math.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    diag = np.diag(R)
    Q *= (diag / np.abs(diag))[None, :]
    return HaarSample(Q, s, field)


# ---------------------------------------------------------------------------
# model matrices


def _herm(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


class ModelSample:
    """The matrices of one trial, built lazily from a model and a Haar draw.

    Iterating yields ``(Q1, Q1hat, Q2hat)``.
    """

    def __init__(self, model, haar: HaarSample):
        U = haar.U if isinstance(haar, HaarSample) else np.asarray(haar)
        if U.shape != (model.N, model.N):
            raise ConfigError(f"Haar matrix of shape {U.shape} does not match N = {model.N}")
        self.model = model
        self.U = U
        self.haar = haar

    def __iter__(self):
        return iter((self.Q1, self.Q1hat, self.Q2hat))

    def with_model(self, model) -> "ModelSample":
        """Same Haar draw under another model; the mixing matrix is reused when ``B`` is unchanged."""
        other = ModelSample(model, self.haar if isinstance(self.haar, HaarSample) else self.U)
        m = self.model
        if "W" in self.__dict__ and np.array_equal(model.base_b, m.base_b) and np.array_equal(model.b_hat, m.b_hat):
            other.__dict__["W"] = self.W
        return other

    @cached_property
    def W(self) -> np.ndarray:
        """``U B U*`` for the unspiked ``B``."""
        U = self.U
        return (U * self.model.base_b[None, :]) @ U.conj().T

    @cached_property
    def Q1(self) -> np.ndarray:
        sa = np.sqrt(self.model.base_a)
        return _herm(sa[:, None] * self.W * sa[None, :])

    @cached_property
    def Q1hat(self) -> np.ndarray:
        m = self.model
        if m.r == 0 and m.s == 0:
            return self.Q1
        W = self.W
        if m.s:
            Us = self.U[:, : m.s]
            W = W + (Us * (m.b_hat[: m.s] - m.base_b[: m.s])[None, :]) @ Us.conj().T
        sa = np.sqrt(m.a_hat)
        return _herm(sa[:, None] * W * sa[None, :])

    @cached_property
    def Q2hat(self) -> np.ndarray:
        m = self.model
        U = self.U
        sb = np.sqrt(m.b_hat)
        return _herm(sb[:, None] * ((U.conj().T * m.a_hat[None, :]) @ U) * sb[None, :])

    def Y(self, spiked: bool = True) -> np.ndarray:
        m = self.model
        a, b = (m.a_hat, m.b_hat) if spiked else (m.base_a, m.base_b)
        return np.sqrt(a)[:, None] * self.U * np.sqrt(b)[None, :]

    def unspiked_eigenvalues(self) -> np.ndarray:
        """Descending eigenvalues of ``Q1`` without vectors."""
        return eigvalsh_desc(self.Q1)

    @cached_property
    def unspiked(self) -> "SpectralData":
        return spectral_decomposition(self.Q1, Y=self.Y(False), residuals=False)

    @cached_property
    def spiked(self) -> "SpectralData":
        return spectral_decomposition(self.Q1hat, Y=self.Y(True), residuals=False)

    def resolvent(self) -> "LinearizedResolvent":
        return LinearizedResolvent(self.unspiked, self.model, self.U)


def build_model(model, U) -> ModelSample:
    """Matrices ``Q1`` (unspiked), ``Q1hat`` and ``Q2hat`` sharing one Haar draw."""
    return ModelSample(model, U)


# ---------------------------------------------------------------------------
# spectral data


def eigvalsh_desc(M: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of a Hermitian matrix."""
    try:
        return scipy.linalg.eigvalsh(M, check_finite=True)[::-1].copy()
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigenvalue solver failed: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Descending eigenpairs of a Hermitian matrix.

    ``vectors[:, k]`` is the eigenvector of ``eigenvalues[k]``.  When the
    matrix came from ``Y Y*`` the right vectors are available through
    :meth:`right_vectors`.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray | None = None
    Y: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return int(self.eigenvalues.size)

    def right_vectors(self, idx=None) -> np.ndarray:
        """``Y* u_k / sqrt(lambda_k)`` for the requested 0-based indices."""
        if self.Y is None:
            raise ConfigError("right vectors need the factor Y")
        idx = np.arange(self.N) if idx is None else np.atleast_1d(idx)
        lam = self.eigenvalues[idx]
        if np.any(lam <= 0):
            raise SingularityError("right vectors need positive eigenvalues")
        return (self.Y.conj().T @ self.vectors[:, idx]) / np.sqrt(lam)[None, :]


def spectral_decomposition(M, Y=None, residuals: bool = True) -> SpectralData:
    """Full eigendecomposition of a Hermitian matrix in descending order.

    The input is symmetrized first.  With ``residuals=True`` the norms
    ``||M u_k - lambda_k u_k||`` are recorded.

    Raises
    ------
    NumericError
        If LAPACK fails; the message carries the matrix norm and a finiteness
        check.
    """
    M = _herm(np.asarray(M))
    try:
        w, V = scipy.linalg.eigh(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        finite = bool(np.all(np.isfinite(M)))
        norm = float(np.linalg.norm(M, 2)) if finite else math.nan
        raise NumericError(f"eigh failed ({exc}); finite={finite}, norm={norm:.3g}") from exc
    w = w[::-1].copy()
    V = V[:, ::-1].copy()
    res = None
    if residuals:
        res = np.linalg.norm(M @ V - V * w[None, :], axis=0)
    return SpectralData(w, V, res, Y)


def empirical_overlap(spec: SpectralData, S, v) -> float:
    """``sum_{k in S} |<u_k, v>|**2`` for 1-based indices ``S``."""
    idx = np.asarray(sorted(int(k) for k in S), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    if idx.min() < 1 or idx.max() > spec.N:
        raise DomainError(f"indices must lie in 1..{spec.N}")
    proj = spec.vectors[:, idx - 1].conj().T @ np.asarray(v)
    return float(np.sum(np.abs(proj) ** 2))


def interlacing_violations(lam_hat, lam, k: int, tol: float | None = None) -> int:
    """Count indices breaking ``lam[i] <= lam_hat[i] <= lam[i-k]`` (descending order)."""
    lam_hat = np.asarray(lam_hat)
    lam = np.asarray(lam)
    if tol is None:
        tol = 1e-9 * max(1.0, float(np.max(np.abs(lam_hat))))
    bad = np.count_nonzero(lam_hat < lam - tol)
    if k < lam.size:
        bad += np.count_nonzero(lam_hat[k:] > lam[: lam.size - k] + tol)
    return int(bad)


# ---------------------------------------------------------------------------
# resolvent


def theta_matrix(a, b, sub: SubordinationValue, z: complex | None = None) -> np.ndarray:
    """Diagonal of the deterministic equivalent, length ``2N``.

    Entries are ``Omega_B / (z (a_i - Omega_B))`` followed by
    ``Omega_A / (z (b_mu - Omega_A))``.
    """
    z = sub.z if z is None else complex(z)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da = a - sub.omega_B
    db = b - sub.omega_A
    for name, d in (("a", da), ("b", db)):
        hit = np.flatnonzero(np.abs(d) <= 1e-12)
        if hit.size:
            raise SingularityError(f"Theta entry {name}[{int(hit[0])}] sits on a pole")
    return np.concatenate([sub.omega_B / (z * da), sub.omega_A / (z * db)])


@dataclass(frozen=True)
class MasterDeterminant:
    """Finite-N determinant, its Hadamard scale and their ratio."""

    x: float
    value: complex
    scale: float

    @property
    def relative(self) -> float:
        return abs(self.value) / self.scale if self.scale > 0 else math.inf


class LinearizedResolvent:
    """Blocks of the ``2N x 2N`` linearized resolvent from the unspiked SVD.

    The square root of ``z`` is the principal branch.
    """

    def __init__(self, spec: SpectralData, model, U: np.ndarray):
        if spec.Y is None:
            raise ConfigError("linearized resolvent needs the factor Y")
        self.spec = spec
        self.model = model
        self.U = U
        self.lam = spec.eigenvalues
        self.left = spec.vectors

    @cached_property
    def right(self) -> np.ndarray:
        return self.spec.right_vectors()

    def _rows(self, r: int, s: int):
        L = self.left[:r, :]
        if s == 0:
            return L, np.zeros((0, self.lam.size))
        b = self.model.base_b[:s]
        a = np.sqrt(self.model.base_a)
        R = (np.sqrt(b)[:, None] * (self.U[:, :s].conj().T @ (a[:, None] * self.left))) / np.sqrt(self.lam)[None, :]
        return L, R

    def corner(self, z: complex, r: int, s: int) -> np.ndarray:
        """``U* G(z) U`` restricted to the first ``r`` and ``s`` coordinates of each block."""
        L, R = self._rows(r, s)
        inv = 1.0 / (self.lam - z)
        sq = np.sqrt(complex(z))
        g11 = (L * inv) @ L.conj().T
        g22 = (R * inv) @ R.conj().T
        g12 = (L * (np.sqrt(self.lam) * inv)) @ R.conj().T / sq
        g21 = (R * (np.sqrt(self.lam) * inv)) @ L.conj().T / sq
        return np.block([[g11, g12], [g21, g22]])

    def master_determinant(self, x: float) -> MasterDeterminant:
        """``det(D^{-1} + x U* G(x) U)`` over spikes with nonzero strength."""
        m = self.model
        keep_a = np.flatnonzero(m.d_a > 0)
        keep_b = np.flatnonzero(m.d_b > 0)
        C = self.corner(complex(x), m.r, m.s)
        idx = np.concatenate([keep_a, m.r + keep_b])
        d = np.concatenate([m.d_a[keep_a], m.d_b[keep_b]])
        K = np.diag((1.0 + d) / d).astype(complex) + x * C[np.ix_(idx, idx)]
        value = complex(np.linalg.det(K)) if K.size else 1.0 + 0j
        scale = float(np.prod(np.linalg.norm(K, axis=1))) if K.size else 1.0
        return MasterDeterminant(float(x), value, scale)

    def full(self, z: complex) -> np.ndarray:
        """The whole ``2N x 2N`` matrix ``G(z)``."""
        inv = 1.0 / (self.lam - z)
        L, R = self.left, self.right
        sq = np.sqrt(complex(z))
        g11 = (L * inv) @ L.conj().T
        g22 = (R * inv) @ R.conj().T
        g12 = (L * (np.sqrt(self.lam) * inv)) @ R.conj().T / sq
        g21 = (R * (np.sqrt(self.lam) * inv)) @ L.conj().T / sq
        return np.block([[g11, g12], [g21, g22]])


@dataclass(frozen=True)
class ResolventDiagnostics:
    """Local-law errors at one spectral parameter."""

    z: complex
    sup_entry_error: float
    averaged_error: float
    kappa: float
    domain: str


def domain_tag(z: complex, E_plus: float, N: int, tau: float = 0.1, xi: float = 0.1,
               eta_U: float = 10.0) -> str:
    """Name of the spectral domain containing ``z``.

    ``'T(eta_U)'`` is the region right of ``E_+ + N**(-2/3+tau)`` and
    ``'T(eta_L,eta_U)'`` the strip ``N**(-1+xi) < Im z < eta_U`` over
    ``[E_+ - tau, 1/tau]``.
    """
    E, eta = z.real, z.imag
    if E_plus + N ** (-2.0 / 3.0 + tau) <= E <= 1.0 / tau and abs(eta) < eta_U:
        return "T(eta_U)"
    if E_plus - tau <= E <= 1.0 / tau and N ** (-1.0 + xi) < eta < eta_U:
        return "T(eta_L,eta_U)"
    raise DomainError(f"z = {z} lies outside both local-law domains (tag: none)")


def local_law_residual(sample: ModelSample, z: complex, sub: SubordinationValue, E_plus: float,
                       m_conv: complex | None = None, tau: float = 0.1) -> ResolventDiagnostics:
    """Sup-entry and averaged deviations of the unspiked resolvent from its equivalent.

    ``sub`` must be the subordination value of the unspiked atomic pair at
    ``z``.  ``m_conv`` defaults to the trace of ``Theta`` over the first
    block, which equals the Stieltjes transform of the convolution.
    """
    model = sample.model
    z = complex(z)
    tag = domain_tag(z, E_plus, model.N, tau=tau)
    res = sample.resolvent()
    G = res.full(z)
    theta = theta_matrix(model.base_a, model.base_b, sub, z)
    G[np.diag_indices_from(G)] -= theta
    sup = float(np.max(np.abs(G)))
    N = model.N
    m_H = complex(np.mean(1.0 / (res.lam - z)))
    if m_conv is None:
        m_conv = complex(np.mean(theta[:N]))
    return ResolventDiagnostics(z, sup, abs(m_H - m_conv), abs(z.real - E_plus), tag)


def estimate_omega_beta_edge(spec: SpectralData, a, epsilon: float = 0.1) -> complex:
    """Data-driven estimate of ``Omega_B`` at the edge from the unspiked spectrum.

    Evaluates ``z tr(A G(z)) / (1 + z tr G(z))`` at
    ``z = lambda_1 + i N**(-2/3 + epsilon)`` with normalized traces.
    """
    if not 0 < epsilon < 1.0 / 3.0:
        raise DomainError("epsilon must lie in (0, 1/3)")
    N = spec.N
    z = spec.eigenvalues[0] + 1j * N ** (-2.0 / 3.0 + epsilon)
    inv = 1.0 / (spec.eigenvalues - z)
    weights = np.asarray(a) @ (np.abs(spec.vectors) ** 2)
    trAG = np.sum(weights * inv) / N
    trG = np.sum(inv) / N
    return complex(z * trAG / (1.0 + z * trG))


# ---------------------------------------------------------------------------
# rigidity and delocalization


@dataclass(frozen=True)
class RigidityReport:
    """Deviations ``|lambda_i - gamma_i|`` and their edge-normalized versions."""

    indices: np.ndarray
    deviations: np.ndarray
    normalized: np.ndarray

    def max_normalized(self, upto: int = 50) -> float:
        return float(np.max(self.normalized[:upto]))

    def log_slope(self, upto: int = 50) -> float:
        """Least-squares slope of log normalized statistic against log index."""
        i = self.indices[:upto]
        y = np.log(np.maximum(self.normalized[:upto], 1e-300))
        return float(np.polyfit(np.log(i), y, 1)[0])


def rigidity_report(eigenvalues, quantiles) -> RigidityReport:
    """Compare descending eigenvalues with descending quantiles for ``i <= N/3``."""
    lam = np.asarray(eigenvalues, dtype=float)
    gam = np.asarray(quantiles, dtype=float)
    N = lam.size
    if gam.size != N:
        raise ConfigError("need one quantile per eigenvalue")
    n = max(1, N // 3)
    i = np.arange(1, n + 1)
    dev = np.abs(lam[:n] - gam[:n])
    return RigidityReport(i, dev, dev * i ** (1.0 / 3.0) * N ** (2.0 / 3.0))


@dataclass(frozen=True)
class DelocalizationReport:
    """``N max_i |u_k(i)|**2`` for ``k <= N/3``; ``degenerate`` marks repeated eigenvalues.

    ``profiled`` holds ``max_i |u_k(i)|**2 / p_k(i)`` for the leading ``k``
    when a deterministic profile ``p`` was supplied, otherwise ``None``.
    """

    statistic: np.ndarray
    degenerate: bool
    profiled: np.ndarray | None = None

    def max_statistic(self, upto: int = 50) -> float:
        return math.nan if self.degenerate else float(np.max(self.statistic[:upto]))

    def max_profiled(self, upto: int = 50) -> float:
        if self.degenerate or self.profiled is None:
            return math.nan
        return float(np.max(self.profiled[:upto]))


def theta_profile(model, eigenvalues, eta: float | None = None) -> np.ndarray:
    """Expected squared components of the left singular vectors.

    Column ``k`` is ``Im Theta_ii(lambda_k + i eta)`` over the first block,
    normalized to sum to one; ``eta`` defaults to ``N**(-2/3)``.  Only the
    base atoms of ``model`` are used.

    Raises
    ------
    SolverError
        If the subordination solve fails at any of the points.
    """
    base = model.unspiked() if hasattr(model, "unspiked") else model
    N = base.N
    eta = N ** (-2.0 / 3.0) if eta is None else float(eta)
    zs = np.asarray(eigenvalues, dtype=float) + 1j * eta
    path = solve_grid(base.mu_A, base.mu_B, zs)
    if not path.converged.all():
        k = int(np.flatnonzero(~path.converged)[0])
        raise SolverError(f"profile solve failed at z = {zs[k]}", residual=float(path.residual[k]),
                          iterations=int(path.iterations[k]))
    out = np.empty((N, zs.size))
    for k in range(zs.size):
        im = theta_matrix(base.base_a, base.base_b, path.value(k), zs[k])[:N].imag
        out[:, k] = im / im.sum()
    return out


def delocalization_report(spec: SpectralData, gap_tol: float = 1e-10,
                          profile: np.ndarray | None = None) -> DelocalizationReport:
    """Largest squared eigenvector component, scaled by ``N``.

    When eigenvalues in the range coincide the eigenbasis is not unique and
    the statistic is meaningless; the report is then flagged degenerate.
    With a ``profile`` (see :func:`theta_profile`) the components are also
    divided by their expected size, which removes the deterministic
    concentration on coordinates whose ``a_i`` sits near ``Omega_B``.
    """
    N = spec.N
    n = max(1, N // 3)
    lam = spec.eigenvalues[: n + 1]
    scale = max(1.0, float(np.max(np.abs(spec.eigenvalues))))
    degenerate = bool(np.any(np.abs(np.diff(lam)) <= gap_tol * scale))
    stat = N * np.max(np.abs(spec.vectors[:, :n]) ** 2, axis=0)
    profiled = None
    if profile is not None:
        profile = np.asarray(profile, dtype=float)
        m = profile.shape[1]
        if profile.shape[0] != N or m > N:
            raise ConfigError("profile must have one row per coordinate")
        profiled = np.max(np.abs(spec.vectors[:, :m]) ** 2 / profile, axis=0)
    return DelocalizationReport(stat, degenerate, profiled)
