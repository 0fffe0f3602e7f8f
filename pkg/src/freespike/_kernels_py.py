"""Pure numpy kernels; reference behaviour for the compiled ``_core`` module.

Both modules expose the same three functions with identical signatures and
status codes, so :mod:`freespike._backend` can swap them freely.

Status codes returned by the solvers:

* ``0`` converged
* ``1`` iteration budget exhausted
* ``2`` hit a pole (zero denominator or non-finite value)
"""
from __future__ import annotations

import math

import numpy as np

CONVERGED = 0
MAX_ITER = 1
POLE = 2

_MIN_DAMPING = 1.0 / 1024.0


def moment_sums(x: np.ndarray, w: np.ndarray, z: complex) -> tuple[complex, complex, complex]:
    """Return ``(sum w/(x-z), sum w x/(x-z), sum w x/(x-z)**2)``."""
    # poles are reported through non-finite sums, not warnings
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 / (x - z)
        t = w * x * d
    return complex(np.dot(w, d)), complex(t.sum()), complex(np.dot(t, d))


def _phi(xa, wa, xb, wb, z, oa):
    # One sweep of the alternating map Omega_A -> z M_A(w_B)/w_B with
    # w_B = z M_B(Omega_A)/Omega_A, plus its derivative and the defects.
    if oa == 0:
        return None
    _, s1b, s2b = moment_sums(xb, wb, oa)
    if s1b == 0 or not math.isfinite(abs(s1b)):
        return None
    mb = 1.0 - 1.0 / s1b
    dmb = s2b / (s1b * s1b)
    ob = z * mb / oa
    if ob == 0 or not math.isfinite(abs(ob)):
        return None
    _, s1a, s2a = moment_sums(xa, wa, ob)
    if s1a == 0 or not math.isfinite(abs(s1a)):
        return None
    ma = 1.0 - 1.0 / s1a
    dma = s2a / (s1a * s1a)
    new = z * ma / ob
    dob = z * (dmb * oa - mb) / (oa * oa)
    dnew = z * (dma * ob - ma) / (ob * ob) * dob
    prod = oa * ob
    res = max(abs(z * ma - prod), abs(z * mb - prod))
    if not math.isfinite(res):
        return None
    return new, dnew, ob, res


def _admissible(cand: complex, z: complex) -> bool:
    if not (math.isfinite(cand.real) and math.isfinite(cand.imag)):
        return False
    if z.imag > 0:
        return cand.imag > 0
    if z.imag < 0:
        return cand.imag < 0
    return True


def solve(xa, wa, xb, wb, z, omega_a0, tol, max_iter, damping, adaptive, accelerate):
    z = complex(z)
    oa = complex(omega_a0)
    scale = tol * (1.0 + abs(z) ** 2)
    damp = damping
    prev = math.inf
    state = _phi(xa, wa, xb, wb, z, oa)
    if state is None:
        return oa, complex("nan"), math.inf, 0, POLE
    it = 0
    while True:
        new, dnew, ob, res = state
        if res <= scale:
            return oa, ob, res, it, CONVERGED
        if it >= max_iter:
            return oa, ob, res, it, MAX_ITER
        it += 1
        if adaptive:
            if res > prev:
                damp = max(damp * 0.5, _MIN_DAMPING)
            elif damp < damping:
                damp = min(damp * 2.0, damping)
        prev = res
        if accelerate:
            denom = 1.0 - dnew
            if denom != 0:
                cand = oa - (oa - new) / denom
                if _admissible(cand, z):
                    trial = _phi(xa, wa, xb, wb, z, cand)
                    if trial is not None and trial[3] < res:
                        oa, state = cand, trial
                        continue
        oa = oa + damp * (new - oa)
        state = _phi(xa, wa, xb, wb, z, oa)
        if state is None:
            return oa, complex("nan"), math.inf, it, POLE


def solve_path(xa, wa, xb, wb, zs, omega_a0, tol, max_iter, damping, adaptive, accelerate):
    zs = np.asarray(zs, dtype=complex)
    n = zs.shape[0]
    oa_out = np.empty(n, dtype=complex)
    ob_out = np.empty(n, dtype=complex)
    res_out = np.empty(n)
    it_out = np.empty(n, dtype=np.int64)
    st_out = np.empty(n, dtype=np.int64)
    guess = complex(omega_a0)
    for k in range(n):
        oa, ob, res, it, st = solve(xa, wa, xb, wb, zs[k], guess, tol, max_iter,
                                    damping, adaptive, accelerate)
        if st != CONVERGED and guess != zs[k]:
            # warm start failed; one cold retry from the identity guess
            oa, ob, res, it2, st = solve(xa, wa, xb, wb, zs[k], zs[k], tol, max_iter,
                                         damping, adaptive, accelerate)
            it += it2
        oa_out[k], ob_out[k], res_out[k], it_out[k], st_out[k] = oa, ob, res, it, st
        guess = oa if st == CONVERGED else zs[min(k + 1, n - 1)]
    return oa_out, ob_out, res_out, it_out, st_out
