# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the subordination solver.

Mirrors :mod:`freespike._kernels_py` function for function; the sums over
atoms and the whole fixed-point loop run without touching Python objects.
"""
import numpy as np

from libc.math cimport fabs, sqrt, isfinite, INFINITY, NAN

cdef enum:
    CONVERGED = 0
    MAX_ITER = 1
    POLE = 2

cdef double MIN_DAMPING = 1.0 / 1024.0


cdef struct Sums:
    double s0r, s0i, s1r, s1i, s2r, s2i


cdef inline Sums _sums(const double[::1] x, const double[::1] w,
                       double zr, double zi) noexcept nogil:
    cdef Sums s
    cdef Py_ssize_t k, n = x.shape[0]
    cdef double p, q, den, dr, di, tr, ti, xk, wk
    s.s0r = 0.0; s.s0i = 0.0; s.s1r = 0.0; s.s1i = 0.0; s.s2r = 0.0; s.s2i = 0.0
    for k in range(n):
        xk = x[k]
        wk = w[k]
        # 1/(x - z) with x - z = p - i q
        p = xk - zr
        q = zi
        den = p * p + q * q
        dr = p / den
        di = q / den
        s.s0r += wk * dr
        s.s0i += wk * di
        tr = wk * xk * dr
        ti = wk * xk * di
        s.s1r += tr
        s.s1i += ti
        s.s2r += tr * dr - ti * di
        s.s2i += tr * di + ti * dr
    return s


cdef inline double complex _c(double r, double i) noexcept nogil:
    cdef double complex out
    out.real = r
    out.imag = i
    return out


cdef inline bint _finite(double complex v) noexcept nogil:
    return isfinite(v.real) and isfinite(v.imag)


cdef inline double _abs(double complex v) noexcept nogil:
    return sqrt(v.real * v.real + v.imag * v.imag)


cdef int _phi(const double[::1] xa, const double[::1] wa,
              const double[::1] xb, const double[::1] wb,
              double complex z, double complex oa,
              double complex* new, double complex* dnew,
              double complex* ob, double* res) noexcept nogil:
    cdef Sums sb, sa
    cdef double complex s1b, s2b, mb, dmb, s1a, s2a, ma, dma, dob, prod
    if oa.real == 0.0 and oa.imag == 0.0:
        return 0
    sb = _sums(xb, wb, oa.real, oa.imag)
    s1b = _c(sb.s1r, sb.s1i)
    s2b = _c(sb.s2r, sb.s2i)
    if (s1b.real == 0.0 and s1b.imag == 0.0) or not _finite(s1b):
        return 0
    mb = 1.0 - 1.0 / s1b
    dmb = s2b / (s1b * s1b)
    ob[0] = z * mb / oa
    if (ob[0].real == 0.0 and ob[0].imag == 0.0) or not _finite(ob[0]):
        return 0
    sa = _sums(xa, wa, ob[0].real, ob[0].imag)
    s1a = _c(sa.s1r, sa.s1i)
    s2a = _c(sa.s2r, sa.s2i)
    if (s1a.real == 0.0 and s1a.imag == 0.0) or not _finite(s1a):
        return 0
    ma = 1.0 - 1.0 / s1a
    dma = s2a / (s1a * s1a)
    new[0] = z * ma / ob[0]
    dob = z * (dmb * oa - mb) / (oa * oa)
    dnew[0] = z * (dma * ob[0] - ma) / (ob[0] * ob[0]) * dob
    prod = oa * ob[0]
    res[0] = _abs(z * ma - prod)
    if _abs(z * mb - prod) > res[0]:
        res[0] = _abs(z * mb - prod)
    if not isfinite(res[0]):
        return 0
    return 1


cdef inline bint _admissible(double complex cand, double complex z) noexcept nogil:
    if not _finite(cand):
        return False
    if z.imag > 0:
        return cand.imag > 0
    if z.imag < 0:
        return cand.imag < 0
    return True


cdef int _solve(const double[::1] xa, const double[::1] wa,
                const double[::1] xb, const double[::1] wb,
                double complex z, double complex oa0, double tol, long max_iter,
                double damping, bint adaptive, bint accelerate,
                double complex* oa_out, double complex* ob_out,
                double* res_out, long* it_out) noexcept nogil:
    cdef double complex oa = oa0, new, dnew, ob, cand, tnew, tdnew, tob
    cdef double res, tres, prev = INFINITY, damp = damping
    cdef double scale = tol * (1.0 + z.real * z.real + z.imag * z.imag)
    cdef double complex denom
    cdef long it = 0
    cdef bint accepted
    if not _phi(xa, wa, xb, wb, z, oa, &new, &dnew, &ob, &res):
        oa_out[0] = oa
        ob_out[0] = _c(NAN, NAN)
        res_out[0] = INFINITY
        it_out[0] = 0
        return POLE
    while True:
        if res <= scale:
            oa_out[0] = oa; ob_out[0] = ob; res_out[0] = res; it_out[0] = it
            return CONVERGED
        if it >= max_iter:
            oa_out[0] = oa; ob_out[0] = ob; res_out[0] = res; it_out[0] = it
            return MAX_ITER
        it += 1
        if adaptive:
            if res > prev:
                damp = damp * 0.5
                if damp < MIN_DAMPING:
                    damp = MIN_DAMPING
            elif damp < damping:
                damp = damp * 2.0
                if damp > damping:
                    damp = damping
        prev = res
        accepted = False
        if accelerate:
            denom = 1.0 - dnew
            if denom.real != 0.0 or denom.imag != 0.0:
                cand = oa - (oa - new) / denom
                if _admissible(cand, z):
                    if _phi(xa, wa, xb, wb, z, cand, &tnew, &tdnew, &tob, &tres):
                        if tres < res:
                            oa = cand; new = tnew; dnew = tdnew; ob = tob; res = tres
                            accepted = True
        if accepted:
            continue
        oa = oa + damp * (new - oa)
        if not _phi(xa, wa, xb, wb, z, oa, &new, &dnew, &ob, &res):
            oa_out[0] = oa
            ob_out[0] = _c(NAN, NAN)
            res_out[0] = INFINITY
            it_out[0] = it
            return POLE


def moment_sums(const double[::1] x, const double[::1] w, z):
    """Return ``(sum w/(x-z), sum w x/(x-z), sum w x/(x-z)**2)``."""
    cdef double complex zz = z
    cdef Sums s = _sums(x, w, zz.real, zz.imag)
    return (complex(s.s0r, s.s0i), complex(s.s1r, s.s1i), complex(s.s2r, s.s2i))


def solve(const double[::1] xa, const double[::1] wa,
          const double[::1] xb, const double[::1] wb,
          z, omega_a0, double tol, long max_iter, double damping,
          bint adaptive, bint accelerate):
    cdef double complex oa, ob
    cdef double res
    cdef long it
    cdef int status
    cdef double complex zz = z, g = omega_a0
    with nogil:
        status = _solve(xa, wa, xb, wb, zz, g, tol, max_iter, damping,
                        adaptive, accelerate, &oa, &ob, &res, &it)
    return complex(oa), complex(ob), res, it, status


def solve_path(const double[::1] xa, const double[::1] wa,
               const double[::1] xb, const double[::1] wb,
               zs, omega_a0, double tol, long max_iter, double damping,
               bint adaptive, bint accelerate):
    cdef double complex[::1] zv = np.ascontiguousarray(zs, dtype=np.complex128)
    cdef Py_ssize_t k, n = zv.shape[0]
    oa_arr = np.empty(n, dtype=np.complex128)
    ob_arr = np.empty(n, dtype=np.complex128)
    res_arr = np.empty(n, dtype=np.float64)
    it_arr = np.empty(n, dtype=np.int64)
    st_arr = np.empty(n, dtype=np.int64)
    cdef double complex[::1] oa_v = oa_arr
    cdef double complex[::1] ob_v = ob_arr
    cdef double[::1] res_v = res_arr
    cdef long long[::1] it_v = it_arr
    cdef long long[::1] st_v = st_arr
    cdef double complex guess = omega_a0, oa, ob
    cdef double res
    cdef long it, it2
    cdef int st
    with nogil:
        for k in range(n):
            st = _solve(xa, wa, xb, wb, zv[k], guess, tol, max_iter, damping,
                        adaptive, accelerate, &oa, &ob, &res, &it)
            if st != CONVERGED and (guess.real != zv[k].real or guess.imag != zv[k].imag):
                st = _solve(xa, wa, xb, wb, zv[k], zv[k], tol, max_iter, damping,
                            adaptive, accelerate, &oa, &ob, &res, &it2)
                it = it + it2
            oa_v[k] = oa
            ob_v[k] = ob
            res_v[k] = res
            it_v[k] = it
            st_v[k] = st
            if st == CONVERGED:
                guess = oa
            elif k + 1 < n:
                guess = zv[k + 1]
    return oa_arr, ob_arr, res_arr, it_arr, st_arr
