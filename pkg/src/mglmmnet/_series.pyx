# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel for the compound-Poisson (1 < p < 2) series.

For y > 0 the density factorises as W(y, phi, p) / y * exp((y*theta - kappa)/phi)
with W = sum_{j>=1} z**j / (j! * Gamma(j*a)), a = (2-p)/(p-1).  This module
returns log W and the term-weighted mean index (needed for d log W / d log phi).
"""
import numpy as np
from libc.math cimport exp, log, lgamma, pow, floor


cdef inline double _term(double j, double logz, double a) nogil:
    return j * logz - lgamma(j + 1.0) - lgamma(a * j)


def wright_log_sum(y, double p, phi, double rtol=1e-12, long max_terms=100000):
    """Return ``(log_w, mean_index, n_terms, failed)`` arrays for positive ``y``."""
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef Py_ssize_t n = yv.shape[0]
    cdef const double[::1] phiv = np.ascontiguousarray(
        np.broadcast_to(np.asarray(phi, dtype=np.float64), (n,))
    )
    out_logw = np.empty(n)
    out_mean = np.empty(n)
    out_terms = np.zeros(n, dtype=np.int64)
    out_failed = np.zeros(n, dtype=np.bool_)
    cdef double[::1] logw = out_logw
    cdef double[::1] mean_j = out_mean
    cdef long long[::1] terms = out_terms
    cdef unsigned char[::1] failed = out_failed.view(np.uint8)

    cdef double a = (2.0 - p) / (p - 1.0)
    cdef double c0 = -a * log(p - 1.0) - log(2.0 - p)
    cdef Py_ssize_t i
    cdef double yi, ph, logz, j0, tmax, s, sj, t, j
    cdef long count

    with nogil:
        for i in range(n):
            yi = yv[i]
            ph = phiv[i]
            logz = a * log(yi) - (1.0 + a) * log(ph) + c0
            j0 = floor(pow(yi, 2.0 - p) / (ph * (2.0 - p)) + 0.5)
            if j0 < 1.0:
                j0 = 1.0
            count = 0
            # terms are concave in j: climb to the maximum
            while _term(j0 + 1.0, logz, a) > _term(j0, logz, a) and count < max_terms:
                j0 += 1.0
                count += 1
            while j0 > 1.0 and _term(j0 - 1.0, logz, a) > _term(j0, logz, a) and count < max_terms:
                j0 -= 1.0
                count += 1
            tmax = _term(j0, logz, a)
            s = 1.0
            sj = j0
            j = j0 + 1.0
            while True:
                t = exp(_term(j, logz, a) - tmax)
                s += t
                sj += j * t
                count += 1
                if t < rtol * s or count >= max_terms:
                    break
                j += 1.0
            j = j0 - 1.0
            while j >= 1.0 and count < max_terms:
                t = exp(_term(j, logz, a) - tmax)
                s += t
                sj += j * t
                count += 1
                if t < rtol * s:
                    break
                j -= 1.0
            logw[i] = tmax + log(s)
            mean_j[i] = sj / s
            terms[i] = count
            failed[i] = count >= max_terms
    return out_logw, out_mean, out_terms, out_failed
