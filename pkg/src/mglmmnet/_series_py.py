"""Pure numpy fallback for the compound-Poisson series kernel.

Same contract as the compiled ``_series.wright_log_sum``; the summation is
vectorised across observations, stepping outward from each observation's
dominant index in lockstep.
"""
import numpy as np
from scipy.special import gammaln


def _term(j, logz, a):
    return j * logz - gammaln(j + 1.0) - gammaln(a * j)


def wright_log_sum(y, p, phi, rtol=1e-12, max_terms=100000):
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    n = y.shape[0]
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (n,))
    a = (2.0 - p) / (p - 1.0)
    logz = a * np.log(y) - (1.0 + a) * np.log(phi) - a * np.log(p - 1.0) - np.log(2.0 - p)

    j0 = np.maximum(np.floor(y ** (2.0 - p) / (phi * (2.0 - p)) + 0.5), 1.0)
    count = np.zeros(n, dtype=np.int64)
    while True:
        up = (_term(j0 + 1.0, logz, a) > _term(j0, logz, a)) & (count < max_terms)
        if not up.any():
            break
        j0 = np.where(up, j0 + 1.0, j0)
        count += up
    while True:
        down = (j0 > 1.0) & (count < max_terms)
        down &= _term(np.maximum(j0 - 1.0, 1.0), logz, a) > _term(j0, logz, a)
        if not down.any():
            break
        j0 = np.where(down, j0 - 1.0, j0)
        count += down

    tmax = _term(j0, logz, a)
    s = np.ones(n)
    sj = j0.copy()

    active = np.ones(n, dtype=bool)
    j = j0 + 1.0
    while active.any():
        t = np.where(active, np.exp(_term(j, logz, a) - tmax), 0.0)
        s += t
        sj += j * t
        count += active
        active &= ~((t < rtol * s) | (count >= max_terms))
        j += 1.0

    active = (j0 > 1.0) & (count < max_terms)
    j = j0 - 1.0
    while active.any():
        t = np.where(active, np.exp(_term(np.maximum(j, 1.0), logz, a) - tmax), 0.0)
        s += t
        sj += j * t
        count += active
        active &= ~(t < rtol * s)
        j -= 1.0
        active &= (j >= 1.0) & (count < max_terms)

    return tmax + np.log(s), sj / s, count, count >= max_terms
