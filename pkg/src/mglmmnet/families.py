"""Exponential dispersion families used by the marginal models.

Every family is parameterised by its mean ``mu`` and a dispersion ``phi`` with
``Var(Y) = phi * V(mu)``.  Binomial means live on the count scale
(``mu = size * probability``) and the binomial dispersion is fixed at 1.

Besides the distributional primitives, each family exposes the pieces the
Laplace fitter needs on the linear-predictor scale ``eta``: the
``eta``-dependent part of the log density (:meth:`kernel`), its first three
``eta`` derivatives, and the ``eta``-free normalising term with its
derivative in ``log(phi)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import digamma, expit, gammainc, gammaln, logit

from . import _kernels
from .errors import DomainError, ParameterError, SeriesConvergenceError

SERIES_RTOL = 1e-12
SERIES_MAX_TERMS = 100_000


class Family:
    name = "family"
    default_link = "log"
    has_dispersion = True

    def variance(self, mu):
        raise NotImplementedError

    def check_mean(self, mu, closed=False):
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise DomainError(f"{self.name} mean must be positive, got {mu}")
        return mu

    def check_support(self, y):
        raise NotImplementedError

    def in_support(self, y):
        raise NotImplementedError

    def check_dispersion(self, phi):
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
            raise ParameterError(f"dispersion must be positive, got {phi}")
        return phi

    # link
    def mean_from_eta(self, eta):
        return np.exp(eta)

    def eta_from_mean(self, mu):
        return np.log(mu)

    def to_dict(self):
        return {"family": self.name}

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(sorted(self.to_dict().items())))


class Gamma(Family):
    """Gamma family, ``V(mu) = mu**2``; shape ``1/phi``, scale ``phi*mu``."""

    name = "gamma"

    def variance(self, mu):
        mu = self.check_mean(mu)
        return mu**2

    def in_support(self, y):
        y = np.asarray(y, dtype=float)
        return np.isfinite(y) & (y > 0)

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(self.in_support(y)):
            raise DomainError(f"gamma responses must be positive, got {y[~self.in_support(y)]}")
        return y

    def zero_probability(self, mu, phi):
        self.check_mean(mu)
        self.check_dispersion(phi)
        return np.zeros(np.broadcast(np.asarray(mu), np.asarray(phi)).shape)[()]

    def log_density(self, y, mu, phi):
        y = self.check_support(y)
        mu = self.check_mean(mu)
        k = 1.0 / self.check_dispersion(phi)
        return k * np.log(k * y / mu) - k * y / mu - np.log(y) - gammaln(k)

    def cdf(self, y, mu, phi):
        mu = self.check_mean(mu)
        k = 1.0 / self.check_dispersion(phi)
        y = np.asarray(y, dtype=float)
        return np.where(y > 0, gammainc(k, k * np.maximum(y, 0.0) / mu), 0.0)[()]

    def cdf_left(self, y, mu, phi):
        return self.cdf(y, mu, phi)

    def sample(self, mu, phi, rng, size=None):
        mu = self.check_mean(mu)
        phi = self.check_dispersion(phi)
        return rng.gamma(1.0 / phi, phi * mu, size=size)

    def kernel(self, y, eta, phi):
        return (-y * np.exp(-eta) - eta) / phi

    def eta_derivatives(self, y, eta, phi):
        r = y * np.exp(-eta) / phi
        return r - 1.0 / phi, -r, r

    def normalizer(self, y, phi):
        k = 1.0 / phi
        c = k * np.log(k * y) - np.log(y) - gammaln(k)
        dc = -k * (np.log(k * y) + 1.0 - digamma(k))
        return c, dc


class CompoundPoisson(Family):
    """Gamma-compound Poisson (Tweedie) family with power index in (1, 2).

    ``Y = X_1 + ... + X_N`` with ``N ~ Poisson(mu**(2-p) / (phi*(2-p)))`` and
    iid Gamma jumps of shape ``(2-p)/(p-1)`` and scale ``phi*(p-1)*mu**(p-1)``.
    """

    name = "compound_poisson"

    def __init__(self, power_index):
        power_index = float(power_index)
        if not 1.0 < power_index < 2.0:
            raise ParameterError(f"power index must lie strictly inside (1, 2), got {power_index}")
        self.power_index = power_index

    def __repr__(self):
        return f"CompoundPoisson({self.power_index!r})"

    def to_dict(self):
        return {"family": self.name, "power_index": self.power_index}

    @property
    def jump_shape(self):
        p = self.power_index
        return (2.0 - p) / (p - 1.0)

    def poisson_rate(self, mu, phi):
        p = self.power_index
        return mu ** (2.0 - p) / (phi * (2.0 - p))

    def jump_scale(self, mu, phi):
        p = self.power_index
        return phi * (p - 1.0) * mu ** (p - 1.0)

    def variance(self, mu):
        mu = self.check_mean(mu)
        return mu**self.power_index

    def in_support(self, y):
        y = np.asarray(y, dtype=float)
        return np.isfinite(y) & (y >= 0)

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(self.in_support(y)):
            raise DomainError(f"compound-Poisson responses must be non-negative, got {y[~self.in_support(y)]}")
        return y

    def zero_probability(self, mu, phi):
        mu = self.check_mean(mu)
        phi = self.check_dispersion(phi)
        return np.exp(-self.poisson_rate(mu, phi))

    def log_w(self, y, phi):
        """log of the series sum and its weighted mean index, for ``y > 0``."""
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(y, np.asarray(phi)).shape
        yb = np.broadcast_to(y, shape).ravel()
        pb = np.broadcast_to(np.asarray(phi, dtype=float), shape).ravel()
        logw, mean_j, terms, failed = _kernels.wright_log_sum(
            yb, self.power_index, pb, SERIES_RTOL, SERIES_MAX_TERMS
        )
        if failed.any():
            i = int(np.flatnonzero(failed)[0])
            raise SeriesConvergenceError(
                f"compound-Poisson series did not converge for y={yb[i]!r} "
                f"(p={self.power_index}, phi={pb[i]!r}) after {int(terms[i])} terms",
                y=float(yb[i]), power=self.power_index, dispersion=float(pb[i]), terms=int(terms[i]),
            )
        return logw.reshape(shape), mean_j.reshape(shape)

    def log_density(self, y, mu, phi):
        y = self.check_support(y)
        mu = self.check_mean(mu)
        phi = self.check_dispersion(phi)
        y, mu, phi = np.broadcast_arrays(y, mu, phi)
        out = np.array(self.kernel(y, np.log(mu), phi), dtype=float)
        pos = y > 0
        if pos.any():
            logw, _ = self.log_w(y[pos], phi[pos])
            out[pos] += logw - np.log(y[pos])
        return out[()]

    def cdf(self, y, mu, phi):
        mu = self.check_mean(mu)
        phi = self.check_dispersion(phi)
        y, mu, phi = np.broadcast_arrays(np.asarray(y, dtype=float), mu, phi)
        lam = self.poisson_rate(mu, phi)
        out = np.where(y >= 0, np.exp(-lam), 0.0)
        pos = y > 0
        if pos.any():
            # Poisson mixture of Gamma CDFs
            lam_p = lam[pos]
            x = y[pos] / self.jump_scale(mu[pos], phi[pos])
            lam_max = lam_p.max()
            j_hi = int(np.ceil(lam_max + 12.0 * np.sqrt(lam_max) + 40.0))
            j = np.arange(1, j_hi + 1)[:, None]
            w = stats.poisson.pmf(j, lam_p[None, :])
            out[pos] += np.sum(w * gammainc(j * self.jump_shape, x[None, :]), axis=0)
        return np.clip(out, 0.0, 1.0)[()]

    def cdf_left(self, y, mu, phi):
        y = np.asarray(y, dtype=float)
        return np.where(y > 0, self.cdf(y, mu, phi), 0.0)[()]

    def sample(self, mu, phi, rng, size=None):
        mu = self.check_mean(mu)
        phi = self.check_dispersion(phi)
        n = rng.poisson(self.poisson_rate(mu, phi), size=size)
        jumps = rng.gamma(np.maximum(n, 1) * self.jump_shape, self.jump_scale(mu, phi), size=size)
        return np.where(n > 0, jumps, 0.0)[()]

    def kernel(self, y, eta, phi):
        p = self.power_index
        return (y * np.exp((1.0 - p) * eta) / (1.0 - p) - np.exp((2.0 - p) * eta) / (2.0 - p)) / phi

    def eta_derivatives(self, y, eta, phi):
        p = self.power_index
        a = y * np.exp((1.0 - p) * eta) / phi
        b = np.exp((2.0 - p) * eta) / phi
        return a - b, (1.0 - p) * a - (2.0 - p) * b, (1.0 - p) ** 2 * a - (2.0 - p) ** 2 * b

    def normalizer(self, y, phi):
        y = np.asarray(y, dtype=float)
        c = np.zeros_like(y)
        dc = np.zeros_like(y)
        pos = y > 0
        if pos.any():
            logw, mean_j = self.log_w(y[pos], phi)
            c[pos] = logw - np.log(y[pos])
            dc[pos] = -(1.0 + self.jump_shape) * mean_j
        return c, dc


class Binomial(Family):
    """Binomial counts out of ``size`` trials, logit link, mean on count scale."""

    name = "binomial"
    default_link = "logit"
    has_dispersion = False

    def __init__(self, size):
        if int(size) != size or size < 1:
            raise ParameterError(f"binomial size must be a positive integer, got {size}")
        self.size = int(size)

    def __repr__(self):
        return f"Binomial({self.size})"

    def to_dict(self):
        return {"family": self.name, "size": self.size}

    def check_mean(self, mu, closed=False):
        mu = np.asarray(mu, dtype=float)
        if closed:
            ok = (mu >= 0) & (mu <= self.size)
        else:
            ok = (mu > 0) & (mu < self.size)
        if not np.all(np.isfinite(mu) & ok):
            raise DomainError(f"binomial mean must lie in (0, {self.size}), got {mu}")
        return mu

    def check_dispersion(self, phi):
        phi = np.asarray(phi, dtype=float)
        if not np.all(phi == 1.0):
            raise ParameterError(f"binomial dispersion is fixed at 1, got {phi}")
        return phi

    def variance(self, mu):
        mu = self.check_mean(mu)
        return mu * (1.0 - mu / self.size)

    def in_support(self, y):
        y = np.asarray(y, dtype=float)
        return np.isfinite(y) & (y >= 0) & (y <= self.size) & (y == np.round(y))

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(self.in_support(y)):
            raise DomainError(f"binomial responses must be integers in [0, {self.size}], got {y[~self.in_support(y)]}")
        return y

    def zero_probability(self, mu, phi=1.0):
        mu = self.check_mean(mu, closed=True)
        self.check_dispersion(phi)
        return (1.0 - mu / self.size) ** self.size

    def log_density(self, y, mu, phi=1.0):
        y = self.check_support(y)
        mu = self.check_mean(mu, closed=True)
        self.check_dispersion(phi)
        return stats.binom.logpmf(y, self.size, mu / self.size)[()]

    def cdf(self, y, mu, phi=1.0):
        mu = self.check_mean(mu, closed=True)
        return stats.binom.cdf(np.floor(y), self.size, mu / self.size)[()]

    def cdf_left(self, y, mu, phi=1.0):
        mu = self.check_mean(mu, closed=True)
        return stats.binom.cdf(np.ceil(y) - 1, self.size, mu / self.size)[()]

    def sample(self, mu, phi, rng, size=None):
        mu = self.check_mean(mu, closed=True)
        self.check_dispersion(phi)
        return np.asarray(rng.binomial(self.size, mu / self.size, size=size), dtype=float)

    def mean_from_eta(self, eta):
        return self.size * expit(eta)

    def eta_from_mean(self, mu):
        return logit(np.asarray(mu) / self.size)

    def kernel(self, y, eta, phi=1.0):
        return y * eta - self.size * np.logaddexp(0.0, eta)

    def eta_derivatives(self, y, eta, phi=1.0):
        pr = expit(eta)
        v = self.size * pr * (1.0 - pr)
        return y - self.size * pr, -v, -v * (1.0 - 2.0 * pr)

    def normalizer(self, y, phi=1.0):
        c = gammaln(self.size + 1.0) - gammaln(y + 1.0) - gammaln(self.size - y + 1.0)
        return c, np.zeros_like(c)


def family_from_dict(data, default_size=None):
    data = dict(data)
    name = data.pop("family", None)
    if name == "gamma":
        fam = Gamma()
    elif name == "binomial":
        size = data.pop("size", default_size)
        if size is None:
            raise ParameterError("binomial family needs a size")
        fam = Binomial(size)
    elif name in ("compound_poisson", "tweedie"):
        fam = CompoundPoisson(data.pop("power_index", 1.5))
    else:
        raise ParameterError(f"unknown family {name!r}")
    if data:
        raise ParameterError(f"unknown family fields {sorted(data)}")
    return fam


@dataclass(frozen=True)
class DispersionParams:
    mean: float
    dispersion: float = 1.0

    def validated(self, family, closed=False):
        family.check_mean(self.mean, closed=closed)
        family.check_dispersion(self.dispersion)
        return self


def variance_function(family, mean):
    """Unit variance function ``V(mean)``."""
    return float(family.variance(mean))


def zero_probability(family, params):
    params.validated(family, closed=True)
    return float(family.zero_probability(params.mean, params.dispersion))


def log_density(family, params, y):
    params.validated(family, closed=True)
    return float(family.log_density(y, params.mean, params.dispersion))


def cdf(family, params, y):
    params.validated(family, closed=True)
    return float(family.cdf(y, params.mean, params.dispersion))


def sample(family, params, rng):
    params.validated(family, closed=True)
    return float(family.sample(params.mean, params.dispersion, rng))

