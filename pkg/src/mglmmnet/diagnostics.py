"""Adequacy checks for fitted marginal GLMMs.

Pearson residuals use the conditional fitted means.  The probability
integral transform applies each observation's fitted CDF to it; where the
distribution has an atom at the observed value (every binomial count, a
compound-Poisson zero) the PIT is randomised uniformly over the atom's jump,
consuming exactly one uniform per such observation.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov

from .data_io import FORMAT_VERSION
from .errors import StateError
from .families import Binomial, CompoundPoisson
from .glmm import Design, fitted_means


def _observed(fit, table):
    if not fit.converged:
        raise StateError(f"{fit.spec.name}: fit did not converge")
    design = Design(table, fit.spec)
    sub = table.take(design.rows)
    return sub, sub.column(fit.spec.name), fitted_means(fit, sub)


def pearson_residuals(fit, table):
    """``(y - mu) / sqrt(phi * V(mu))`` for the observed rows, in canonical order."""
    _, y, mu = _observed(fit, table)
    return (y - mu) / np.sqrt(fit.dispersion * fit.family.variance(mu))


def ks_uniform(u):
    """One-sample Kolmogorov-Smirnov statistic and asymptotic p-value vs U(0, 1)."""
    u = np.sort(np.asarray(u, dtype=float))
    n = u.size
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - u)), float(np.max(u - (i - 1) / n)))
    return d, float(kolmogorov(math.sqrt(n) * d))


@dataclass
class ResidualReport:
    response: str
    groups: list
    times: list
    fitted: np.ndarray
    residuals: np.ndarray
    pit: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    per_observation: list = field(init=False, repr=False)

    def __post_init__(self):
        self.per_observation = list(zip(self.groups, self.times, self.fitted.tolist(),
                                        self.residuals.tolist(), self.pit.tolist()))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["glass", "week", "fitted", "pearson_residual", "pit"])
        for g, t, m, r, u in self.per_observation:
            w.writerow([g, t, repr(m), repr(r), repr(u)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "formatVersion": FORMAT_VERSION,
            "kind": "ResidualReport",
            "response": self.response,
            "n": len(self.groups),
            "ksStatistic": float(self.ks_statistic),
            "ksPValue": float(self.ks_pvalue),
            "residualMean": float(np.mean(self.residuals)),
            "residualVariance": float(np.var(self.residuals, ddof=1)) if len(self.groups) > 1 else None,
        }


def pit_values(fit, table, rng):
    sub, y, mu = _observed(fit, table)
    fam, phi = fit.family, fit.dispersion
    upper = np.asarray(fam.cdf(y, mu, phi), dtype=float)
    if isinstance(fam, Binomial):
        atom = np.ones(y.size, dtype=bool)
    elif isinstance(fam, CompoundPoisson):
        atom = y == 0
    else:
        atom = np.zeros(y.size, dtype=bool)
    pit = upper.copy()
    if atom.any():
        lower = np.asarray(fam.cdf_left(y[atom], mu[atom], phi), dtype=float)
        pit[atom] = lower + rng.uniform(size=int(atom.sum())) * (upper[atom] - lower)
    return sub, y, mu, np.clip(pit, 0.0, 1.0)


def pit_uniformity(fit, table, rng):
    """PIT values with a Kolmogorov-Smirnov test of uniformity."""
    sub, y, mu, pit = pit_values(fit, table, rng)
    resid = (y - mu) / np.sqrt(fit.dispersion * fit.family.variance(mu))
    d, pval = ks_uniform(pit)
    return ResidualReport(fit.spec.name, list(sub.groups), list(sub.times), mu, resid, pit, d, pval)
