"""Synthetic data from the multivariate GLMM with known random components.

Per group ``g`` a vector ``B_g ~ N(0, sigma)`` holds one random intercept per
response; every cell ``(g, t, response)`` is then drawn independently from the
response's family at mean ``inverse_link(beta_t + B_g[response])``.

Random streams are split deterministically from one seed: stream ``(0, g)``
draws ``B_g`` and stream ``(1, g, r)`` draws response ``r`` of group ``g``
(time levels in order), so results do not depend on generation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .data_io import FORMAT_VERSION, ObservationTable, check_fields, check_version
from .errors import InputError, ParameterError
from .families import Binomial, CompoundPoisson, Gamma
from .glmm import ResponseSpec
from .graphs import FIGURE1_TARGETS, FIGURE1_VOCS, figure1_graph

PSD_TOL = 1e-10
FIGURE1_PARTIAL_CORRELATION = 0.19


def psd_factor(sigma, tol=PSD_TOL):
    """``F`` with ``F @ F.T == sigma`` via pivoted Cholesky; rejects indefinite input."""
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    if sigma.shape != (n, n) or not np.allclose(sigma, sigma.T, atol=tol, rtol=0):
        raise ParameterError("covariance matrix must be square and symmetric")
    if n == 0:
        return np.zeros((0, 0))
    if not np.any(sigma):
        return np.zeros((n, n))
    c, piv, rank, info = lapack.dpstrf(sigma, lower=1, tol=-1.0)
    if info < 0:
        raise ParameterError("pivoted Cholesky failed")
    L = np.tril(c)
    L[:, rank:] = 0.0
    F = np.zeros_like(L)
    F[piv - 1, :] = L
    if np.max(np.abs(F @ F.T - sigma)) > max(tol, tol * np.max(np.abs(sigma))) * n * 100:
        raise ParameterError("covariance matrix is not positive semidefinite")
    return F


def child_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass
class MglmmSpec:
    """Full generative specification of the multivariate model."""

    responses: list
    fixed_effects: dict
    dispersions: dict
    sigma: np.ndarray
    groups: int
    time_levels: list
    binomial_size: int = 9

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.time_levels = [str(t) for t in self.time_levels]
        names = [r.name for r in self.responses]
        if len(set(names)) != len(names):
            raise InputError("duplicate response names")
        if self.groups < 1:
            raise InputError("groups must be positive")
        if not self.time_levels:
            raise InputError("at least one time level required")
        if self.sigma.shape != (len(names), len(names)):
            raise InputError(f"sigma must be {len(names)}x{len(names)}, got {self.sigma.shape}")
        for r in self.responses:
            fe = self.fixed_effects.get(r.name)
            if fe is None or set(map(str, fe)) != set(self.time_levels):
                raise InputError(f"{r.name}: need one fixed effect per time level")
            if r.family.has_dispersion:
                r.family.check_dispersion(self.dispersions.get(r.name, math.nan))
        self.factor = psd_factor(self.sigma)

    @property
    def response_names(self):
        return [r.name for r in self.responses]

    def dispersion(self, name):
        return float(self.dispersions.get(name, 1.0))

    def to_dict(self):
        return {
            "formatVersion": FORMAT_VERSION,
            "responses": [r.to_dict() for r in self.responses],
            "fixedEffects": {k: {str(t): float(v) for t, v in fe.items()} for k, fe in self.fixed_effects.items()},
            "dispersions": {k: float(v) for k, v in self.dispersions.items()},
            "sigma": self.sigma.tolist(),
            "groups": int(self.groups),
            "timeLevels": list(self.time_levels),
            "binomialSize": int(self.binomial_size),
        }

    @classmethod
    def from_dict(cls, data):
        keys = {"formatVersion", "responses", "fixedEffects", "dispersions", "sigma", "groups", "timeLevels", "binomialSize"}
        check_fields(data, keys, "model spec", required=tuple(sorted(keys - {"binomialSize", "dispersions"})))
        check_version(data, "model spec")
        size = int(data.get("binomialSize", 9))
        return cls(
            [ResponseSpec.from_dict(r, default_size=size) for r in data["responses"]],
            {k: {str(t): float(v) for t, v in fe.items()} for k, fe in data["fixedEffects"].items()},
            {k: float(v) for k, v in data.get("dispersions", {}).items()},
            np.array(data["sigma"], dtype=float),
            int(data["groups"]),
            [str(t) for t in data["timeLevels"]],
            size,
        )


def simulate_dataset(spec, seed):
    """Draw one dataset; returns ``(table, truth)``.

    ``truth`` carries the realised random components ``B`` (groups x
    responses) together with the generating spec.
    """
    names = spec.response_names
    group_ids = [str(g + 1) for g in range(spec.groups)]
    R, T = len(names), len(spec.time_levels)
    B = np.empty((spec.groups, R))
    for g in range(spec.groups):
        B[g] = spec.factor @ child_rng(seed, 0, g).standard_normal(R)

    values = {n: np.empty(spec.groups * T) for n in names}
    for r, resp in enumerate(spec.responses):
        fam = resp.family
        beta = np.array([spec.fixed_effects[resp.name][t] for t in spec.time_levels])
        phi = spec.dispersion(resp.name)
        for g in range(spec.groups):
            mu = fam.mean_from_eta(beta + B[g, r])
            draws = fam.sample(mu, phi, child_rng(seed, 1, g, r))
            values[resp.name][g * T:(g + 1) * T] = draws

    table = ObservationTable(
        [gid for gid in group_ids for _ in spec.time_levels],
        [t for _ in group_ids for t in spec.time_levels],
        values,
        names,
    )
    truth = {
        "formatVersion": FORMAT_VERSION,
        "seed": int(seed),
        "groupIds": group_ids,
        "responseNames": names,
        "B": B.tolist(),
        "spec": spec.to_dict(),
    }
    return table, truth


def graph_to_sigma(graph, partial_correlation):
    """Covariance whose precision has unit diagonal and ``-partial_correlation`` on edges."""
    rho = float(partial_correlation)
    if not 0.0 < rho < 1.0:
        raise ParameterError(f"partial correlation must lie in (0, 1), got {rho}")
    n = len(graph.vertices)
    K = np.eye(n)
    for a, b in graph.sorted_edges():
        i, j = graph.index(a), graph.index(b)
        K[i, j] = K[j, i] = -rho
    eig = np.linalg.eigvalsh(K)
    if eig[0] <= PSD_TOL:
        lam = np.linalg.eigvalsh(np.eye(n) - K)[-1] / rho
        raise ParameterError(
            f"precision matrix is not positive definite for partial correlation {rho}; "
            f"use a value below {1.0 / lam:.4f}"
        )
    sigma = np.linalg.inv(K)
    return (sigma + sigma.T) / 2.0


def figure1_spec(groups=10, partial_correlation=FIGURE1_PARTIAL_CORRELATION, re_variance=0.5,
                 time_levels=("6", "12", "18"), power_index=1.5, binomial_size=9):
    """16-response spec whose random-component graph is the Figure 1 topology.

    The graph-derived covariance is rescaled to common variance
    ``re_variance``; rescaling leaves the precision zero pattern and the
    partial correlations unchanged.
    """
    graph = figure1_graph()
    sigma = graph_to_sigma(graph, partial_correlation)
    d = np.sqrt(np.diag(sigma))
    sigma = re_variance * sigma / np.outer(d, d)
    time_levels = [str(t) for t in time_levels]
    T = len(time_levels)
    responses, fixed, disp = [], {}, {}
    for k, name in enumerate(FIGURE1_VOCS):
        responses.append(ResponseSpec(name, Gamma()))
        base = 0.5 + 0.25 * (k % 5)
        fixed[name] = {t: base + 0.3 * i for i, t in enumerate(time_levels)}
        disp[name] = (0.1, 0.2, 0.3)[k % 3]
    infection, lesion = FIGURE1_TARGETS
    responses.append(ResponseSpec(infection, Binomial(binomial_size)))
    fixed[infection] = {t: -1.5 + 3.0 * i / max(T - 1, 1) for i, t in enumerate(time_levels)}
    responses.append(ResponseSpec(lesion, CompoundPoisson(power_index)))
    fixed[lesion] = {t: -0.3 + 0.6 * i / max(T - 1, 1) for i, t in enumerate(time_levels)}
    disp[lesion] = 1.0
    return MglmmSpec(responses, fixed, disp, sigma, groups, time_levels, binomial_size)

