"""Univariate GLMM with a categorical time effect and a Gaussian random intercept.

The model for response ``y`` of group ``g`` at time level ``t`` is

    link(E[y | u_g]) = beta_t + u_g,    u_g ~ N(0, sigma2)  iid,

and it is fitted by maximising the Laplace approximation of the marginal
likelihood.  Each group's integral is one-dimensional, so the inner mode
search is a vectorised scalar Newton iteration; the outer problem over
``(beta, log phi, log sigma2)`` uses L-BFGS-B with the exact gradient of the
Laplace objective (implicit differentiation through the modes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data_io import check_fields, natural_key
from .errors import InputError, NumericalError, StateError
from .families import Binomial, CompoundPoisson, Family, Gamma, family_from_dict

INNER_TOL = 1e-10
INNER_MAX_ITER = 50
OUTER_MAX_ITER = 500
PARAM_TOL = 1e-7
OBJECTIVE_TOL = 1e-9
# a line-search stop counts as converged when the projected gradient is below
# this, relative to max(1, |objective|)
PROJECTED_GRADIENT_TOL = 1e-6
INITIAL_RE_VARIANCE = 0.1

LOG_RE_VARIANCE_BOUNDS = (math.log(1e-8), math.log(1e3))
LOG_DISPERSION_BOUNDS = (math.log(1e-6), math.log(1e4))

_ALLOWED_LINKS = {Gamma: "log", CompoundPoisson: "log", Binomial: "logit"}


class InnerNewtonError(NumericalError):
    def __init__(self, message, group=None):
        super().__init__(message)
        self.group = group


@dataclass(frozen=True)
class ResponseSpec:
    name: str
    family: Family
    link: str | None = None

    def __post_init__(self):
        if not isinstance(self.family, Family):
            raise InputError(f"{self.name}: family must be a Family instance")
        allowed = _ALLOWED_LINKS[type(self.family)]
        if self.link is None:
            object.__setattr__(self, "link", allowed)
        elif self.link != allowed:
            raise InputError(f"{self.name}: {self.family.name} requires the {allowed} link, got {self.link!r}")

    def with_family(self, family):
        return ResponseSpec(self.name, family, self.link)

    def to_dict(self):
        return {"name": self.name, **self.family.to_dict(), "link": self.link}

    @classmethod
    def from_dict(cls, data, default_size=None):
        check_fields(data, {"name", "family", "size", "power_index", "link"}, "response", required=("name", "family"))
        fam = family_from_dict({k: v for k, v in data.items() if k not in ("name", "link")}, default_size)
        return cls(str(data["name"]), fam, data.get("link"))


@dataclass
class FittedGLMM:
    spec: ResponseSpec
    fixed_effects: dict
    dispersion: float
    re_variance: float
    re_predictions: dict
    log_likelihood: float
    converged: bool
    iterations: int = 0
    pearson_dispersion: float = math.nan
    objective_trace: list = field(default_factory=list, repr=False)

    @property
    def family(self):
        return self.spec.family

    def to_dict(self):
        return {
            "response": self.spec.name,
            "family": self.spec.family.to_dict(),
            "link": self.spec.link,
            "fixedEffects": {k: float(v) for k, v in self.fixed_effects.items()},
            "dispersion": float(self.dispersion),
            "reVariance": float(self.re_variance),
            "rePredictions": {k: float(v) for k, v in self.re_predictions.items()},
            "logLikelihood": float(self.log_likelihood),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "pearsonDispersion": None if math.isnan(self.pearson_dispersion) else float(self.pearson_dispersion),
        }

    @classmethod
    def from_dict(cls, data):
        keys = {"response", "family", "link", "fixedEffects", "dispersion", "reVariance", "rePredictions",
                "logLikelihood", "converged", "iterations", "pearsonDispersion"}
        check_fields(data, keys, f"marginal {data.get('response')!r}", required=tuple(sorted(keys - {"pearsonDispersion", "iterations"})))
        spec = ResponseSpec(data["response"], family_from_dict(data["family"]), data["link"])
        pd = data.get("pearsonDispersion")
        return cls(
            spec,
            {str(k): float(v) for k, v in data["fixedEffects"].items()},
            float(data["dispersion"]),
            float(data["reVariance"]),
            {str(k): float(v) for k, v in data["rePredictions"].items()},
            float(data["logLikelihood"]),
            bool(data["converged"]),
            int(data.get("iterations", 0)),
            math.nan if pd is None else float(pd),
        )


class Design:
    """Non-missing observations of one response in canonical (group, time) order."""

    def __init__(self, table, spec):
        if len(table) == 0:
            raise InputError("empty observation table")
        y_all = table.column(spec.name)
        keep = np.flatnonzero(~np.isnan(y_all))
        if keep.size == 0:
            raise InputError(f"{spec.name}: no observed values")
        order = sorted(keep, key=lambda i: (natural_key(table.groups[i]), natural_key(table.times[i])))
        self.rows = np.asarray(order, dtype=int)
        self.y = y_all[self.rows]
        fam = spec.family
        bad = ~fam.in_support(self.y)
        if bad.any():
            i = self.rows[np.flatnonzero(bad)[0]]
            raise InputError(
                f"{spec.name}: value {y_all[i]!r} at ({table.groups[i]}, {table.times[i]}) outside {fam.name} support"
            )
        groups = [table.groups[i] for i in self.rows]
        times = [table.times[i] for i in self.rows]
        self.group_ids = sorted(set(groups), key=natural_key)
        self.levels = sorted(set(times), key=natural_key)
        if len(self.group_ids) < 2:
            raise InputError(f"{spec.name}: need at least 2 groups, got {len(self.group_ids)}")
        gpos = {g: k for k, g in enumerate(self.group_ids)}
        tpos = {t: k for k, t in enumerate(self.levels)}
        self.gidx = np.array([gpos[g] for g in groups])
        self.tidx = np.array([tpos[t] for t in times])
        self.n_groups = len(self.group_ids)
        self.n_levels = len(self.levels)
        if isinstance(fam, Gamma) and np.all(self.y == self.y[0]):
            raise InputError(f"{spec.name}: gamma response is constant")

    def group_sum(self, v):
        return np.bincount(self.gidx, weights=v, minlength=self.n_groups)

    def level_sum(self, v):
        return np.bincount(self.tidx, weights=v, minlength=self.n_levels)


class LaplaceObjective:
    """Negative Laplace log-likelihood and its gradient.

    Parameter vector: ``beta`` (one per level), then ``log phi`` unless the
    family has no dispersion or it is fixed, then ``log sigma2`` unless fixed.
    """

    def __init__(self, design, family, fix_dispersion=None, fix_re_variance=None):
        self.d = design
        self.family = family
        self.fix_phi = 1.0 if not family.has_dispersion else fix_dispersion
        self.fix_s2 = fix_re_variance
        self.u = np.zeros(design.n_groups)
        self._norm = {}

    @property
    def n_params(self):
        return self.d.n_levels + (self.fix_phi is None) + (self.fix_s2 is None)

    def pack(self, beta, phi, s2):
        theta = list(beta)
        if self.fix_phi is None:
            theta.append(math.log(phi))
        if self.fix_s2 is None:
            theta.append(math.log(s2))
        return np.array(theta, dtype=float)

    def unpack(self, theta):
        T = self.d.n_levels
        beta = np.asarray(theta[:T], dtype=float)
        k = T
        if self.fix_phi is None:
            phi = math.exp(theta[k])
            k += 1
        else:
            phi = float(self.fix_phi)
        s2 = math.exp(theta[k]) if self.fix_s2 is None else float(self.fix_s2)
        return beta, phi, s2

    def bounds(self):
        b = [(None, None)] * self.d.n_levels
        if self.fix_phi is None:
            b.append(LOG_DISPERSION_BOUNDS)
        if self.fix_s2 is None:
            b.append(LOG_RE_VARIANCE_BOUNDS)
        return b

    def normalizer(self, phi):
        hit = self._norm.get(phi)
        if hit is None:
            if len(self._norm) > 64:
                self._norm.clear()
            c, dc = self.family.normalizer(self.d.y, phi)
            hit = self._norm[phi] = (float(np.sum(c)), float(np.sum(dc)))
        return hit

    def modes(self, eta0, phi, s2):
        d, fam, y = self.d, self.family, self.d.y
        if s2 == 0.0:
            self.u = np.zeros(d.n_groups)
            return self.u

        def joint(u):
            return d.group_sum(fam.kernel(y, eta0 + u[d.gidx], phi)) - u * u / (2.0 * s2)

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # per group, start from the best of the warm start, zero and a
            # moment match of the group total; far-off warm starts (wild line
            # search trials) otherwise cost one Newton step per unit of u
            starts = np.vstack([self.u, np.zeros(d.n_groups), self._moment_start(eta0)])
            values = np.vstack([joint(s) for s in starts])
            values[~np.isfinite(values)] = -np.inf
            pick = np.argmax(values, axis=0)
            u = starts[pick, np.arange(d.n_groups)]
            h = values[pick, np.arange(d.n_groups)]
            for _ in range(INNER_MAX_ITER):
                d1, d2, _ = fam.eta_derivatives(y, eta0 + u[d.gidx], phi)
                step = (d.group_sum(d1) - u / s2) / (1.0 / s2 - d.group_sum(d2))
                if np.max(np.abs(step)) < INNER_TOL:
                    u = u + step
                    break
                t = np.ones_like(u)
                for _ in range(60):
                    cand = u + t * step
                    hc = joint(cand)
                    worse = ~(hc >= h - 1e-12 * np.abs(h))
                    if not worse.any():
                        break
                    t = np.where(worse, 0.5 * t, t)
                u, h = cand, hc
            else:
                k = int(np.argmax(np.abs(step)))
                if abs(step[k]) > 1e-6:
                    raise InnerNewtonError(
                        f"{self.family.name} inner Newton did not converge for group {d.group_ids[k]!r}",
                        group=d.group_ids[k],
                    )
        if not np.all(np.isfinite(u)):
            k = int(np.flatnonzero(~np.isfinite(u))[0])
            raise InnerNewtonError(f"inner Newton diverged for group {d.group_ids[k]!r}", group=d.group_ids[k])
        self.u = u
        return u

    def _moment_start(self, eta0):
        d, fam, y = self.d, self.family, self.d.y
        if isinstance(fam, Binomial):
            p = (d.group_sum(y) + 0.5) / (d.group_sum(np.full_like(y, fam.size)) + 1.0)
            return np.log(p / (1 - p)) - d.group_sum(eta0) / d.group_sum(np.ones_like(y))
        total = d.group_sum(y)
        base = d.group_sum(np.exp(eta0))
        u = np.log(np.maximum(total, 1e-300) / base)
        return np.clip(np.where(total > 0, u, 0.0), -50.0, 50.0)

    def evaluate(self, theta, gradient=True):
        d, fam, y = self.d, self.family, self.d.y
        beta, phi, s2 = self.unpack(theta)
        eta0 = beta[d.tidx]
        u = self.modes(eta0, phi, s2)
        eta = eta0 + u[d.gidx]
        with np.errstate(over="ignore", invalid="ignore"):
            kern = fam.kernel(y, eta, phi)
            d1, d2, d3 = fam.eta_derivatives(y, eta, phi)
        c_sum, dc_sum = self.normalizer(phi)
        W = -d.group_sum(d2)
        A = 1.0 + s2 * W
        J = float(np.sum(kern)) + c_sum - 0.5 * float(np.sum(np.log(A)))
        if s2 > 0:
            J -= float(np.sum(u * u)) / (2.0 * s2)
        if not gradient:
            return -J
        Wp = -d.group_sum(d3)
        dJdu = -0.5 * s2 * Wp / A
        ga = A[d.gidx]
        contrib = d1 + 0.5 * s2 * d3 / ga + dJdu[d.gidx] * d2 * s2 / ga
        grad = list(d.level_sum(contrib))
        if self.fix_phi is None:
            g_phi = -float(np.sum(kern)) + dc_sum + 0.5 * s2 * float(np.sum(W / A))
            g_phi += 0.5 * s2 * float(np.sum(Wp * u / A**2))
            grad.append(g_phi)
        if self.fix_s2 is None:
            g_s2 = float(np.sum(u * u)) / (2.0 * s2) - 0.5 * s2 * float(np.sum(W / A))
            g_s2 -= 0.5 * s2 * float(np.sum(Wp * u / A**2))
            grad.append(g_s2)
        grad = np.array(grad)
        if not (np.isfinite(J) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite Laplace objective")
        return -J, -grad


def _initial_values(design, family):
    y = design.y
    counts = np.bincount(design.tidx, minlength=design.n_levels)
    means = design.level_sum(y) / counts
    if isinstance(family, Binomial):
        n = family.size
        means = (design.level_sum(y) + 0.5) / (counts * n + 1.0) * n
    else:
        floor = max(np.mean(y[y > 0]) if np.any(y > 0) else 1.0, 1e-8) * 0.1
        means = np.maximum(means, floor)
    beta = family.eta_from_mean(means)
    phi = 1.0
    if family.has_dispersion:
        mu = means[design.tidx]
        resid = (y - mu) ** 2 / family.variance(mu)
        dof = y.size - design.n_levels
        if dof > 0 and np.sum(resid) > 0:
            phi = float(np.sum(resid) / dof)
    return beta, phi


def fit(table, spec, *, fix_re_variance=None, fix_dispersion=None, max_iter=OUTER_MAX_ITER,
        param_tol=PARAM_TOL, objective_tol=OBJECTIVE_TOL):
    """Fit the GLMM for ``spec.name`` in ``table`` by Laplace approximation.

    ``fix_re_variance`` / ``fix_dispersion`` pin those parameters instead of
    estimating them.  A fit that exhausts ``max_iter`` outer iterations is
    returned with ``converged=False`` at its best iterate.
    """
    design = Design(table, spec)
    family = spec.family
    if fix_re_variance is not None and fix_re_variance < 0:
        raise InputError("fixed random-effect variance must be non-negative")
    obj = LaplaceObjective(design, family, fix_dispersion, fix_re_variance)
    beta0, phi0 = _initial_values(design, family)
    if fix_dispersion is not None:
        phi0 = fix_dispersion
    theta0 = obj.pack(beta0, phi0, INITIAL_RE_VARIANCE)
    lo = [b[0] if b[0] is not None else -np.inf for b in obj.bounds()]
    hi = [b[1] if b[1] is not None else np.inf for b in obj.bounds()]
    theta0 = np.clip(theta0, lo, hi)

    f0 = obj.evaluate(theta0, gradient=False)
    trace = [f0]
    state = {"x": theta0, "f": f0, "done": False, "iters": 0}

    def callback(intermediate_result):
        x, f = intermediate_result.x, float(intermediate_result.fun)
        state["iters"] += 1
        trace.append(f)
        small_step = np.max(np.abs(x - state["x"])) < param_tol
        small_change = abs(f - state["f"]) < objective_tol
        state["x"], state["f"] = x.copy(), f
        if small_step and small_change:
            state["done"] = True
            raise StopIteration

    if obj.n_params:
        res = minimize(
            obj.evaluate, theta0, jac=True, method="L-BFGS-B", bounds=obj.bounds(), callback=callback,
            options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-9, "maxcor": 20},
        )
        theta = res.x
        converged = state["done"] or bool(res.success)
        if not converged and state["iters"] < max_iter:
            converged = _stationary(obj, theta)
    else:
        theta, converged = theta0, True
    if state["iters"] >= max_iter and not state["done"]:
        converged = False

    negll = obj.evaluate(theta, gradient=False)
    beta, phi, s2 = obj.unpack(theta)
    u = obj.u.copy()
    mu = family.mean_from_eta(beta[design.tidx] + u[design.gidx])
    dof = design.y.size - design.n_levels
    pearson = math.nan
    if dof > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            v = mu * (1.0 - mu / family.size) if isinstance(family, Binomial) else mu ** _power(family)
            pearson = float(np.sum((design.y - mu) ** 2 / v) / dof)
    return FittedGLMM(
        spec=spec,
        fixed_effects={t: float(b) for t, b in zip(design.levels, beta)},
        dispersion=float(phi),
        re_variance=float(s2),
        re_predictions={g: float(x) for g, x in zip(design.group_ids, u)},
        log_likelihood=-float(negll),
        converged=bool(converged),
        iterations=state["iters"],
        pearson_dispersion=pearson,
        objective_trace=trace,
    )


def _stationary(obj, theta):
    f, g = obj.evaluate(theta)
    for k, (lo, hi) in enumerate(obj.bounds()):
        if lo is not None and theta[k] <= lo and g[k] > 0:
            g[k] = 0.0
        if hi is not None and theta[k] >= hi and g[k] < 0:
            g[k] = 0.0
    return bool(np.max(np.abs(g)) < PROJECTED_GRADIENT_TOL * max(1.0, abs(f)))


def _power(family):
    return 2.0 if isinstance(family, Gamma) else family.power_index


def predict_random_effects(fit):
    """Empirical-Bayes modes of the random intercepts, in group order."""
    if not fit.converged:
        raise StateError(f"{fit.spec.name}: fit did not converge")
    return dict(fit.re_predictions)


def linear_predictor(fit, table):
    eta = np.empty(len(table))
    for i, (g, t) in enumerate(zip(table.groups, table.times)):
        try:
            eta[i] = fit.fixed_effects[t] + fit.re_predictions[g]
        except KeyError as exc:
            raise InputError(f"{fit.spec.name}: unknown group or time level {exc.args[0]!r}") from None
    return eta


def fitted_means(fit, table):
    """Conditional means ``inverse_link(beta_t + u_g)`` for every table row."""
    return fit.spec.family.mean_from_eta(linear_predictor(fit, table))
