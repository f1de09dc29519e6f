"""Multivariate pipeline: marginal fits and the matrix of predicted random components.

Responses are coupled only through the covariance of their random
intercepts, which is estimated downstream from the predictions; the marginal
fits are therefore independent and run in a process pool when requested.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_io import FORMAT_VERSION, check_fields, check_version
from .errors import InputError, MglmmError
from .families import CompoundPoisson
from .glmm import FittedGLMM, fit
from .tweedie_index import PowerGridResult, select_power_index


class MarginalFitError(MglmmError):
    """A marginal fit failed; ``partial`` holds the fits that succeeded."""

    def __init__(self, response, cause, partial):
        super().__init__(f"{response}: {cause}")
        self.response = response
        self.cause = cause
        self.partial = partial


@dataclass
class RandomEffectsMatrix:
    group_ids: list
    response_names: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.group_ids), len(self.response_names)):
            raise InputError("random-effects matrix shape does not match its labels")
        if not np.all(np.isfinite(self.values)):
            raise InputError("random-effects matrix has non-finite entries")

    @property
    def empirical_covariance(self):
        if len(self.group_ids) < 2:
            raise InputError("need at least 2 groups for a covariance")
        return np.atleast_2d(np.cov(self.values, rowvar=False, ddof=1))

    def standardized(self):
        sd = self.values.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise InputError("cannot standardise a constant column")
        return RandomEffectsMatrix(list(self.group_ids), list(self.response_names), self.values / sd)

    def select(self, names):
        idx = [self.response_names.index(n) for n in names]
        return RandomEffectsMatrix(list(self.group_ids), list(names), self.values[:, idx])

    def to_dict(self):
        return {
            "groupIds": list(self.group_ids),
            "responseNames": list(self.response_names),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        check_fields(data, {"groupIds", "responseNames", "values"}, "reMatrix", required=("groupIds", "responseNames", "values"))
        values = np.array(data["values"], dtype=float).reshape(len(data["groupIds"]), len(data["responseNames"]))
        return cls(list(data["groupIds"]), list(data["responseNames"]), values)


@dataclass
class MglmmFit:
    marginals: dict
    re_matrix: RandomEffectsMatrix
    power_index: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "formatVersion": FORMAT_VERSION,
            "kind": "MglmmFit",
            "marginals": [m.to_dict() for m in self.marginals.values()],
            "reMatrix": self.re_matrix.to_dict(),
            "empiricalCovariance": self.re_matrix.empirical_covariance.tolist(),
            "powerIndex": [r.to_dict() for r in self.power_index.values()],
        }

    @classmethod
    def from_dict(cls, data):
        check_fields(data, {"formatVersion", "kind", "marginals", "reMatrix", "empiricalCovariance", "powerIndex"},
                     "fit", required=("formatVersion", "marginals", "reMatrix"))
        check_version(data, "fit")
        marginals = {}
        for m in data["marginals"]:
            f = FittedGLMM.from_dict(m)
            marginals[f.spec.name] = f
        power = {}
        for r in data.get("powerIndex", []):
            res = PowerGridResult.from_dict(r)
            power[res.response] = res
        re = RandomEffectsMatrix.from_dict(data["reMatrix"])
        if list(marginals) != re.response_names:
            raise InputError("fit: marginals and reMatrix responses disagree")
        return cls(marginals, re, power)


def _fit_one(args):
    table, spec, options = args
    try:
        return spec.name, fit(table, spec, **options), None
    except MglmmError as exc:
        return spec.name, None, exc


def _run(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def fit_all(table, specs, power_grid=None, workers=1, fit_options=None):
    """Fit every marginal GLMM and assemble the random-effects matrix.

    For compound-Poisson responses the power index is chosen on
    ``power_grid`` when one is given; otherwise the index in the response spec is used.
    """
    specs = list(specs)
    if not specs:
        raise InputError("no responses given")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise InputError("duplicate response names")
    for s in specs:
        table.column(s.name)
    if workers < 1:
        raise InputError("workers must be >= 1")

    power = {}
    fits = {}
    final_specs = []
    for s in specs:
        if isinstance(s.family, CompoundPoisson) and power_grid is not None:
            try:
                res = select_power_index(table, s, power_grid, workers=workers, fit_options=fit_options)
            except MglmmError as exc:
                raise MarginalFitError(s.name, exc, dict(fits)) from exc
            power[s.name] = res
            fits[s.name] = res.fits[res.chosen]
            s = s.with_family(CompoundPoisson(res.chosen))
        final_specs.append(s)

    todo = [(table, s, dict(fit_options or {})) for s in final_specs if s.name not in fits]
    for name, result, err in _run(_fit_one, todo, workers):
        if err is not None:
            raise MarginalFitError(name, err, dict(fits)) from err
        fits[name] = result

    marginals = {n: fits[n] for n in names}
    group_ids = list(next(iter(marginals.values())).re_predictions)
    for n, m in marginals.items():
        if list(m.re_predictions) != group_ids:
            raise InputError(f"{n}: observed groups differ from {names[0]}")
    values = np.array([[marginals[n].re_predictions[g] for n in names] for g in group_ids])
    return MglmmFit(marginals, RandomEffectsMatrix(group_ids, names, values), power)
