"""Choice of the compound-Poisson power index by matching zero counts.

For each candidate ``p`` the GLMM is refitted; each observation's
probability of being zero is evaluated at its conditional fitted mean and
the fitted dispersion, and those probabilities are summed within each time
level.  The chosen ``p`` minimises the Euclidean distance between expected
and observed zero counts per level.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_io import FORMAT_VERSION, check_fields
from .errors import InputError, MglmmError, NumericalError
from .families import CompoundPoisson
from .glmm import Design, fit, fitted_means

DEFAULT_GRID = tuple(round(1.05 + 0.05 * k, 2) for k in range(19))
TIE_ATOL = 1e-12


@dataclass
class PowerGridResult:
    response: str
    grid: list
    distances: list
    chosen: float
    observed_zeros: dict
    expected_zeros: list
    tie: bool = False
    failures: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "formatVersion": FORMAT_VERSION,
            "response": self.response,
            "grid": [float(p) for p in self.grid],
            "distances": [None if d is None else float(d) for d in self.distances],
            "chosen": float(self.chosen),
            "tie": bool(self.tie),
            "observedZeros": {k: int(v) for k, v in self.observed_zeros.items()},
            "expectedZeros": [None if e is None else {k: float(v) for k, v in e.items()} for e in self.expected_zeros],
            "failures": {str(k): v for k, v in self.failures.items()},
        }

    @classmethod
    def from_dict(cls, data):
        keys = {"formatVersion", "response", "grid", "distances", "chosen", "tie", "observedZeros", "expectedZeros", "failures"}
        check_fields(data, keys, "power grid result", required=("response", "grid", "distances", "chosen"))
        return cls(
            data["response"], [float(p) for p in data["grid"]],
            [None if d is None else float(d) for d in data["distances"]],
            float(data["chosen"]), dict(data.get("observedZeros", {})), list(data.get("expectedZeros", [])),
            bool(data.get("tie", False)), dict(data.get("failures", {})),
        )


def _grid_point(args):
    table, spec, p, levels, options = args
    try:
        result = fit(table, spec.with_family(CompoundPoisson(p)), **options)
    except MglmmError as exc:
        return p, None, None, f"{type(exc).__name__}: {exc}"
    design = Design(table, result.spec)
    sub = table.take(design.rows)
    mu = fitted_means(result, sub)
    p0 = result.spec.family.zero_probability(mu, result.dispersion)
    times = np.array(sub.times)
    expected = {t: float(np.sum(p0[times == t])) for t in levels}
    return p, result, expected, None


def select_power_index(table, spec, grid=DEFAULT_GRID, workers=1, fit_options=None):
    """Grid search for the power index of a compound-Poisson response.

    A grid point whose fit fails gets a ``None`` distance and an entry in
    ``failures``; ties in the minimal distance go to the smaller index.
    """
    if not isinstance(spec.family, CompoundPoisson):
        raise InputError(f"{spec.name}: power-index selection needs a compound-Poisson response")
    grid = [float(p) for p in grid]
    if not grid:
        raise InputError(f"{spec.name}: power grid required")
    if any(not 1.0 < p < 2.0 for p in grid):
        raise InputError("power grid values must lie strictly inside (1, 2)")
    if len(set(grid)) != len(grid):
        raise InputError("power grid values must be distinct")
    grid = sorted(grid)
    design = Design(table, spec)
    y = design.y
    levels = design.levels
    observed = {t: int(np.sum((y == 0) & (design.tidx == k))) for k, t in enumerate(levels)}
    obs_vec = np.array([observed[t] for t in levels], dtype=float)

    jobs = [(table, spec, p, levels, dict(fit_options or {})) for p in grid]
    if workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_grid_point, jobs))
    else:
        outcomes = [_grid_point(j) for j in jobs]

    distances, expected, failures, fits = [], [], {}, {}
    for p, result, exp, err in outcomes:
        if err is not None:
            distances.append(None)
            expected.append(None)
            failures[p] = err
            continue
        fits[p] = result
        expected.append(exp)
        distances.append(float(np.linalg.norm(np.array([exp[t] for t in levels]) - obs_vec)))
    valid = [d for d in distances if d is not None]
    if not valid:
        raise NumericalError(f"{spec.name}: every power-index fit failed: {failures}")
    best = min(valid)
    winners = [p for p, d in zip(grid, distances) if d is not None and abs(d - best) <= TIE_ATOL]
    return PowerGridResult(
        response=spec.name,
        grid=grid,
        distances=distances,
        chosen=winners[0],
        observed_zeros=observed,
        expected_zeros=expected,
        tie=len(winners) > 1,
        failures=failures,
        fits=fits,
    )
