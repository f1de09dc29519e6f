"""Small builders shared by the unit tests."""
import numpy as np

from mglmmnet.data_io import ObservationTable
from mglmmnet.glmm import ResponseSpec
from mglmmnet.simulate import MglmmSpec, simulate_dataset

LEVELS = ["6", "12", "18"]


def one_response_spec(family, fixed, dispersion, re_variance, groups, levels=LEVELS, name="y"):
    return MglmmSpec([ResponseSpec(name, family)], {name: dict(zip(levels, fixed))}, {name: dispersion},
                     np.array([[re_variance]]), groups, list(levels))


def simulate_one(family, fixed, dispersion, re_variance, groups, seed, levels=LEVELS):
    spec = one_response_spec(family, fixed, dispersion, re_variance, groups, levels)
    return simulate_dataset(spec, seed)


def table_from_matrix(y, levels=LEVELS, name="y"):
    """Table from a groups x levels array; group ids are 1..G."""
    y = np.asarray(y, dtype=float)
    groups = [str(g + 1) for g in range(y.shape[0]) for _ in levels]
    times = [t for _ in range(y.shape[0]) for t in levels]
    return ObservationTable(groups, times, {name: y.reshape(-1)}, [name])
