"""Study-shaped fixture shipped with the package.

Ten groups, weeks 6, 12 and 18, fourteen Gamma VOC responses, a binomial
infection count out of 9 and a compound-Poisson lesion area, simulated from
the Figure 1 topology.  Run ``python -m mglmmnet.fixtures`` to regenerate.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .data_io import dumps_json, write_outputs
from .graphs import FIGURE1_TARGETS
from .simulate import figure1_spec, simulate_dataset

FIXTURE_SEED = 20200601
DATA_FILE = "figure1_data.csv"
CONFIG_FILE = "figure1_config.json"
SPEC_FILE = "figure1_spec.json"
TRUTH_FILE = "figure1_truth.json"
FIXTURE_GRID = [round(1.1 + 0.1 * k, 1) for k in range(9)]


def fixture_path(name):
    return Path(str(resources.files("mglmmnet") / "data" / name))


def fixture_config(spec):
    return {
        "formatVersion": 1,
        "responses": [r.to_dict() for r in spec.responses],
        "powerGrid": FIXTURE_GRID,
        "modelClass": "decomposable",
        "seed": FIXTURE_SEED,
        "workers": 1,
        "targets": list(FIGURE1_TARGETS),
    }


def regenerate(directory=None):
    directory = Path(directory) if directory is not None else fixture_path("")
    spec = figure1_spec(groups=10)
    table, truth = simulate_dataset(spec, FIXTURE_SEED)
    write_outputs(table, directory / DATA_FILE)
    (directory / SPEC_FILE).write_text(dumps_json(spec.to_dict()), encoding="utf-8")
    (directory / TRUTH_FILE).write_text(dumps_json(truth), encoding="utf-8")
    (directory / CONFIG_FILE).write_text(dumps_json(fixture_config(spec)), encoding="utf-8")
    return directory


if __name__ == "__main__":
    print(regenerate())
