"""Command-line interface: ``mglmmnet <command> [options]``.

Commands read and write the formats of :mod:`mglmmnet.data_io`.  Every flag
can also be supplied through an environment variable named ``MGLMMNET_``
followed by the flag in upper case with dashes turned into underscores
(``--out-dir`` becomes ``MGLMMNET_OUT_DIR``).  A flag on the command line
beats the environment, which beats the config file.

Exit status: 0 on success, 2 for input or configuration errors, 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .data_io import (
    FORMAT_VERSION,
    check_fields,
    check_version,
    ensure_dir,
    load_json,
    parse_dot,
    read_table,
    write_outputs,
)
from .diagnostics import pit_uniformity
from .errors import InputError, NumericalError, StateError
from .families import CompoundPoisson
from .glmm import ResponseSpec
from .graphs import (
    MODEL_CLASSES,
    GraphSearchResult,
    LabeledGraph,
    induced_separation_statement,
    is_separator,
    minimal_markov_blanket,
    search_min_bic,
    vertex_classes,
)
from .mglmm import MarginalFitError, MglmmFit, fit_all
from .simulate import MglmmSpec, child_rng, simulate_dataset
from .tweedie_index import DEFAULT_GRID, select_power_index

ENV_PREFIX = "MGLMMNET_"
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3

# config key -> keyword of glmm.fit
_TOLERANCE_KEYS = {"maxIter": "max_iter", "paramTol": "param_tol", "objectiveTol": "objective_tol"}

# stream key reserved for diagnostics; simulate uses keys 0 and 1
_DIAGNOSE_STREAM = 2


@dataclass
class RunConfig:
    responses: list = field(default_factory=list)
    power_grid: list | None = None
    model_class: str = "decomposable"
    seed: int | None = None
    workers: int = 1
    standardize: bool = False
    targets: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    _KEYS = ("formatVersion", "responses", "binomialSize", "powerGrid", "modelClass", "seed", "workers",
             "standardize", "targets", "tolerances")

    @classmethod
    def from_dict(cls, data):
        check_fields(data, set(cls._KEYS), "config")
        check_version(data, "config")
        size = data.get("binomialSize")
        responses = [ResponseSpec.from_dict(r, default_size=size) for r in data.get("responses", [])]
        tol = dict(data.get("tolerances", {}))
        check_fields(tol, set(_TOLERANCE_KEYS), "config tolerances")
        grid = data.get("powerGrid")
        return cls(
            responses=responses,
            power_grid=None if grid is None else [float(p) for p in grid],
            model_class=data.get("modelClass", "decomposable"),
            seed=data.get("seed"),
            workers=data.get("workers", 1),
            standardize=bool(data.get("standardize", False)),
            targets=list(data.get("targets", [])),
            tolerances={_TOLERANCE_KEYS[k]: v for k, v in tol.items()},
        )

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        return cls.from_dict(load_json(path))


def _env(name):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))


def _option(args, name, config_value=None, default=None):
    value = getattr(args, name.replace("-", "_"), None)
    if value is None:
        value = _env(name)
    if value is None:
        value = config_value
    return default if value is None else value


def _parse_labels(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return list(text)
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _parse_grid(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(p) for p in text]
    text = str(text).strip()
    if not text:
        return []
    m = re.fullmatch(r"([^:]+):([^:]+):([^:]+)", text)
    try:
        if m:
            lo, hi, step = (float(x) for x in m.groups())
            if step <= 0:
                raise InputError("grid step must be positive")
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return [round(lo + k * step, 10) for k in range(max(n, 0))]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise InputError(f"cannot parse power grid {text!r}") from None


def _int_option(value, what, minimum):
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise InputError(f"{what} must be an integer, got {value!r}") from None
    if isinstance(value, float) and value != out or out < minimum:
        raise InputError(f"{what} must be an integer >= {minimum}, got {value!r}")
    return out


def _workers(args, config):
    return _int_option(_option(args, "workers", config.workers, 1), "workers", 1)


def _seed(args, config, command):
    value = _option(args, "seed", config.seed)
    if value is None:
        raise InputError(f"{command}: a seed is required (--seed, {ENV_PREFIX}SEED or config 'seed')")
    return _int_option(value, "seed", 0)


def _out_dir(args):
    return ensure_dir(_option(args, "out-dir", None, "."))


def _require(args, name):
    value = _option(args, name)
    if value is None:
        raise InputError(f"--{name} is required")
    return value


def _report(message):
    print(message, file=sys.stderr)


def _load_fit(path):
    data = load_json(path)
    if data.get("kind") not in (None, "MglmmFit"):
        raise InputError(f"{path}: expected an MglmmFit, got {data.get('kind')!r}")
    return MglmmFit.from_dict(data)


def _load_graph(path):
    path = Path(path)
    if path.suffix.lower() == ".dot":
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror}") from exc
        vertices, edges, _ = parse_dot(text)
        return LabeledGraph(vertices, edges)
    data = load_json(path)
    if "graph" in data:
        return GraphSearchResult.from_dict(data).graph
    return LabeledGraph.from_dict(data)


def _grid_for(args, config):
    grid = _parse_grid(_option(args, "grid", config.power_grid))
    cp = [s.name for s in config.responses if isinstance(s.family, CompoundPoisson)]
    if grid is None:
        grid = list(DEFAULT_GRID)
    if cp and not grid:
        raise InputError(f"power grid required for compound-Poisson response(s) {cp}")
    return grid, cp


def _read_input(args, responses):
    return read_table(_require(args, "input"), schema=[(s.name, s.family) for s in responses])


def cmd_fit(args):
    config = RunConfig.load(_option(args, "config"))
    if not config.responses:
        raise InputError("config lists no responses")
    grid, _ = _grid_for(args, config)
    table = _read_input(args, config.responses)
    result = fit_all(table, config.responses, power_grid=grid, workers=_workers(args, config),
                     fit_options=config.tolerances)
    for name, m in result.marginals.items():
        if not m.converged:
            _report(f"warning: {name}: outer optimiser hit its iteration cap")
    path = write_outputs(result, _out_dir(args) / "fit.json")
    print(f"fitted {len(result.marginals)} responses on {len(result.re_matrix.group_ids)} groups -> {path}")
    return EXIT_OK


def cmd_power_index(args):
    config = RunConfig.load(_option(args, "config"))
    grid, cp = _grid_for(args, config)
    if not cp:
        raise InputError("config lists no compound-Poisson response")
    specs = [s for s in config.responses if s.name in cp]
    table = _read_input(args, specs)
    workers = _workers(args, config)
    results = [select_power_index(table, s, grid, workers=workers, fit_options=config.tolerances) for s in specs]
    payload = {"formatVersion": FORMAT_VERSION, "kind": "PowerIndexSelection",
               "results": [r.to_dict() for r in results]}
    path = _out_dir(args) / "power_index.json"
    write_outputs(_Payload(payload), path)
    for r in results:
        print(f"{r.response}: chosen power index {r.chosen}" + (" (tie)" if r.tie else ""))
    return EXIT_OK


class _Payload:
    def __init__(self, data):
        self._data = data

    def to_dict(self):
        return self._data


def cmd_graph(args):
    config = RunConfig.load(_option(args, "config"))
    fit = _load_fit(_require(args, "input"))
    matrix = fit.re_matrix
    if len(matrix.response_names) < 3:
        raise InputError(f"need ≥3 responses for a graph search, fit has {len(matrix.response_names)}")
    model_class = _option(args, "model-class", config.model_class)
    if model_class not in MODEL_CLASSES:
        raise InputError(f"model class must be one of {MODEL_CLASSES}, got {model_class!r}")
    if config.standardize or args.standardize:
        matrix = matrix.standardized()
    result = search_min_bic(matrix, model_class)
    targets = _parse_labels(_option(args, "targets", config.targets)) or []
    result.graph.check_labels(targets, "target")
    out = _out_dir(args)
    write_outputs(result, out / "graph.json")
    write_outputs(result, out / "graph.dot", classes=vertex_classes(result.graph, targets))
    print(f"{model_class} graph: {result.graph.n_edges()} edges, BIC {result.bic:.6f} -> {out / 'graph.dot'}")
    if targets:
        blanket = sorted(minimal_markov_blanket(result.graph, targets), key=result.graph.index)
        print(f"blanket of {{{', '.join(targets)}}}: {{{', '.join(blanket)}}}")
    return EXIT_OK


def cmd_separate(args):
    graph = _load_graph(_require(args, "input"))
    targets = _parse_labels(_require(args, "targets"))
    if not targets:
        raise InputError("--targets must name at least one vertex")
    graph.check_labels(targets, "target")
    given = _parse_labels(_option(args, "given"))
    if given is None:
        given = sorted(minimal_markov_blanket(graph, targets), key=graph.index)
    graph.check_labels(given, "given vertex")
    overlap = set(targets) & set(given)
    if overlap:
        raise InputError(f"targets and given overlap: {sorted(overlap)}")
    rest = [v for v in graph.vertices if v not in targets and v not in given]
    separated = True if not rest else is_separator(graph, targets, rest, given)
    statement = induced_separation_statement(graph, targets, given)
    print(f"separated: {'true' if separated else 'false'}")
    print(statement)
    out = _option(args, "out-dir")
    if out is not None:
        payload = {"formatVersion": FORMAT_VERSION, "kind": "SeparationReport", "targets": targets,
                   "given": list(given), "others": rest, "separated": separated, "statement": statement}
        write_outputs(_Payload(payload), ensure_dir(out) / "separation.json")
    return EXIT_OK


def cmd_simulate(args):
    spec = MglmmSpec.from_dict(load_json(_require(args, "config")))
    seed = _seed(args, RunConfig(), "simulate")
    table, truth = simulate_dataset(spec, seed)
    out = _out_dir(args)
    write_outputs(table, out / "data.csv")
    write_outputs(_Payload(truth), out / "truth.json")
    print(f"simulated {len(table)} rows x {len(table.response_names)} responses -> {out / 'data.csv'}")
    return EXIT_OK


def _slug(name):
    return re.sub(r"[^A-Za-z0-9]+", "-", name).strip("-").lower() or "response"


def cmd_diagnose(args):
    config = RunConfig.load(_option(args, "config"))
    seed = _seed(args, config, "diagnose")
    fit = _load_fit(_require(args, "fit"))
    specs = [m.spec for m in fit.marginals.values()]
    table = _read_input(args, specs)
    out = _out_dir(args)
    summaries, used = [], set()
    for r, (name, marginal) in enumerate(fit.marginals.items()):
        report = pit_uniformity(marginal, table, child_rng(seed, _DIAGNOSE_STREAM, r))
        stem = _slug(name)
        if stem in used:
            stem = f"{stem}-{r}"
        used.add(stem)
        write_outputs(report, out / f"residuals-{stem}.csv")
        summaries.append({**report.to_dict(), "file": f"residuals-{stem}.csv"})
        print(f"{name}: KS D={report.ks_statistic:.4f} p={report.ks_pvalue:.4f}")
    payload = {"formatVersion": FORMAT_VERSION, "kind": "DiagnosticsSummary", "seed": seed, "reports": summaries}
    write_outputs(_Payload(payload), out / "diagnostics.json")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mglmmnet", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("fit", cmd_fit, "fit every marginal GLMM and write fit.json")
    p.add_argument("--input", help="long-format observation CSV")
    p.add_argument("--config", help="run config JSON (responses, powerGrid, ...)")
    p.add_argument("--out-dir")
    p.add_argument("--grid", help="power grid: comma list or start:stop:step")
    p.add_argument("--workers", type=int)

    p = add("power-index", cmd_power_index, "select compound-Poisson power indices")
    p.add_argument("--input")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--grid")
    p.add_argument("--workers", type=int)

    p = add("graph", cmd_graph, "BIC graph search over predicted random components")
    p.add_argument("--input", help="fit.json from the fit command")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--model-class", choices=MODEL_CLASSES)
    p.add_argument("--targets", help="comma-separated target vertices for DOT classes")
    p.add_argument("--standardize", action="store_true", help="scale predictions to unit variance first")

    p = add("separate", cmd_separate, "separation query on a graph")
    p.add_argument("--input", help="graph as .dot or .json")
    p.add_argument("--targets", help="comma-separated target vertices")
    p.add_argument("--given", help="comma-separated separating set; default is the Markov blanket")
    p.add_argument("--out-dir")

    p = add("simulate", cmd_simulate, "simulate a dataset from a model spec JSON")
    p.add_argument("--config", help="model spec JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")

    p = add("diagnose", cmd_diagnose, "Pearson residuals and PIT uniformity for each marginal fit")
    p.add_argument("--fit", help="fit.json from the fit command")
    p.add_argument("--input", help="observation CSV the fit was made on")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    return parser


def _exit_code(exc):
    if isinstance(exc, MarginalFitError):
        return _exit_code(exc.cause)
    if isinstance(exc, (NumericalError, StateError)):
        return EXIT_NUMERICAL
    return EXIT_INPUT


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, NumericalError, StateError, MarginalFitError) as exc:
        print(f"mglmmnet {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"mglmmnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
