"""On-disk formats: long-format observation CSV, versioned JSON, Graphviz DOT."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

FORMAT_VERSION = 1
GROUP_COLUMN = "glass"
TIME_COLUMN = "week"
MISSING_TOKENS = ("", "NA")


def natural_key(label):
    """Sort key putting numeric labels first, in numeric order."""
    try:
        return (0, float(label), str(label))
    except ValueError:
        return (1, 0.0, str(label))


@dataclass
class ObservationTable:
    """Long-format observations: one row per (group, time level).

    ``values[name]`` is a float array aligned with ``groups``/``times``;
    missing cells are NaN.
    """

    groups: list
    times: list
    values: dict
    response_names: list = field(default=None)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.groups = [str(g) for g in self.groups]
        self.times = [str(t) for t in self.times]
        if self.response_names is None:
            self.response_names = list(self.values)
        self.response_names = list(self.response_names)
        if set(self.response_names) != set(self.values):
            raise InputError("response_names must match the value columns")
        n = len(self.groups)
        if len(self.times) != n:
            raise InputError("groups and times must have the same length")
        for name in self.response_names:
            col = np.asarray(self.values[name], dtype=float)
            if col.shape != (n,):
                raise InputError(f"column {name!r} has {col.size} values, expected {n}")
            if np.any(np.isinf(col)):
                raise InputError(f"column {name!r} contains non-finite values")
            self.values[name] = col
        seen = set()
        for g, t in zip(self.groups, self.times):
            if (g, t) in seen:
                raise InputError(f"duplicate ({GROUP_COLUMN}, {TIME_COLUMN}) pair ({g}, {t})")
            seen.add((g, t))

    def __len__(self):
        return len(self.groups)

    @property
    def group_ids(self):
        return sorted(set(self.groups), key=natural_key)

    @property
    def time_levels(self):
        return sorted(set(self.times), key=natural_key)

    def column(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise InputError(f"unknown response {name!r}") from None

    def rows(self):
        for i, (g, t) in enumerate(zip(self.groups, self.times)):
            yield g, t, {name: self.values[name][i] for name in self.response_names}

    def select(self, names):
        return ObservationTable(
            list(self.groups), list(self.times), {n: self.column(n).copy() for n in names}, list(names)
        )

    def take(self, index):
        index = np.asarray(index, dtype=int)
        return ObservationTable(
            [self.groups[i] for i in index],
            [self.times[i] for i in index],
            {n: self.values[n][index] for n in self.response_names},
            list(self.response_names),
        )


def _format_float(x):
    if math.isnan(x):
        return ""
    return repr(float(x))


def table_to_csv(table):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([GROUP_COLUMN, TIME_COLUMN, *table.response_names])
    for i in range(len(table)):
        writer.writerow(
            [table.groups[i], table.times[i], *(_format_float(table.values[n][i]) for n in table.response_names)]
        )
    return buf.getvalue()


def write_table(table, path):
    _write_text(path, table_to_csv(table))


def read_table(path, schema=None, strict=True):
    """Read a long-format CSV with columns ``glass``, ``week`` and responses.

    ``schema`` is an optional list of ``(response name, family)`` pairs; when
    given, only those columns are kept and values are checked against each
    family's support.  Support violations raise with ``strict=True`` and are
    collected in ``table.warnings`` otherwise.  Non-numeric cells always raise.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or not any(h.strip() for h in header):
        raise InputError(f"{path}: missing header")
    header = [h.strip() for h in header]
    for required in (GROUP_COLUMN, TIME_COLUMN):
        if required not in header:
            raise InputError(f"{path}: missing required column {required!r}")
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    gi, ti = header.index(GROUP_COLUMN), header.index(TIME_COLUMN)
    names = [h for h in header if h not in (GROUP_COLUMN, TIME_COLUMN)]
    families = {}
    if schema is not None:
        for name, family in schema:
            if name not in header:
                raise InputError(f"{path}: missing required column {name!r}")
            families[name] = family
        names = [name for name, _ in schema]

    groups, times, warnings = [], [], []
    cols = {n: [] for n in names}
    seen = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        g, t = row[gi].strip(), row[ti].strip()
        if (g, t) in seen:
            raise InputError(f"{path}:{lineno}: duplicate ({GROUP_COLUMN}, {TIME_COLUMN}) = ({g}, {t}), first at line {seen[(g, t)]}")
        seen[(g, t)] = lineno
        groups.append(g)
        times.append(t)
        for n in names:
            cell = row[header.index(n)].strip()
            if cell in MISSING_TOKENS:
                cols[n].append(math.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}:{lineno}: column {n!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}:{lineno}: column {n!r}: non-finite value {cell!r}")
            if n in families and not families[n].in_support(v):
                msg = f"{path}:{lineno}: column {n!r}: value {cell} outside {families[n].name} support"
                if strict:
                    raise InputError(msg)
                warnings.append(msg)
            cols[n].append(v)
    table = ObservationTable(groups, times, {n: np.array(cols[n], dtype=float) for n in names}, names)
    table.warnings.extend(warnings)
    return table


def _write_text(path, text):
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputError(f"{path}: cannot write ({exc.strerror})") from exc


def dumps_json(payload):
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def check_fields(data, allowed, where, required=()):
    """Strict schema check: reject unknown keys, require the listed ones."""
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise InputError(f"{where}: unknown field(s) {unknown}")
    missing = [k for k in required if k not in data]
    if missing:
        raise InputError(f"{where}: missing field(s) {missing}")


def check_version(data, where):
    if data.get("formatVersion") != FORMAT_VERSION:
        raise InputError(f"{where}: unsupported formatVersion {data.get('formatVersion')!r}")


# DOT


def _dot_id(label):
    return '"' + str(label).replace("\\", "\\\\").replace('"', '\\"') + '"'


_FILL = {"target": "black", "blanket": "grey", "peripheral": "white"}


def graph_to_dot(graph, classes=None, name="G"):
    lines = [f"graph {name} {{"]
    for v in graph.vertices:
        if classes is not None:
            cls = classes.get(v, "peripheral")
            lines.append(f'  {_dot_id(v)} [class="{cls}", style=filled, fillcolor={_FILL.get(cls, "white")}];')
        else:
            lines.append(f"  {_dot_id(v)};")
    for a, b in graph.sorted_edges():
        lines.append(f"  {_dot_id(a)} -- {_dot_id(b)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


_DOT_ID = r'"((?:[^"\\]|\\.)*)"|([A-Za-z_][A-Za-z0-9_.]*)'
_EDGE_RE = re.compile(rf"^\s*(?:{_DOT_ID})\s*--\s*(?:{_DOT_ID})\s*(?:\[.*\])?\s*;?\s*$")
_NODE_RE = re.compile(rf"^\s*(?:{_DOT_ID})\s*(\[.*\])?\s*;?\s*$")
_CLASS_RE = re.compile(r'class\s*=\s*"?([A-Za-z]+)"?')


def _unquote(q, bare):
    if q is not None:
        return re.sub(r"\\(.)", r"\1", q)
    return bare


def parse_dot(text):
    """Parse the undirected DOT subset written by :func:`graph_to_dot`.

    Returns ``(vertices, edges, classes)``.
    """
    lines = text.strip().splitlines()
    if not lines or not re.match(r"^\s*(strict\s+)?graph\b.*\{\s*$", lines[0]) or lines[-1].strip() != "}":
        raise InputError("not an undirected DOT graph")
    vertices, edges, classes = [], [], {}
    for line in lines[1:-1]:
        if not line.strip() or line.strip().startswith("//"):
            continue
        m = _EDGE_RE.match(line)
        if m:
            a, b = _unquote(m.group(1), m.group(2)), _unquote(m.group(3), m.group(4))
            for v in (a, b):
                if v not in vertices:
                    vertices.append(v)
            edges.append((a, b))
            continue
        m = _NODE_RE.match(line)
        if m:
            v = _unquote(m.group(1), m.group(2))
            if v in ("node", "edge", "graph"):
                continue
            if v not in vertices:
                vertices.append(v)
            if m.group(3):
                c = _CLASS_RE.search(m.group(3))
                if c:
                    classes[v] = c.group(1)
            continue
        if "->" in line:
            raise InputError("directed edges are not supported")
        raise InputError(f"cannot parse DOT line: {line.strip()!r}")
    return vertices, edges, classes


def write_outputs(obj, path, **kwargs):
    """Write a result object; the format follows the file suffix.

    ``.dot`` accepts a :class:`LabeledGraph` or :class:`GraphSearchResult`
    (``classes=`` may be given); ``.csv`` accepts an :class:`ObservationTable`
    or :class:`ResidualReport`; anything else is written as JSON via the
    object's ``to_dict``.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".dot":
        graph = getattr(obj, "graph", obj)
        text = graph_to_dot(graph, classes=kwargs.get("classes"))
    elif suffix == ".csv":
        if isinstance(obj, ObservationTable):
            text = table_to_csv(obj)
        elif hasattr(obj, "to_csv"):
            text = obj.to_csv()
        else:
            raise InputError(f"cannot write {type(obj).__name__} as CSV")
    else:
        if not hasattr(obj, "to_dict"):
            raise InputError(f"cannot write {type(obj).__name__} as JSON")
        text = dumps_json(obj.to_dict())
    _write_text(path, text)
    return path


def ensure_dir(path):
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise InputError(f"{path}: cannot create directory ({exc.strerror})") from exc
    return path
