"""Gaussian graphical models over predicted random components.

Decomposable (chordal) models have a closed-form maximum likelihood: along a
perfect elimination ordering each vertex is regressed on its earlier
neighbours, which always form a clique.  The search starts from the exact
minimal-BIC forest (maximum-weight spanning forest on per-edge BIC gains) and
then adds single edges greedily while the graph stays chordal.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data_io import FORMAT_VERSION, check_fields, check_version
from .errors import InputError, NumericalError, UnsupportedModelError

MODEL_CLASSES = ("forest", "decomposable")


class LabeledGraph:
    """Undirected simple graph over an ordered list of labels."""

    def __init__(self, vertices, edges=()):
        self.vertices = tuple(str(v) for v in vertices)
        if len(set(self.vertices)) != len(self.vertices):
            raise InputError("duplicate vertex labels")
        self._pos = {v: i for i, v in enumerate(self.vertices)}
        self.adj = {v: set() for v in self.vertices}
        for a, b in edges:
            a, b = str(a), str(b)
            for v in (a, b):
                if v not in self._pos:
                    raise InputError(f"edge endpoint {v!r} is not a vertex")
            if a == b:
                raise InputError(f"self-loop at {a!r}")
            self.adj[a].add(b)
            self.adj[b].add(a)

    @property
    def edges(self):
        return frozenset(self.sorted_edges())

    def sorted_edges(self):
        """Edges as ``(a, b)`` with ``a`` before ``b`` in vertex order, sorted."""
        out = []
        for a in self.vertices:
            for b in self.adj[a]:
                if self._pos[a] < self._pos[b]:
                    out.append((a, b))
        out.sort(key=lambda e: (self._pos[e[0]], self._pos[e[1]]))
        return out

    def index(self, v):
        return self._pos[v]

    def has_edge(self, a, b):
        return b in self.adj.get(a, ())

    def neighbors(self, v):
        return frozenset(self.adj[v])

    def n_edges(self):
        return sum(len(s) for s in self.adj.values()) // 2

    def with_edge(self, a, b):
        return LabeledGraph(self.vertices, [*self.sorted_edges(), (a, b)])

    def relabel(self, mapping):
        return LabeledGraph([mapping[v] for v in self.vertices],
                            [(mapping[a], mapping[b]) for a, b in self.sorted_edges()])

    def check_labels(self, labels, what="label"):
        unknown = [v for v in labels if v not in self._pos]
        if unknown:
            raise InputError(f"unknown {what}(s): {unknown}")

    def edge_set(self):
        return frozenset(frozenset(e) for e in self.sorted_edges())

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return set(self.vertices) == set(other.vertices) and self.edge_set() == other.edge_set()

    __hash__ = None

    def __repr__(self):
        return f"LabeledGraph({len(self.vertices)} vertices, {self.n_edges()} edges)"

    def to_dict(self):
        return {"vertices": list(self.vertices), "edges": [list(e) for e in self.sorted_edges()]}

    @classmethod
    def from_dict(cls, data):
        check_fields(data, {"vertices", "edges"}, "graph", required=("vertices", "edges"))
        return cls(data["vertices"], [tuple(e) for e in data["edges"]])


def mcs_order(graph):
    """Maximum-cardinality search; ties go to the earliest vertex."""
    weight = {v: 0 for v in graph.vertices}
    order, done = [], set()
    for _ in graph.vertices:
        v = max((w for w in graph.vertices if w not in done), key=lambda w: (weight[w], -graph.index(w)))
        order.append(v)
        done.add(v)
        for w in graph.adj[v]:
            if w not in done:
                weight[w] += 1
    return order


def _earlier_neighbours(graph, order):
    rank = {v: i for i, v in enumerate(order)}
    return {v: sorted((w for w in graph.adj[v] if rank[w] < rank[v]), key=rank.get) for v in order}


def is_chordal(graph):
    order = mcs_order(graph)
    pa = _earlier_neighbours(graph, order)
    return all(graph.has_edge(a, b) for v in order for a, b in combinations(pa[v], 2))


def is_forest(graph):
    parent = {v: v for v in graph.vertices}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in graph.sorted_edges():
        ra, rb = find(a), find(b)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def max_clique_size(graph):
    order = mcs_order(graph)
    pa = _earlier_neighbours(graph, order)
    return max((len(pa[v]) + 1 for v in order), default=0)


def _data(matrix):
    """``(values, labels)`` from a RandomEffectsMatrix-like object or a pair."""
    if isinstance(matrix, tuple):
        values, labels = matrix
    else:
        values, labels = matrix.values, matrix.response_names
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != len(labels):
        raise InputError("data matrix shape does not match its labels")
    return values, list(labels)


def mle_covariance(values):
    centred = values - values.mean(axis=0)
    return centred.T @ centred / values.shape[0]


def _neg2_loglik(S, n, graph, col):
    """-2 x maximised log-likelihood of a chordal Gaussian model."""
    order = mcs_order(graph)
    pa = _earlier_neighbours(graph, order)
    total = 0.0
    for v in order:
        if any(not graph.has_edge(a, b) for a, b in combinations(pa[v], 2)):
            raise UnsupportedModelError("graph is not chordal; only decomposable models are supported")
        idx = [col[w] for w in pa[v]] + [col[v]]
        block = S[np.ix_(idx, idx)]
        try:
            L = np.linalg.cholesky(block)
        except np.linalg.LinAlgError:
            raise NumericalError(f"singular covariance block for clique {sorted([v, *pa[v]])}") from None
        cond_var = L[-1, -1] ** 2
        if not cond_var > 1e-300:
            raise NumericalError(f"singular covariance block for clique {sorted([v, *pa[v]])}")
        total += n * (math.log(2.0 * math.pi * cond_var) + 1.0)
    return total


def gaussian_bic(matrix, graph):
    """BIC of the decomposable Gaussian model ``graph`` for the data rows.

    Parameter count: one mean and one variance per vertex plus one per edge.
    """
    values, labels = _data(matrix)
    n = values.shape[0]
    if n < 2:
        raise InputError("need at least 2 rows")
    if set(labels) != set(graph.vertices) or len(labels) != len(graph.vertices):
        raise InputError("graph vertices must match the data columns")
    col = {v: labels.index(v) for v in graph.vertices}
    S = mle_covariance(values)
    k = 2 * len(graph.vertices) + graph.n_edges()
    return _neg2_loglik(S, n, graph, col) + k * math.log(n)


@dataclass
class TraceStep:
    edge: tuple
    delta_bic: float
    accepted: bool


@dataclass
class GraphSearchResult:
    graph: LabeledGraph
    bic: float
    trace: list = field(default_factory=list)
    model_class: str = "forest"
    n_rows: int = 0

    def to_dict(self):
        return {
            "formatVersion": FORMAT_VERSION,
            "kind": "GraphSearchResult",
            "modelClass": self.model_class,
            "nRows": self.n_rows,
            "bic": float(self.bic),
            "graph": self.graph.to_dict(),
            "searchTrace": [
                {"edge": list(s.edge), "deltaBic": float(s.delta_bic), "accepted": bool(s.accepted)}
                for s in self.trace
            ],
        }

    @classmethod
    def from_dict(cls, data):
        check_fields(data, {"formatVersion", "kind", "modelClass", "nRows", "bic", "graph", "searchTrace"},
                     "graph search result", required=("formatVersion", "graph", "bic"))
        check_version(data, "graph search result")
        trace = []
        for s in data.get("searchTrace", []):
            check_fields(s, {"edge", "deltaBic", "accepted"}, "searchTrace step", required=("edge", "deltaBic", "accepted"))
            trace.append(TraceStep(tuple(s["edge"]), float(s["deltaBic"]), bool(s["accepted"])))
        return cls(LabeledGraph.from_dict(data["graph"]), float(data["bic"]), trace,
                   data.get("modelClass", "forest"), int(data.get("nRows", 0)))


def _partial_correlation(S, i, j, cond):
    idx = [i, j, *cond]
    P = np.linalg.inv(S[np.ix_(idx, idx)])
    return -P[0, 1] / math.sqrt(P[0, 0] * P[1, 1])


def edge_gains(S, n):
    """BIC decrease from adding each single edge to the empty graph."""
    d = np.sqrt(np.diag(S))
    R = S / np.outer(d, d)
    np.fill_diagonal(R, 0.0)
    with np.errstate(divide="ignore"):
        return -n * np.log1p(-np.minimum(R * R, 1.0)) - math.log(n)


def search_min_bic(matrix, model_class="forest"):
    """Select the minimal-BIC graph within ``model_class``.

    ``forest`` is exact (Kruskal on positive per-edge gains).  ``decomposable``
    refines that forest greedily: each round adds the chordality-preserving
    edge with the most negative BIC change, ties broken by edge order.
    Candidates whose clique would reach the number of rows are skipped.
    """
    if model_class not in MODEL_CLASSES:
        raise InputError(f"model class must be one of {MODEL_CLASSES}, got {model_class!r}")
    values, labels = _data(matrix)
    n, p = values.shape
    if n < 3:
        raise InputError(f"graph search needs at least 3 rows, got {n}")
    S = mle_covariance(values)
    if np.any(np.diag(S) <= 0):
        bad = [labels[i] for i in np.flatnonzero(np.diag(S) <= 0)]
        raise NumericalError(f"zero variance in column(s) {bad}")
    gains = edge_gains(S, n)

    trace = []
    parent = list(range(p))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    candidates = sorted(((gains[i, j], i, j) for i, j in combinations(range(p), 2) if gains[i, j] > 0),
                        key=lambda c: (-c[0], c[1], c[2]))
    edges = []
    for gain, i, j in candidates:
        ri, rj = find(i), find(j)
        accepted = ri != rj
        if accepted:
            parent[ri] = rj
            edges.append((labels[i], labels[j]))
        trace.append(TraceStep((labels[i], labels[j]), -float(gain), accepted))
    graph = LabeledGraph(labels, edges)

    if model_class == "decomposable":
        graph = _greedy_decomposable(S, n, labels, graph, trace)

    bic = gaussian_bic((values, labels), graph)
    return GraphSearchResult(graph, bic, trace, model_class, n)


def _greedy_decomposable(S, n, labels, graph, trace):
    col = {v: i for i, v in enumerate(labels)}
    penalty = math.log(n)
    while True:
        best = None
        for a, b in combinations(labels, 2):
            if graph.has_edge(a, b):
                continue
            sep = graph.adj[a] & graph.adj[b]
            if len(sep) + 2 >= n:
                continue
            cand = graph.with_edge(a, b)
            if not is_chordal(cand):
                continue
            # the new clique is sep + {a, b}: the likelihood gain is the
            # conditional mutual information of a and b given sep
            r = _partial_correlation(S, col[a], col[b], [col[s] for s in sorted(sep, key=col.get)])
            delta = n * math.log1p(-min(r * r, 1.0 - 1e-15)) + penalty
            if best is None or delta < best[0]:
                best = (delta, a, b)
        if best is None or not best[0] < 0:
            if best is not None:
                trace.append(TraceStep((best[1], best[2]), best[0], False))
            return graph
        graph = graph.with_edge(best[1], best[2])
        trace.append(TraceStep((best[1], best[2]), best[0], True))


def _check_sets(graph, **sets):
    for name, s in sets.items():
        graph.check_labels(s, f"vertex in {name}")
    names = list(sets)
    for x, y in combinations(names, 2):
        common = set(sets[x]) & set(sets[y])
        if common:
            raise InputError(f"sets {x} and {y} overlap: {sorted(common)}")


def is_separator(graph, set_a, set_b, set_s):
    """True iff every path from ``set_a`` to ``set_b`` passes through ``set_s``."""
    A, B, S = set(set_a), set(set_b), set(set_s)
    if not A or not B:
        raise InputError("sets A and B must be non-empty")
    _check_sets(graph, A=A, B=B, S=S)
    seen = set(A)
    queue = deque(sorted(A, key=graph.index))
    while queue:
        v = queue.popleft()
        for w in graph.adj[v]:
            if w in B:
                return False
            if w not in seen and w not in S:
                seen.add(w)
                queue.append(w)
    return True


def minimal_markov_blanket(graph, targets):
    """Neighbours of ``targets`` outside ``targets``."""
    T = set(targets)
    if not T:
        raise InputError("targets must be non-empty")
    graph.check_labels(T, "target")
    blanket = set()
    for v in T:
        blanket |= graph.adj[v]
    return frozenset(blanket - T)


def vertex_classes(graph, targets):
    """Figure-style vertex classes: target / blanket / peripheral."""
    targets = set(targets)
    blanket = minimal_markov_blanket(graph, targets) if targets else frozenset()
    return {
        v: "target" if v in targets else "blanket" if v in blanket else "peripheral"
        for v in graph.vertices
    }


def induced_separation_statement(graph, targets, given=None):
    """Sentence stating what the separation implies for the observed responses."""
    targets = sorted(set(targets), key=graph.index)
    given = sorted(minimal_markov_blanket(graph, targets) if given is None else set(given), key=graph.index)
    rest = [v for v in graph.vertices if v not in targets and v not in given]
    if not rest:
        return f"No responses remain outside {{{', '.join(targets)}}} and {{{', '.join(given)}}}."
    if is_separator(graph, targets, rest, given):
        return (
            f"Given the random components of {{{', '.join(given)}}}, the responses {{{', '.join(rest)}}} "
            f"are conditionally independent of the responses {{{', '.join(targets)}}}."
        )
    return (
        f"{{{', '.join(given)}}} does not separate {{{', '.join(targets)}}} from "
        f"{{{', '.join(rest)}}}; no conditional independence of the responses follows."
    )


# Figure 1: estimated graph over the 16 random components (14 VOCs, two
# infection responses).
FIGURE1_VOCS = (
    "anisole", "3-pentanone", "ethanol", "acetone", "2-phenylethanol", "2-methyl-1-propanol",
    "1-propanol", "pentane", "3-methylfuran", "ethyl 2-methylbutanoate", "styrene", "unknown",
    "1-ethyl-4-methoxybenzene", "3-methyl-1-butanol",
)
FIGURE1_TARGETS = ("infection proportion", "lesion area")
FIGURE1_BLANKET = ("anisole", "3-pentanone", "2-methyl-1-propanol", "2-phenylethanol")
FIGURE1_EDGES = (
    ("infection proportion", "lesion area"), ("anisole", "3-pentanone"), ("ethanol", "acetone"),
    ("infection proportion", "anisole"), ("anisole", "ethanol"), ("lesion area", "3-pentanone"),
    ("3-pentanone", "acetone"), ("infection proportion", "3-pentanone"), ("lesion area", "anisole"),
    ("anisole", "acetone"), ("ethanol", "3-pentanone"), ("2-methyl-1-propanol", "anisole"),
    ("2-methyl-1-propanol", "2-phenylethanol"), ("2-phenylethanol", "infection proportion"),
    ("2-methyl-1-propanol", "infection proportion"), ("2-phenylethanol", "anisole"),
    ("acetone", "pentane"), ("acetone", "3-methylfuran"), ("acetone", "1-propanol"),
    ("pentane", "3-methylfuran"), ("pentane", "1-propanol"), ("pentane", "3-pentanone"),
    ("3-methylfuran", "1-propanol"), ("3-methylfuran", "3-pentanone"), ("1-propanol", "3-pentanone"),
    ("2-phenylethanol", "ethyl 2-methylbutanoate"), ("ethyl 2-methylbutanoate", "styrene"),
    ("ethyl 2-methylbutanoate", "unknown"), ("ethyl 2-methylbutanoate", "1-ethyl-4-methoxybenzene"),
    ("ethyl 2-methylbutanoate", "3-methyl-1-butanol"), ("styrene", "unknown"),
    ("styrene", "1-ethyl-4-methoxybenzene"), ("styrene", "3-methyl-1-butanol"),
    ("unknown", "1-ethyl-4-methoxybenzene"), ("unknown", "3-methyl-1-butanol"),
    ("1-ethyl-4-methoxybenzene", "3-methyl-1-butanol"),
)


def figure1_graph():
    return LabeledGraph(FIGURE1_VOCS + FIGURE1_TARGETS, FIGURE1_EDGES)


def figure1_peripheral():
    return tuple(v for v in FIGURE1_VOCS if v not in FIGURE1_BLANKET)
