"""Coupling weight matrices: Metropolis-Hastings, PageRank, and average consensus.

All constructors return matrices whose sparsity pattern equals the
in-neighborhood plus the diagonal, with every diagonal entry positive and
spectral radius one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DirectedGraph, is_strongly_connected

VALID_KINDS = ("metropolis_hastings", "pagerank", "average", "custom")

#: default validation tolerance for stochasticity and spectral-radius checks;
#: the constructions are exact up to rounding, so this is generous.
DEFAULT_TOL = 1e-10


class WeightError(ValueError):
    """Raised when a coupling matrix cannot be built or fails validation."""


@dataclass(frozen=True)
class WeightMatrix:
    """N x N nonnegative coupling matrix aligned with a graph's sorted node ids.

    ``entries[i, j]`` is the weight node i applies to the state received from
    node j.
    """

    entries: np.ndarray
    kind: str
    parameter: float | None
    nodes: tuple[int, ...]

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise WeightError("weight matrix must be square")
        if len(self.nodes) != entries.shape[0]:
            raise WeightError("node list does not match matrix size")
        if self.kind not in VALID_KINDS:
            raise WeightError(f"unknown weight kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def metropolis_hastings(g: DirectedGraph, mu: float) -> WeightMatrix:
    """Doubly-stochastic coupling for undirected connected graphs.

    Off-diagonal weights are (1 - mu) / max(d_i, d_j) on edges; the diagonal
    absorbs the remainder so every row sums to one.  Symmetry of the formula
    makes the matrix symmetric, hence column sums are one as well.
    """
    if not 0.0 < mu < 1.0:
        raise WeightError("mu must lie in (0, 1)")
    if not g.undirected:
        raise WeightError("Metropolis-Hastings coupling requires an undirected graph")
    if not is_strongly_connected(g):
        raise WeightError("graph must be connected")
    idx = g.index_of()
    deg = {v: g.in_degree(v) for v in g.nodes}
    w = np.zeros((g.n, g.n))
    for j, i in g.edges:
        w[idx[i], idx[j]] = (1.0 - mu) / max(deg[i], deg[j])
    for i in range(g.n):
        w[i, i] = 1.0 - w[i].sum()
    return WeightMatrix(w, "metropolis_hastings", mu, g.nodes)


def pagerank_coupling(g: DirectedGraph, m: float = 0.15) -> WeightMatrix:
    """Column-stochastic coupling m*I + (1 - m) * A * Dout^-1.

    Every sender j divides its state evenly over its out-neighbors; m keeps a
    fraction of the local state.  Requires a strongly connected digraph with
    all out-degrees at least one.
    """
    if not 0.0 < m < 1.0:
        raise WeightError("m must lie in (0, 1)")
    if not is_strongly_connected(g):
        raise WeightError("graph must be strongly connected")
    out_deg = {v: g.out_degree(v) for v in g.nodes}
    if any(d == 0 for d in out_deg.values()):
        raise WeightError("every node needs out-degree >= 1")
    idx = g.index_of()
    w = np.zeros((g.n, g.n))
    for j, i in g.edges:
        w[idx[i], idx[j]] = (1.0 - m) / out_deg[j]
    w[np.diag_indices(g.n)] = m
    return WeightMatrix(w, "pagerank", m, g.nodes)


def average_coupling(g: DirectedGraph, theta: float) -> WeightMatrix:
    """Row-stochastic coupling theta*I + (1 - theta) * D^-1 * A.

    Each receiver i mixes its own state (weight theta) with the plain average
    of its in-neighbors.  Requires strong connectivity and in-degrees >= 1.
    """
    if not 0.0 < theta < 1.0:
        raise WeightError("theta must lie in (0, 1)")
    if not is_strongly_connected(g):
        raise WeightError("graph must be strongly connected")
    in_deg = {v: g.in_degree(v) for v in g.nodes}
    if any(d == 0 for d in in_deg.values()):
        raise WeightError("every node needs in-degree >= 1")
    idx = g.index_of()
    w = np.zeros((g.n, g.n))
    for j, i in g.edges:
        w[idx[i], idx[j]] = (1.0 - theta) / in_deg[i]
    w[np.diag_indices(g.n)] = theta
    return WeightMatrix(w, "average", theta, g.nodes)


@dataclass(frozen=True)
class WeightReport:
    """Validation outcome; ``violations`` is empty when all checks pass."""

    violations: tuple[str, ...]
    spectral_radius: float
    row_stochastic: bool
    column_stochastic: bool

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(w: WeightMatrix, g: DirectedGraph, tol: float = DEFAULT_TOL) -> WeightReport:
    """Check the sparsity pattern, positive diagonal, and unit spectral radius.

    Violations are collected into the report rather than raised, except for a
    graph/matrix dimension mismatch which is a usage error.
    """
    if w.n != g.n or w.nodes != g.nodes:
        raise WeightError("weight matrix does not match the graph's node set")
    entries = w.entries
    violations: list[str] = []
    if (entries < 0).any():
        violations.append("negative entries present")
    idx = g.index_of()
    allowed = np.eye(g.n, dtype=bool)
    for j, i in g.edges:
        allowed[idx[i], idx[j]] = True
    structural_zero = (entries != 0.0) & ~allowed
    if structural_zero.any():
        r, c = np.argwhere(structural_zero)[0]
        violations.append(
            f"nonzero weight outside the neighborhood pattern at ({w.nodes[r]}, {w.nodes[c]})"
        )
    missing = (entries <= 0.0) & allowed
    if missing.any():
        r, c = np.argwhere(missing)[0]
        if r == c:
            violations.append(f"diagonal entry for node {w.nodes[r]} is not positive")
        else:
            violations.append(f"edge weight at ({w.nodes[r]}, {w.nodes[c]}) is not positive")
    rho = float(np.max(np.abs(np.linalg.eigvals(entries))))
    if abs(rho - 1.0) > tol:
        violations.append(f"spectral radius {rho!r} deviates from 1 by more than {tol}")
    ones = np.ones(g.n)
    row = bool(np.max(np.abs(entries @ ones - ones)) <= tol)
    col = bool(np.max(np.abs(ones @ entries - ones)) <= tol)
    return WeightReport(tuple(violations), rho, row, col)


def custom_weights(
    entries: np.ndarray,
    g: DirectedGraph,
    parameter: float | None = None,
    tol: float = DEFAULT_TOL,
) -> WeightMatrix:
    """Wrap a user-supplied matrix after validating it against the graph."""
    w = WeightMatrix(np.asarray(entries, dtype=float), "custom", parameter, g.nodes)
    report = validate(w, g, tol)
    if not report.ok:
        raise WeightError("; ".join(report.violations))
    return w


def weights_to_csv(w: WeightMatrix) -> str:
    """Dense row-major CSV with kind/parameter/nodes header comments."""
    lines = [
        f"# kind={w.kind}",
        f"# parameter={'' if w.parameter is None else repr(float(w.parameter))}",
        "# nodes=" + " ".join(str(v) for v in w.nodes),
    ]
    for row in w.entries:
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def weights_from_csv(text: str) -> WeightMatrix:
    kind = "custom"
    parameter: float | None = None
    nodes: tuple[int, ...] = ()
    rows: list[list[float]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("kind="):
                kind = body[len("kind="):].strip()
            elif body.startswith("parameter="):
                value = body[len("parameter="):].strip()
                parameter = float(value) if value else None
            elif body.startswith("nodes="):
                nodes = tuple(int(v) for v in body[len("nodes="):].split())
            continue
        rows.append([float(tok) for tok in line.split(",")])
    entries = np.array(rows, dtype=float)
    if not nodes:
        nodes = tuple(range(1, len(rows) + 1))
    return WeightMatrix(entries, kind, parameter, nodes)
