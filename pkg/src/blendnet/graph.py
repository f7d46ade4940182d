"""Directed communication graphs: structure checks, mutation, generation, edge-list I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs, edge lists, or mutation requests."""


@dataclass(frozen=True)
class Join:
    """Membership event: ``node`` joins with the given incident ``(j, i)`` edges."""

    node: int
    edges: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class Leave:
    """Membership event: ``node`` leaves and all its incident edges are dropped."""

    node: int


@dataclass(frozen=True)
class DirectedGraph:
    """Communication graph with unique positive integer node ids and no self-loops.

    An edge ``(j, i)`` means node j sends information to node i, so the
    in-neighborhood of i is ``{j : (j, i) in edges}``.  Undirected graphs keep a
    symmetric edge set and are flagged via ``undirected``.  Instances are
    immutable values; mutation helpers return new graphs.
    """

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    undirected: bool = False

    def __post_init__(self):
        nodes = tuple(sorted(int(v) for v in self.nodes))
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node ids")
        if any(v < 1 for v in nodes):
            raise GraphError("node ids must be positive integers")
        node_set = set(nodes)
        for j, i in edges:
            if j == i:
                raise GraphError(f"self-loop {j}->{i} not allowed")
            if j not in node_set or i not in node_set:
                raise GraphError(f"edge {j}->{i} references unknown node")
        if self.undirected:
            for j, i in edges:
                if (i, j) not in edges:
                    raise GraphError(f"undirected graph is missing reverse edge {i}->{j}")

    @classmethod
    def build(cls, edges, nodes=(), undirected: bool = False) -> "DirectedGraph":
        """Build a graph from edge pairs, adding endpoint nodes automatically.

        For undirected graphs every input pair is stored in both orientations.
        """
        edge_set: set[tuple[int, int]] = set()
        node_set = {int(v) for v in nodes}
        for j, i in edges:
            j, i = int(j), int(i)
            edge_set.add((j, i))
            if undirected:
                edge_set.add((i, j))
            node_set.update((j, i))
        return cls(tuple(sorted(node_set)), frozenset(edge_set), undirected)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index_of(self) -> dict[int, int]:
        """Map node id to its row/column position (sorted-id order)."""
        return {v: i for i, v in enumerate(self.nodes)}

    def in_neighbors(self, i: int) -> set[int]:
        return {j for (j, i2) in self.edges if i2 == i}

    def out_neighbors(self, j: int) -> set[int]:
        return {i for (j2, i) in self.edges if j2 == j}

    def in_degree(self, i: int) -> int:
        return len(self.in_neighbors(i))

    def out_degree(self, j: int) -> int:
        return len(self.out_neighbors(j))

    def in_degrees(self) -> np.ndarray:
        return np.array([self.in_degree(v) for v in self.nodes], dtype=int)

    def out_degrees(self) -> np.ndarray:
        return np.array([self.out_degree(v) for v in self.nodes], dtype=int)

    def adjacency(self, self_loops: bool = False) -> np.ndarray:
        """Binary adjacency matrix A with A[i, j] = 1 iff (j, i) is an edge.

        Rows index receivers, columns index senders; optional unit diagonal.
        """
        idx = self.index_of()
        a = np.zeros((self.n, self.n), dtype=int)
        for j, i in self.edges:
            a[idx[i], idx[j]] = 1
        if self_loops:
            a[np.diag_indices(self.n)] = 1
        return a


def _reachable(g: DirectedGraph, start: int, reverse: bool = False) -> set[int]:
    succ = g.in_neighbors if reverse else g.out_neighbors
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in succ(v):
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def is_strongly_connected(g: DirectedGraph) -> bool:
    """True iff a directed path exists from every node to every other node."""
    if g.n == 0:
        raise GraphError("empty graph")
    root = g.nodes[0]
    if len(_reachable(g, root)) != g.n:
        return False
    return len(_reachable(g, root, reverse=True)) == g.n


def is_primitive(g: DirectedGraph, with_self_loops: bool = False) -> bool:
    """True iff the binary adjacency matrix (optionally with a unit diagonal)
    has some power with all entries positive.

    Checked exactly by boolean matrix powers up to the Wielandt bound
    (N-1)^2 + 1; cheap at desk scale.
    """
    if g.n == 0:
        return False
    if not is_strongly_connected(g):
        return False
    a = g.adjacency(self_loops=with_self_loops) > 0
    bound = (g.n - 1) ** 2 + 1
    power = a.copy()
    for _ in range(bound):
        if power.all():
            return True
        power = (power.astype(np.int64) @ a.astype(np.int64)) > 0
    return bool(power.all())


def degree_sequence(g: DirectedGraph) -> tuple[int, ...]:
    """Degrees of an undirected graph, sorted non-increasing."""
    if not g.undirected:
        raise GraphError("degree sequence is defined for undirected graphs only")
    return tuple(sorted((g.in_degree(v) for v in g.nodes), reverse=True))


def mutate(g: DirectedGraph, event, protected: tuple[int, ...] = ()) -> DirectedGraph:
    """Apply a Join or Leave event, returning a new graph.

    Callers are responsible for re-validating connectivity afterwards.  Nodes
    listed in ``protected`` refuse Leave events (e.g. a designated anchor).
    """
    if isinstance(event, Leave):
        if event.node in protected:
            raise GraphError(f"node {event.node} is protected and cannot leave")
        if event.node not in g.nodes:
            raise GraphError(f"node {event.node} is not in the graph")
        nodes = tuple(v for v in g.nodes if v != event.node)
        edges = frozenset(e for e in g.edges if event.node not in e)
        return DirectedGraph(nodes, edges, g.undirected)
    if isinstance(event, Join):
        if event.node in g.nodes:
            raise GraphError(f"node id {event.node} is already in use")
        node_set = set(g.nodes) | {int(event.node)}
        edge_set = set(g.edges)
        for j, i in event.edges:
            j, i = int(j), int(i)
            if j == i:
                raise GraphError(f"self-loop {j}->{i} not allowed")
            if j not in node_set or i not in node_set:
                raise GraphError(f"edge {j}->{i} references unknown node")
            edge_set.add((j, i))
            if g.undirected:
                edge_set.add((i, j))
        return DirectedGraph(tuple(sorted(node_set)), frozenset(edge_set), g.undirected)
    raise GraphError(f"unknown event {event!r}")


def generate_connected(
    n: int,
    edge_probability: float,
    seed: int,
    undirected: bool = True,
    max_retries: int = 500,
) -> DirectedGraph:
    """Seeded random graph, re-sampled until it is (strongly) connected.

    Node ids are 1..n.  ``edge_probability`` lies in (0, 1]; with 1.0 the
    complete graph is produced on the first try.
    """
    if n < 2:
        raise GraphError("need at least 2 nodes")
    if not 0.0 < edge_probability <= 1.0:
        raise GraphError("edge_probability must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    ids = range(1, n + 1)
    for _ in range(max_retries):
        pairs = []
        if undirected:
            for a in ids:
                for b in range(a + 1, n + 1):
                    if rng.random() < edge_probability:
                        pairs.append((a, b))
        else:
            for a in ids:
                for b in ids:
                    if a != b and rng.random() < edge_probability:
                        pairs.append((a, b))
        try:
            g = DirectedGraph.build(pairs, nodes=ids, undirected=undirected)
        except GraphError:
            continue
        if is_strongly_connected(g):
            return g
    raise GraphError(
        f"no connected graph found in {max_retries} tries (n={n}, p={edge_probability})"
    )


def parse_edge_list(text: str) -> DirectedGraph:
    """Parse the edge-list format: one ``j i`` pair per line.

    Lines starting with '#' are ignored; an optional first content line
    ``undirected`` declares a symmetric graph.  Self-loops, malformed lines
    and duplicate edges are rejected.
    """
    undirected = False
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    first_content = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if first_content and line.lower() == "undirected":
            undirected = True
            first_content = False
            continue
        first_content = False
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'j i', got {line!r}")
        try:
            j, i = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise GraphError(f"line {lineno}: non-integer node id in {line!r}") from exc
        if j < 1 or i < 1:
            raise GraphError(f"line {lineno}: node ids must be positive")
        if j == i:
            raise GraphError(f"line {lineno}: self-loop {j}->{i}")
        key = (min(j, i), max(j, i)) if undirected else (j, i)
        if key in seen:
            raise GraphError(f"line {lineno}: duplicate edge {j} {i}")
        seen.add(key)
        pairs.append((j, i))
    if not pairs:
        raise GraphError("edge list contains no edges")
    return DirectedGraph.build(pairs, undirected=undirected)


def serialize_edge_list(g: DirectedGraph) -> str:
    """Canonical edge-list text; ``parse_edge_list`` round-trips it."""
    lines = []
    if g.undirected:
        lines.append("undirected")
        pairs = sorted({(min(j, i), max(j, i)) for j, i in g.edges})
    else:
        pairs = sorted(g.edges)
    lines.extend(f"{j} {i}" for j, i in pairs)
    return "\n".join(lines) + "\n"
