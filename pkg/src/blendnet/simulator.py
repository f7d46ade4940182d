"""Multi-step coupling execution over fractional time, with a blended reference.

One macro round at integer count t runs the heterogeneous node maps once and
then applies the linear coupling K-1 times; the fractional index t_k = t + k/K
labels the sub-steps.  Alongside the network, the blended reference

    s[t+1] = sum_i q_i f_i(t, p_i s[t])

is integrated from s[1] = sum_i q_i f_i(0, x_i[0]), and re-seeded the same way
after every membership event.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .graph import DirectedGraph, GraphError, Join, Leave, is_strongly_connected, mutate, serialize_edge_list
from .spectral import PerronPair, SpectralDecomposition, perron_pair
from .weights import (
    WeightError,
    WeightMatrix,
    average_coupling,
    custom_weights,
    metropolis_hastings,
    pagerank_coupling,
    validate,
)

COUPLING_KINDS = ("metropolis_hastings", "pagerank", "average", "custom")


class SimulationError(RuntimeError):
    """Runtime/numerical failure while executing a scenario."""


class AssumptionViolation(ValueError):
    """A structural assumption failed, at start or after a membership event."""


@dataclass(frozen=True)
class FractionalTime:
    """Index t + k/K with integer count t and fraction count k in {0, ..., K-1}."""

    t: int
    k: int
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if not 0 <= self.k < self.K:
            raise ValueError("fraction count must lie in [0, K-1]")

    def successor(self) -> "FractionalTime":
        if self.k + 1 < self.K:
            return FractionalTime(self.t, self.k + 1, self.K)
        return FractionalTime(self.t + 1, 0, self.K)

    def as_float(self) -> float:
        return self.t + self.k / self.K

    def key(self) -> tuple[int, int]:
        return (self.t, self.k)


@dataclass(frozen=True)
class NodeDynamics:
    """Per-agent update map x <- f(t, x) with declared growth metadata.

    ``lipschitz`` bounds ||f(t,x) - f(t,y)|| / ||x - y|| and ``bound`` is a
    non-decreasing r -> M(r) with ||f(t,x)|| <= M(r) whenever ||x|| <= r.
    Both are declarations, spot-checkable but not provable.  For affine maps
    built via :func:`affine_dynamics` they are derived automatically and the
    coefficients are kept for symbolic analysis.
    """

    update: Callable[[int, np.ndarray], np.ndarray]
    lipschitz: float
    bound: Callable[[float], float]
    affine: tuple[np.ndarray, np.ndarray] | None = None


def affine_dynamics(a, b) -> NodeDynamics:
    """Node map f(t, x) = a x + b for scalar or square-matrix a."""
    a_mat = np.atleast_2d(np.asarray(a, dtype=float))
    b_vec = np.atleast_1d(np.asarray(b, dtype=float))
    if a_mat.shape[0] != a_mat.shape[1] or a_mat.shape[0] != b_vec.shape[0]:
        raise ValueError("affine coefficients have inconsistent shapes")
    a_mat.setflags(write=False)
    b_vec.setflags(write=False)
    gain = float(np.linalg.norm(a_mat, 2))
    offset = float(np.linalg.norm(b_vec))
    return NodeDynamics(
        update=lambda t, x: a_mat @ x + b_vec,
        lipschitz=gain,
        bound=lambda r: gain * r + offset,
        affine=(a_mat, b_vec),
    )


@dataclass(frozen=True)
class BlendedDynamics:
    """The q-weighted average s -> sum_i q_i f_i(t, p_i s) of the node maps."""

    step: Callable[[int, np.ndarray], np.ndarray]
    affine: tuple[np.ndarray, np.ndarray] | None = None


def build_blended(dynamics, pair: PerronPair) -> BlendedDynamics:
    """Assemble the blended map from node dynamics and a Perron pair."""
    maps = tuple(dynamics)
    p = pair.p
    q = pair.q
    if len(maps) != len(p):
        raise ValueError("one dynamics entry per node required")

    def step(t: int, s: np.ndarray) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        acc = np.zeros_like(s)
        for qi, pi, d in zip(q, p, maps):
            acc = acc + qi * d.update(t, pi * s)
        return acc

    affine = None
    if all(d.affine is not None for d in maps):
        a_s = sum(qi * pi * d.affine[0] for qi, pi, d in zip(q, p, maps))
        b_s = sum(qi * d.affine[1] for qi, d in zip(q, maps))
        affine = (np.asarray(a_s, dtype=float), np.asarray(b_s, dtype=float))
    return BlendedDynamics(step, affine)


@dataclass(frozen=True)
class NetworkState:
    """Per-node states in sorted node-id order; ``values`` has shape (N, n)."""

    ids: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", tuple(int(v) for v in self.ids))
        if values.shape[0] != len(self.ids):
            raise ValueError("state row count does not match node count")

    def stacked(self) -> np.ndarray:
        """Node states concatenated into a single vector of length N*n."""
        return self.values.reshape(-1)

    def node(self, node_id: int) -> np.ndarray:
        return self.values[self.ids.index(node_id)]


def node_step(state: NetworkState, t: int, dynamics) -> NetworkState:
    """Apply x_i <- f_i(t, x_i) to every node."""
    maps = tuple(dynamics)
    if len(maps) != len(state.ids):
        raise SimulationError("one dynamics entry per node required")
    new = np.array([d.update(t, x) for d, x in zip(maps, state.values)], dtype=float)
    return NetworkState(state.ids, new)


def coupling_step(state: NetworkState, w: WeightMatrix) -> NetworkState:
    """Apply the weighted averaging x_i <- sum_j w_ij x_j once."""
    if w.n != len(state.ids):
        raise SimulationError("weight matrix does not match the state dimension")
    return NetworkState(state.ids, w.entries @ state.values)


def macro_step(state: NetworkState, t: int, dynamics, w: WeightMatrix, K: int) -> NetworkState:
    """One node step followed by K-1 coupling steps (the full round t -> t+1)."""
    if K < 1:
        raise SimulationError("K must be at least 1")
    out = node_step(state, t, dynamics)
    for _ in range(K - 1):
        out = coupling_step(out, w)
    return out


def blended_step(s: np.ndarray, t: int, bd: BlendedDynamics) -> np.ndarray:
    return bd.step(t, s)


@dataclass(frozen=True)
class TransformedState:
    """Consensus coordinate xi1 = (q' (x) I) xbar and complement xitilde = (Z' (x) I) xbar."""

    xi1: np.ndarray
    xitilde: np.ndarray  # shape (N-1, n)


def transform(state: NetworkState, dec: SpectralDecomposition) -> TransformedState:
    x = state.values
    if x.shape[0] != dec.n:
        raise ValueError("state and decomposition dimensions differ")
    return TransformedState(dec.pair.q @ x, dec.Z.T @ x)


def untransform(ts: TransformedState, dec: SpectralDecomposition, ids) -> NetworkState:
    """Inverse transform: xbar = (p (x) I) xi1 + (R (x) I) xitilde."""
    x = np.outer(dec.pair.p, ts.xi1) + dec.R @ ts.xitilde
    return NetworkState(tuple(ids), x)


@dataclass(frozen=True)
class InitialCondition:
    """How node states at t=0 are produced; joining nodes always start at zero."""

    kind: str = "zeros"  # zeros | constant | box | explicit
    constant: float = 0.0
    low: float = 0.0
    high: float = 0.0
    values: tuple[tuple[int, tuple[float, ...]], ...] = ()

    def materialize(self, ids, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "zeros":
            return np.zeros((len(ids), n))
        if self.kind == "constant":
            return np.full((len(ids), n), float(self.constant))
        if self.kind == "box":
            return rng.uniform(self.low, self.high, size=(len(ids), n))
        if self.kind == "explicit":
            lookup = {int(k): np.asarray(v, dtype=float) for k, v in self.values}
            missing = [v for v in ids if v not in lookup]
            if missing:
                raise AssumptionViolation(f"explicit initial state missing nodes {missing}")
            return np.array([lookup[v] for v in ids], dtype=float).reshape(len(ids), n)
        raise AssumptionViolation(f"unknown initial condition kind {self.kind!r}")


def initial_zeros() -> InitialCondition:
    return InitialCondition("zeros")


def initial_constant(c: float) -> InitialCondition:
    return InitialCondition("constant", constant=c)


def initial_box(low: float, high: float) -> InitialCondition:
    return InitialCondition("box", low=low, high=high)


def initial_explicit(mapping) -> InitialCondition:
    values = tuple(sorted((int(k), tuple(np.atleast_1d(v).astype(float))) for k, v in dict(mapping).items()))
    return InitialCondition("explicit", values=values)


@dataclass(frozen=True)
class Scenario:
    """Complete, replayable description of one run.

    ``dynamics_builder`` maps the current graph to one NodeDynamics per node in
    sorted-id order; it is re-invoked after every membership event so maps that
    depend on degrees or on the anchor stay consistent.
    """

    graph: DirectedGraph
    coupling: str
    parameter: float
    dynamics_builder: Callable[[DirectedGraph], list[NodeDynamics]]
    K: int
    horizon: int
    initial: InitialCondition = field(default_factory=initial_zeros)
    events: tuple[tuple[int, object], ...] = ()
    record: str = "all"  # all | integer
    seed: int = 0
    n: int = 1
    anchor: int | None = None
    custom_entries: tuple[tuple[float, ...], ...] | None = None
    pair_scale: float = 1.0
    tail_fraction: float = 0.25

    def describe(self) -> str:
        """Canonical text used for hashing and determinism checks."""
        parts = [
            "graph:\n" + serialize_edge_list(self.graph),
            f"coupling={self.coupling} parameter={self.parameter!r}",
            f"K={self.K} horizon={self.horizon} n={self.n} seed={self.seed}",
            f"record={self.record} anchor={self.anchor} tail={self.tail_fraction!r}",
            f"initial={self.initial!r}",
            "events=" + ";".join(f"{t}:{ev!r}" for t, ev in self.events),
        ]
        return "\n".join(parts)


def scenario_hash(scenario: Scenario) -> str:
    return hashlib.sha256(scenario.describe().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Segment:
    """A stretch of integer counts [t_start, t_end] with constant membership."""

    t_start: int
    t_end: int
    graph: DirectedGraph
    weights: WeightMatrix
    pair: PerronPair
    dynamics: tuple[NodeDynamics, ...]


@dataclass(frozen=True)
class TraceRecord:
    time: FractionalTime
    state: NetworkState


@dataclass
class SimulationTrace:
    scenario: Scenario
    records: list[TraceRecord]
    blended: list[tuple[int, np.ndarray]]
    events_applied: list[tuple[int, object]]
    segments: list[Segment]

    def segment_at(self, t: int) -> Segment:
        for seg in self.segments:
            if seg.t_start <= t <= seg.t_end:
                return seg
        raise KeyError(f"no segment covers t={t}")

    def state_at(self, t: int, k: int = 0) -> NetworkState:
        for rec in self.records:
            if rec.time.t == t and rec.time.k == k:
                return rec.state
        raise KeyError(f"no record at (t={t}, k={k})")

    def blended_at(self, t: int) -> np.ndarray:
        for tt, s in self.blended:
            if tt == t:
                return s
        raise KeyError(f"no blended value at t={t}")

    def integer_states(self):
        for rec in self.records:
            if rec.time.k == 0:
                yield rec.time.t, rec.state


def _build_weights(scenario: Scenario, g: DirectedGraph) -> WeightMatrix:
    if scenario.coupling == "metropolis_hastings":
        return metropolis_hastings(g, scenario.parameter)
    if scenario.coupling == "pagerank":
        return pagerank_coupling(g, scenario.parameter)
    if scenario.coupling == "average":
        return average_coupling(g, scenario.parameter)
    if scenario.coupling == "custom":
        if scenario.custom_entries is None:
            raise AssumptionViolation("custom coupling requires custom_entries")
        return custom_weights(np.asarray(scenario.custom_entries, dtype=float), g)
    raise AssumptionViolation(f"unknown coupling kind {scenario.coupling!r}")


def _configure(scenario: Scenario, g: DirectedGraph, t: int):
    """(Re)build weights, Perron pair, and dynamics; raise with time context."""
    try:
        if g.n == 0:
            raise AssumptionViolation("graph has no nodes")
        if not is_strongly_connected(g):
            raise AssumptionViolation("graph is not strongly connected")
        w = _build_weights(scenario, g)
        report = validate(w, g)
        if not report.ok:
            raise AssumptionViolation("weight validation failed: " + "; ".join(report.violations))
        pair = perron_pair(w)
        if scenario.pair_scale != 1.0:
            pair = pair.scaled(scenario.pair_scale)
        dynamics = tuple(scenario.dynamics_builder(g))
        if len(dynamics) != g.n:
            raise AssumptionViolation("dynamics builder returned a wrong-sized list")
    except (GraphError, WeightError, AssumptionViolation) as exc:
        raise AssumptionViolation(f"t={t}: {exc}") from exc
    return w, pair, dynamics


def _blended_seed(pair: PerronPair, dynamics, t: int, state: NetworkState) -> np.ndarray:
    acc = np.zeros(state.values.shape[1])
    for qi, d, x in zip(pair.q, dynamics, state.values):
        acc = acc + qi * d.update(t, x)
    return acc


def simulate(scenario: Scenario) -> SimulationTrace:
    """Run the scenario and return the full trace.

    Events apply at integer boundaries, before the node step of their round;
    the blended reference is re-seeded from the live states whenever the
    membership (and hence the Perron pair) changes.
    """
    if scenario.K < 1:
        raise AssumptionViolation("K must be >= 1")
    if scenario.horizon < 0:
        raise AssumptionViolation("horizon must be >= 0")
    if scenario.record not in ("all", "integer"):
        raise AssumptionViolation(f"unknown record granularity {scenario.record!r}")
    events = sorted(scenario.events, key=lambda ev: ev[0])
    if list(events) != list(scenario.events):
        raise AssumptionViolation("events must be sorted by time")
    for t_ev, _ in events:
        if not 1 <= t_ev <= scenario.horizon - 1:
            raise AssumptionViolation(f"event time {t_ev} outside [1, horizon-1]")

    g = scenario.graph
    K = scenario.K
    w, pair, dynamics = _configure(scenario, g, 0)
    bd = build_blended(dynamics, pair)

    rng = np.random.default_rng([scenario.seed, 0x1A17])
    state = NetworkState(g.nodes, scenario.initial.materialize(g.nodes, scenario.n, rng))

    records: list[TraceRecord] = []
    blended: list[tuple[int, np.ndarray]] = []
    events_applied: list[tuple[int, object]] = []
    segments: list[Segment] = []
    seg_start = 0

    protected = (scenario.anchor,) if scenario.anchor is not None else ()
    event_map: dict[int, list] = {}
    for t_ev, ev in events:
        event_map.setdefault(t_ev, []).append(ev)

    def record(t: int, k: int, st: NetworkState):
        if k > 0 and scenario.record != "all":
            return
        records.append(TraceRecord(FractionalTime(t, k, K), st))

    s_current: np.ndarray | None = None
    for t in range(scenario.horizon):
        reseed = t == 0
        if t in event_map:
            segments.append(Segment(seg_start, t - 1, g, w, pair, dynamics))
            seg_start = t
            for ev in event_map[t]:
                try:
                    g = mutate(g, ev, protected=protected)
                except GraphError as exc:
                    raise AssumptionViolation(f"t={t}: {exc}") from exc
                if isinstance(ev, Leave):
                    keep = [i for i, v in enumerate(state.ids) if v != ev.node]
                    state = NetworkState(g.nodes, state.values[keep])
                else:
                    values = np.zeros((g.n, scenario.n))
                    old = dict(zip(state.ids, state.values))
                    for i, v in enumerate(g.nodes):
                        if v in old:
                            values[i] = old[v]
                    state = NetworkState(g.nodes, values)
                events_applied.append((t, ev))
            w, pair, dynamics = _configure(scenario, g, t)
            bd = build_blended(dynamics, pair)
            reseed = True

        record(t, 0, state)
        # overflow is detected explicitly below, so intermediate warnings are noise
        with np.errstate(over="ignore", invalid="ignore"):
            if reseed:
                s_next = _blended_seed(pair, dynamics, t, state)
            else:
                s_next = blended_step(s_current, t, bd)
            blended.append((t + 1, s_next))

            out = node_step(state, t, dynamics)
            if K > 1:
                record(t, 1, out)
                for k in range(2, K):
                    out = coupling_step(out, w)
                    record(t, k, out)
                out = coupling_step(out, w)
        state = out
        s_current = s_next
        if not np.isfinite(state.values).all():
            raise SimulationError(f"state overflowed to non-finite values during round t={t}")

    record(scenario.horizon, 0, state)
    segments.append(Segment(seg_start, scenario.horizon, g, w, pair, dynamics))
    return SimulationTrace(scenario, records, blended, events_applied, segments)


def trace_to_csv(trace: SimulationTrace) -> str:
    """Trace CSV: one row per node per recorded (t, k); blended rows use node_id 's'."""
    sc = trace.scenario
    lines = [
        f"# scenario={scenario_hash(sc)}",
        f"# K={sc.K}",
        f"# coupling={sc.coupling}",
        f"# seed={sc.seed}",
        "t,k,node_id," + ",".join(f"x{d}" for d in range(sc.n)),
    ]
    blended = dict(trace.blended)
    for rec in trace.records:
        t, k = rec.time.t, rec.time.k
        for node_id, row in zip(rec.state.ids, rec.state.values):
            lines.append(f"{t},{k},{node_id}," + ",".join(repr(float(x)) for x in row))
        if k == 0 and t in blended:
            lines.append(f"{t},0,s," + ",".join(repr(float(x)) for x in blended[t]))
    return "\n".join(lines) + "\n"


def blended_to_csv(trace: SimulationTrace) -> str:
    sc = trace.scenario
    lines = [
        f"# scenario={scenario_hash(sc)}",
        "t," + ",".join(f"x{d}" for d in range(sc.n)),
    ]
    for t, s in trace.blended:
        lines.append(f"{t}," + ",".join(repr(float(x)) for x in np.atleast_1d(s)))
    return "\n".join(lines) + "\n"


def rebuild_for_k(scenario: Scenario, K: int) -> Scenario:
    """Same scenario with a different sub-step count."""
    return replace(scenario, K=K)
