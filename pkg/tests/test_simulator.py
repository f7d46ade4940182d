import numpy as np
import pytest

from blendnet.graph import DirectedGraph, Join, Leave, generate_connected
from blendnet.simulator import (
    AssumptionViolation,
    FractionalTime,
    NetworkState,
    Scenario,
    SimulationError,
    affine_dynamics,
    blended_step,
    build_blended,
    coupling_step,
    initial_constant,
    initial_explicit,
    macro_step,
    node_step,
    scenario_hash,
    simulate,
    trace_to_csv,
    transform,
    untransform,
)
from blendnet.spectral import decompose, perron_pair
from blendnet.weights import metropolis_hastings, pagerank_coupling


def upath(n):
    return DirectedGraph.build([(i, i + 1) for i in range(1, n)], undirected=True)


def netsize_builder(g):
    anchor = min(g.nodes)
    return [
        affine_dynamics(0.0, 1.0) if v == anchor else affine_dynamics(1.0, 1.0)
        for v in g.nodes
    ]


def netsize_scenario(g, K, horizon, **kw):
    return Scenario(
        graph=g,
        coupling="metropolis_hastings",
        parameter=0.5,
        dynamics_builder=netsize_builder,
        K=K,
        horizon=horizon,
        anchor=min(g.nodes),
        **kw,
    )


# -- fractional time ---------------------------------------------------------


def test_fractional_time_sequence():
    t = FractionalTime(0, 0, 3)
    seen = [t.key()]
    for _ in range(5):
        t = t.successor()
        seen.append(t.key())
    assert seen == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_fractional_time_bounds():
    with pytest.raises(ValueError):
        FractionalTime(0, 3, 3)
    with pytest.raises(ValueError):
        FractionalTime(0, 0, 0)
    assert FractionalTime(2, 1, 4).as_float() == pytest.approx(2.25)


# -- single steps -------------------------------------------------------------


def test_node_step_identity():
    state = NetworkState((1, 2), np.array([[5.0], [7.0]]))
    ident = [affine_dynamics(1.0, 0.0)] * 2
    assert np.array_equal(node_step(state, 0, ident).values, state.values)


def test_node_step_netsize_values():
    state = NetworkState((1, 2), np.array([[5.0], [5.0]]))
    out = node_step(state, 0, netsize_builder(upath(2)))
    assert out.values[:, 0].tolist() == [1.0, 6.0]


def test_node_step_zero_map():
    state = NetworkState((1, 2), np.array([[3.0], [4.0]]))
    out = node_step(state, 0, [affine_dynamics(0.0, 0.0)] * 2)
    assert np.array_equal(out.values, np.zeros((2, 1)))


def test_node_step_count_mismatch():
    state = NetworkState((1, 2), np.zeros((2, 1)))
    with pytest.raises(SimulationError):
        node_step(state, 0, [affine_dynamics(1.0, 0.0)])


def test_coupling_fixed_point_on_consensus_direction():
    g = generate_connected(6, 0.5, seed=1)
    w = metropolis_hastings(g, 0.4)
    pair = perron_pair(w)
    state = NetworkState(g.nodes, np.outer(pair.p, [2.5, -1.0]))
    out = coupling_step(state, w)
    assert np.max(np.abs(out.values - state.values)) < 1e-14


def test_coupling_preserves_sum_for_doubly_stochastic():
    g = generate_connected(5, 0.6, seed=2)
    w = metropolis_hastings(g, 0.3)
    rng = np.random.default_rng(0)
    state = NetworkState(g.nodes, rng.normal(size=(5, 1)))
    out = coupling_step(state, w)
    assert out.values.sum() == pytest.approx(state.values.sum(), abs=1e-12)


def test_repeated_coupling_matches_matrix_power_oracle():
    g = generate_connected(6, 0.5, seed=3, undirected=False)
    w = pagerank_coupling(g, 0.15)
    rng = np.random.default_rng(1)
    state = NetworkState(g.nodes, rng.normal(size=(6, 2)))
    out = state
    reps = 7
    for _ in range(reps):
        out = coupling_step(out, w)
    oracle = np.linalg.matrix_power(w.entries, reps) @ state.values
    assert np.max(np.abs(out.values - oracle)) < 1e-12


def test_macro_step_k1_is_node_step():
    g = upath(3)
    state = NetworkState(g.nodes, np.array([[1.0], [2.0], [3.0]]))
    w = metropolis_hastings(g, 0.5)
    dyn = netsize_builder(g)
    a = macro_step(state, 0, dyn, w, 1)
    b = node_step(state, 0, dyn)
    assert np.array_equal(a.values, b.values)


def test_macro_step_matches_dense_oracle():
    g = generate_connected(7, 0.5, seed=5)
    w = metropolis_hastings(g, 0.4)
    rng = np.random.default_rng(2)
    dyn = [affine_dynamics(rng.uniform(-1, 1), rng.uniform(-1, 1)) for _ in range(7)]
    state = NetworkState(g.nodes, rng.normal(size=(7, 1)))
    K = 6
    out = macro_step(state, 3, dyn, w, K)
    f = np.array([d.update(3, x) for d, x in zip(dyn, state.values)])
    oracle = np.linalg.matrix_power(w.entries, K - 1) @ f
    assert np.max(np.abs(out.values - oracle)) < 1e-12


def test_macro_step_rejects_k0():
    g = upath(3)
    state = NetworkState(g.nodes, np.zeros((3, 1)))
    with pytest.raises(SimulationError):
        macro_step(state, 0, netsize_builder(g), metropolis_hastings(g, 0.5), 0)


# -- blended map --------------------------------------------------------------


def test_blended_netsize_closed_form():
    g = generate_connected(6, 0.6, seed=7)
    pair = perron_pair(metropolis_hastings(g, 0.5))
    bd = build_blended(netsize_builder(g), pair)
    for s in (-3.0, 0.0, 2.5, 11.0):
        expect = (1 - 1 / 6) * s + 1
        assert blended_step(np.array([s]), 0, bd)[0] == pytest.approx(expect, abs=1e-12)
    a_s, b_s = bd.affine
    assert a_s[0, 0] == pytest.approx(1 - 1 / 6, abs=1e-12)
    assert b_s[0] == pytest.approx(1.0, abs=1e-12)


def test_blended_pagerank_closed_form():
    g = generate_connected(5, 0.5, seed=8, undirected=False)
    pair = perron_pair(pagerank_coupling(g, 0.15))
    nu = 0.7
    dyn = [affine_dynamics(nu, (1 - nu) / 5) for _ in range(5)]
    bd = build_blended(dyn, pair)
    for s in (0.0, 0.4, 1.0, -2.0):
        assert blended_step(np.array([s]), 0, bd)[0] == pytest.approx(nu * s + (1 - nu), abs=1e-12)


def test_blended_degree_sequence_closed_form():
    g = upath(3)
    from blendnet.weights import average_coupling

    pair = perron_pair(average_coupling(g, 0.5))
    n, ids = 3, {1: 2, 2: 3, 3: 4}
    dyn = [affine_dynamics(1 - 1 / g.in_degree(v), float(n ** ids[v])) for v in g.nodes]
    bd = build_blended(dyn, pair)
    d_sum = 4
    drive = sum(g.in_degree(v) * n ** ids[v] for v in g.nodes) / d_sum
    for s in (0.0, 10.0, 48.0):
        expect = (1 - n / d_sum) * s + drive
        assert blended_step(np.array([s]), 0, bd)[0] == pytest.approx(expect, rel=1e-12)


# -- coordinate transform -----------------------------------------------------


def test_transform_consensus_direction():
    g = generate_connected(6, 0.5, seed=10)
    w = metropolis_hastings(g, 0.5)
    pair = perron_pair(w)
    dec = decompose(w, pair)
    c = np.array([3.0, -1.5])
    ts = transform(NetworkState(g.nodes, np.outer(pair.p, c)), dec)
    assert np.allclose(ts.xi1, c, atol=1e-12)
    assert np.max(np.abs(ts.xitilde)) < 1e-12


def test_transform_complement_direction():
    g = generate_connected(6, 0.5, seed=10)
    w = metropolis_hastings(g, 0.5)
    dec = decompose(w, perron_pair(w))
    rng = np.random.default_rng(3)
    v = rng.normal(size=(5, 1))
    ts = transform(NetworkState(g.nodes, dec.R @ v), dec)
    assert np.max(np.abs(ts.xi1)) < 1e-12
    assert np.allclose(ts.xitilde, v, atol=1e-12)


def test_transform_roundtrip_random():
    g = generate_connected(8, 0.4, seed=12, undirected=False)
    w = pagerank_coupling(g, 0.15)
    dec = decompose(w, perron_pair(w))
    rng = np.random.default_rng(4)
    state = NetworkState(g.nodes, rng.normal(size=(8, 3)))
    back = untransform(transform(state, dec), dec, g.nodes)
    assert np.max(np.abs(back.values - state.values)) < 1e-10


# -- full simulation ----------------------------------------------------------


def test_zero_horizon_trace():
    g = upath(3)
    tr = simulate(netsize_scenario(g, K=4, horizon=0))
    assert len(tr.records) == 1
    assert tr.records[0].time.key() == (0, 0)
    assert tr.blended == []


def test_trace_time_sequence_and_step_structure():
    g = upath(3)
    K = 4
    tr = simulate(netsize_scenario(g, K=K, horizon=2))
    keys = [rec.time.key() for rec in tr.records]
    assert keys == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3), (2, 0)]
    assert keys == sorted(keys)
    # the k=1 record is the node-step image and each later fraction is one coupling
    w = metropolis_hastings(g, 0.5)
    dyn = netsize_builder(g)
    by_key = {rec.time.key(): rec.state for rec in tr.records}
    for t in (0, 1):
        expect = node_step(by_key[(t, 0)], t, dyn)
        assert np.array_equal(by_key[(t, 1)].values, expect.values)
        for k in range(1, K - 1):
            expect = coupling_step(by_key[(t, k)], w)
            assert np.array_equal(by_key[(t, k + 1)].values, expect.values)
        assert np.array_equal(
            by_key[(t + 1, 0)].values, coupling_step(by_key[(t, K - 1)], w).values
        )


def test_integer_granularity_records_only_k0():
    g = upath(3)
    tr = simulate(netsize_scenario(g, K=5, horizon=3, record="integer"))
    assert all(rec.time.k == 0 for rec in tr.records)
    assert len(tr.records) == 4


def test_blended_seed_matches_corollary_convention():
    g = upath(4)
    sc = netsize_scenario(g, K=3, horizon=5, initial=initial_constant(2.0))
    tr = simulate(sc)
    pair = tr.segments[0].pair
    dyn = tr.segments[0].dynamics
    x0 = tr.state_at(0, 0)
    expect = sum(
        qi * d.update(0, x) for qi, d, x in zip(pair.q, dyn, x0.values)
    )
    assert np.allclose(tr.blended_at(1), expect, atol=1e-14)


def test_identical_contractive_dynamics_converge_to_scaled_reference():
    # identical f_i = 0.5 x + 1 under a row-stochastic coupling: the affine
    # macro map has fixed point (b / (1 - a)) * ones = p s*, for any K
    g = generate_connected(6, 0.5, seed=13)
    sc = Scenario(
        graph=g,
        coupling="metropolis_hastings",
        parameter=0.5,
        dynamics_builder=lambda gr: [affine_dynamics(0.5, 1.0) for _ in gr.nodes],
        K=3,
        horizon=80,
        record="integer",
    )
    tr = simulate(sc)
    final = tr.records[-1].state
    assert np.max(np.abs(final.values - 2.0)) < 1e-12
    assert tr.blended_at(80)[0] == pytest.approx(2.0, abs=1e-12)


def test_deterministic_replay_bit_identical():
    g = generate_connected(7, 0.4, seed=20)
    sc = netsize_scenario(g, K=6, horizon=25, seed=123)
    t1 = simulate(sc)
    t2 = simulate(sc)
    assert trace_to_csv(t1) == trace_to_csv(t2)
    for r1, r2 in zip(t1.records, t2.records):
        assert np.array_equal(r1.state.values, r2.state.values)


def test_scenario_hash_stable_and_sensitive():
    g = upath(4)
    a = netsize_scenario(g, K=3, horizon=5)
    b = netsize_scenario(g, K=4, horizon=5)
    assert scenario_hash(a) == scenario_hash(netsize_scenario(g, K=3, horizon=5))
    assert scenario_hash(a) != scenario_hash(b)


def test_pair_scale_invariance():
    # internal eigenvector rescaling must not move node trajectories, and the
    # per-node prediction p_i s[t] must agree as well
    from dataclasses import replace

    g = generate_connected(6, 0.5, seed=21)
    base = netsize_scenario(g, K=8, horizon=30, record="integer")
    scaled = replace(base, pair_scale=7.0)
    t1, t2 = simulate(base), simulate(scaled)
    for r1, r2 in zip(t1.records, t2.records):
        assert np.array_equal(r1.state.values, r2.state.values)
    p1, p2 = t1.segments[0].pair, t2.segments[0].pair
    for t in range(1, 31):
        pred1 = np.outer(p1.p, t1.blended_at(t))
        pred2 = np.outer(p2.p, t2.blended_at(t))
        assert np.max(np.abs(pred1 - pred2)) < 1e-12


def test_explicit_initial_states():
    g = upath(3)
    sc = netsize_scenario(g, K=2, horizon=1, initial=initial_explicit({1: 4.0, 2: 5.0, 3: 6.0}))
    tr = simulate(sc)
    assert tr.state_at(0, 0).values[:, 0].tolist() == [4.0, 5.0, 6.0]


def test_leave_event_shrinks_network_and_reseeds():
    g = generate_connected(6, 0.6, seed=22)
    sc = netsize_scenario(g, K=10, horizon=30, record="integer", events=((5, Leave(4)),))
    tr = simulate(sc)
    assert tr.events_applied == [(5, Leave(4))]
    assert [seg.graph.n for seg in tr.segments] == [6, 5]
    assert tr.state_at(5, 0).ids == tuple(v for v in g.nodes if v != 4)
    # reference re-seeded from live states over the new membership
    seg = tr.segments[1]
    x5 = tr.state_at(5, 0)
    expect = sum(qi * d.update(5, x) for qi, d, x in zip(seg.pair.q, seg.dynamics, x5.values))
    assert np.allclose(tr.blended_at(6), expect, atol=1e-14)


def test_join_event_adds_node_with_zero_state():
    g = upath(3)
    sc = netsize_scenario(
        g, K=6, horizon=20, record="integer",
        initial=initial_constant(1.0),
        events=((4, Join(4, ((3, 4),))),),
    )
    tr = simulate(sc)
    st = tr.state_at(4, 0)
    assert st.ids == (1, 2, 3, 4)
    assert st.values[3, 0] == 0.0
    assert st.values[0, 0] != 0.0


def test_anchor_leave_rejected():
    g = upath(4)
    sc = netsize_scenario(g, K=4, horizon=10, events=((3, Leave(1)),))
    with pytest.raises(AssumptionViolation, match="t=3"):
        simulate(sc)


def test_disconnecting_leave_reports_time():
    g = upath(4)  # removing node 2 disconnects {1} from {3, 4}
    sc = netsize_scenario(g, K=4, horizon=10, events=((2, Leave(2)),))
    with pytest.raises(AssumptionViolation, match="t=2"):
        simulate(sc)


def test_events_must_be_sorted_and_in_range():
    g = upath(4)
    with pytest.raises(AssumptionViolation):
        simulate(netsize_scenario(g, K=2, horizon=10, events=((5, Leave(3)), (2, Leave(4)))))
    with pytest.raises(AssumptionViolation):
        simulate(netsize_scenario(g, K=2, horizon=10, events=((10, Leave(3)),)))


def test_trace_csv_contains_blended_rows_and_header():
    g = upath(3)
    tr = simulate(netsize_scenario(g, K=2, horizon=3, record="integer"))
    text = trace_to_csv(tr)
    lines = text.splitlines()
    assert lines[0].startswith("# scenario=")
    assert "# K=2" in lines
    assert "# coupling=metropolis_hastings" in lines
    assert "t,k,node_id,x0" in lines
    assert any(line.split(",")[2] == "s" for line in lines if not line.startswith("#") and "," in line)


def test_vector_states_simulate():
    # two-dimensional node states: a rotation-damped map blended over the graph
    g = generate_connected(5, 0.6, seed=31)
    a = 0.6 * np.array([[np.cos(0.3), -np.sin(0.3)], [np.sin(0.3), np.cos(0.3)]])
    b = np.array([1.0, -0.5])
    sc = Scenario(
        graph=g,
        coupling="metropolis_hastings",
        parameter=0.5,
        dynamics_builder=lambda gr: [affine_dynamics(a, b) for _ in gr.nodes],
        K=6,
        horizon=60,
        record="integer",
        n=2,
    )
    tr = simulate(sc)
    fixed = np.linalg.solve(np.eye(2) - a, b)
    final = tr.records[-1].state
    assert final.values.shape == (5, 2)
    assert np.max(np.abs(final.values - fixed)) < 1e-10
    assert np.allclose(tr.blended_at(60), fixed, atol=1e-10)


def test_fraction_count_identities_on_trace():
    # the q-projection is frozen across coupling steps, and the complement
    # contracts at least as fast as the subdominant eigenvalue overall
    g = generate_connected(8, 0.4, seed=30, undirected=False)
    w = pagerank_coupling(g, 0.15)
    pair = perron_pair(w)
    dec = decompose(w, pair)
    sc = Scenario(
        graph=g,
        coupling="pagerank",
        parameter=0.15,
        dynamics_builder=lambda gr: [affine_dynamics(0.5, 0.0625) for _ in gr.nodes],
        K=7,
        horizon=12,
    )
    tr = simulate(sc)
    by_key = {rec.time.key(): rec.state for rec in tr.records}
    lam = np.zeros((7, 7))
    for t in range(12):
        nxt = transform(by_key[(t + 1, 0)], dec)
        for k in range(1, 7):
            ts = transform(by_key[(t, k)], dec)
            scale = max(1.0, float(np.max(np.abs(nxt.xi1))))
            assert np.max(np.abs(ts.xi1 - nxt.xi1)) <= 1e-12 * scale
            # exact evolution: xitilde[t+1] = Lam^(K-k) xitilde[t_k]
            power = np.linalg.matrix_power(dec.Lam, 7 - k)
            assert np.max(np.abs(power @ ts.xitilde - nxt.xitilde)) < 1e-10
