"""Scenario-driven command line: validate, run, kmin, batch.

Configs are flat key = value sections (configparser syntax) so that every run
is archivable and exactly reproducible.  All randomness flows through the
config seed; reruns produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import apps
from .analysis import (
    AnalysisError,
    contraction_affine,
    error_report,
    estimate_sup_f,
    family_bound,
    family_lipschitz,
    fraction_identities,
    kmin_analytic,
    kmin_constants,
    kmin_corollary,
    kmin_empirical,
)
from .graph import DirectedGraph, GraphError, Join, Leave, generate_connected, parse_edge_list
from .simulator import (
    AssumptionViolation,
    Scenario,
    SimulationError,
    SimulationTrace,
    affine_dynamics,
    blended_to_csv,
    build_blended,
    initial_box,
    initial_constant,
    initial_explicit,
    initial_zeros,
    scenario_hash,
    simulate,
    trace_to_csv,
)
from .spectral import SpectralError, decompose, perron_pair
from .weights import WeightError, validate as validate_weights

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2

_APP_COUPLING = {"netsize": "metropolis_hastings", "pagerank": "pagerank", "degseq": "average"}


class ConfigError(ValueError):
    """Unparseable or inconsistent scenario configuration."""


def _parse_initial(text: str):
    parts = text.split()
    kind = parts[0] if parts else ""
    try:
        if kind == "zeros" and len(parts) == 1:
            return initial_zeros()
        if kind == "constant" and len(parts) == 2:
            return initial_constant(float(parts[1]))
        if kind == "box" and len(parts) == 3:
            return initial_box(float(parts[1]), float(parts[2]))
        if kind == "explicit" and len(parts) > 1:
            mapping = {}
            for tok in parts[1:]:
                node, value = tok.split(":")
                mapping[int(node)] = float(value)
            return initial_explicit(mapping)
    except ValueError as exc:
        raise ConfigError(f"bad initial spec {text!r}: {exc}") from exc
    raise ConfigError(f"bad initial spec {text!r}")


def _parse_events(script: str):
    events = []
    for lineno, raw in enumerate(script.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        try:
            t = int(parts[0])
            action = parts[1]
            node = int(parts[2])
            if action == "leave" and len(parts) == 3:
                events.append((t, Leave(node)))
                continue
            if action == "join":
                edges = []
                for tok in parts[3:]:
                    j, i = tok.split("-")
                    edges.append((int(j), int(i)))
                events.append((t, Join(node, tuple(edges))))
                continue
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"events line {lineno}: cannot parse {line!r}: {exc}") from exc
        raise ConfigError(f"events line {lineno}: unknown action in {line!r}")
    return tuple(events)


def _require(cp: configparser.ConfigParser, section: str, option: str) -> str:
    if not cp.has_option(section, option):
        raise ConfigError(f"missing [{section}] {option}")
    return cp.get(section, option)


def _open_interval(name: str, value: float) -> float:
    if not 0.0 < value < 1.0:
        raise ConfigError(f"{name} = {value} outside the open interval (0, 1)")
    return value


class LoadedScenario:
    """Scenario plus the app/config metadata the commands need."""

    def __init__(self, scenario: Scenario, app_kind: str, app_cfg, out_dir: Path, init_radius: float):
        self.scenario = scenario
        self.app_kind = app_kind
        self.app_cfg = app_cfg
        self.out_dir = out_dir
        self.init_radius = init_radius


def load_scenario(path: str | Path, seed_override: int | None = None, out_override: str | None = None) -> LoadedScenario:
    path = Path(path)
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    seed = seed_override if seed_override is not None else cp.getint("simulation", "seed", fallback=0)

    if cp.has_option("graph", "file"):
        graph_path = (path.parent / cp.get("graph", "file")).resolve()
        try:
            graph = parse_edge_list(graph_path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read graph file {graph_path}: {exc}") from exc
    else:
        n = int(_require(cp, "graph", "nodes"))
        p = float(_require(cp, "graph", "edge_probability"))
        undirected = cp.getboolean("graph", "undirected", fallback=True)
        graph = generate_connected(n, p, seed=seed, undirected=undirected)

    kind = _require(cp, "coupling", "kind")
    parameter = float(_require(cp, "coupling", "parameter"))
    _open_interval("coupling parameter", parameter)

    app_kind = cp.get("app", "kind", fallback="custom")
    if app_kind in _APP_COUPLING and kind != _APP_COUPLING[app_kind]:
        raise ConfigError(f"app {app_kind!r} requires coupling {_APP_COUPLING[app_kind]!r}, got {kind!r}")

    K = cp.getint("simulation", "K", fallback=1)
    horizon = cp.getint("simulation", "horizon", fallback=1)
    if K < 1 or horizon < 1:
        raise ConfigError("K and horizon must be at least 1")
    record = cp.get("simulation", "record", fallback="all")
    tail_fraction = cp.getfloat("simulation", "tail_fraction", fallback=0.25)
    initial = _parse_initial(cp.get("simulation", "initial", fallback="zeros"))
    events = _parse_events(cp.get("events", "script", fallback=""))
    if list(events) != sorted(events, key=lambda ev: ev[0]):
        raise ConfigError("events must be sorted by time")

    anchor = None
    app_cfg = None
    if app_kind == "netsize":
        mu = _open_interval("mu", parameter)
        anchor_opt = cp.getint("app", "anchor", fallback=0)
        app_cfg = apps.NetSizeConfig(mu=mu, anchor=anchor_opt or None)
        anchor = app_cfg.resolve_anchor(graph)
        builder = lambda g, cfg=app_cfg: apps.netsize_dynamics(cfg, g)
    elif app_kind == "pagerank":
        nu = _open_interval("nu", cp.getfloat("app", "nu", fallback=0.5))
        n_agents = cp.getint("app", "n", fallback=0)
        if n_agents < 1:
            raise ConfigError("[app] n (network size) is required for pagerank; chain it from a netsize run")
        app_cfg = apps.PageRankConfig(n_agents=n_agents, nu=nu, m=parameter)
        builder = lambda g, cfg=app_cfg: apps.pagerank_dynamics(cfg, g)
    elif app_kind == "degseq":
        ids = ()
        if cp.has_option("app", "ids"):
            pairs = []
            for tok in cp.get("app", "ids").split():
                node, ident = tok.split(":")
                pairs.append((int(node), int(ident)))
            ids = tuple(pairs)
        app_cfg = apps.DegSeqConfig(
            theta=parameter,
            ids=ids,
            n_agents=cp.getint("app", "n", fallback=0) or None,
            arithmetic=cp.get("app", "arithmetic", fallback="floating"),
        )
        builder = lambda g, cfg=app_cfg: apps.degseq_dynamics(cfg, g)
    elif app_kind == "custom":
        if not cp.has_section("dynamics"):
            raise ConfigError("custom app requires a [dynamics] section (node = a b)")
        coeffs = {}
        for key, value in cp.items("dynamics"):
            parts = value.replace(",", " ").split()
            if len(parts) != 2:
                raise ConfigError(f"[dynamics] {key}: expected 'a b', got {value!r}")
            coeffs[int(key)] = (float(parts[0]), float(parts[1]))

        def builder(g, table=coeffs):
            missing = [v for v in g.nodes if v not in table]
            if missing:
                raise AssumptionViolation(f"no affine coefficients for nodes {missing}")
            return [affine_dynamics(*table[v]) for v in g.nodes]
    else:
        raise ConfigError(f"unknown app kind {app_kind!r}")

    scenario = Scenario(
        graph=graph,
        coupling=kind,
        parameter=parameter,
        dynamics_builder=builder,
        K=K,
        horizon=horizon,
        initial=initial,
        events=events,
        record=record,
        seed=seed,
        anchor=anchor,
        tail_fraction=tail_fraction,
    )
    out_dir = Path(out_override) if out_override else Path(cp.get("output", "directory", fallback="out"))
    if not out_dir.is_absolute():
        out_dir = path.parent / out_dir

    if initial.kind == "zeros":
        init_radius = 0.0
    elif initial.kind == "constant":
        init_radius = abs(initial.constant)
    elif initial.kind == "box":
        init_radius = max(abs(initial.low), abs(initial.high))
    else:
        init_radius = max((float(np.linalg.norm(v)) for _, v in initial.values), default=0.0)
    return LoadedScenario(scenario, app_kind, app_cfg, out_dir, init_radius)


def _certify(loaded: LoadedScenario):
    """Weights, Perron pair, decomposition, and the blended contraction certificate."""
    sc = loaded.scenario
    from .simulator import _build_weights  # shared constructor dispatch

    w = _build_weights(sc, sc.graph)
    report = validate_weights(w, sc.graph)
    pair = perron_pair(w)
    dec = decompose(w, pair)
    dynamics = tuple(sc.dynamics_builder(sc.graph))
    blended = build_blended(dynamics, pair)
    if blended.affine is None:
        raise AnalysisError("non-affine dynamics need a sampled certificate; not configured here")
    cert = contraction_affine(blended.affine[0])
    return w, report, pair, dec, dynamics, blended, cert


def cmd_validate(loaded: LoadedScenario) -> int:
    sc = loaded.scenario
    w, report, pair, dec, dynamics, blended, cert = _certify(loaded)
    checks = {
        "graph_nodes": sc.graph.n,
        "strongly_connected": True,  # _certify would have raised otherwise
        "weight_violations": list(report.violations),
        "spectral_radius": report.spectral_radius,
        "lambda2_mag": pair.lambda2_mag,
        "lambdaN_mag": pair.lambdaN_mag,
        "gamma": cert.gamma,
        "contractive": cert.contractive,
    }
    print(json.dumps(checks, indent=2, sort_keys=True))
    if report.violations or not cert.contractive:
        return EXIT_INVALID
    return EXIT_OK


def _results_block(loaded: LoadedScenario, trace: SimulationTrace):
    results = {"app": loaded.app_kind, "scenario": scenario_hash(loaded.scenario)}
    if loaded.app_kind == "netsize":
        est = apps.netsize_estimate(trace)
        results["estimates"] = {str(k): v for k, v in sorted(est.per_node.items())}
        results["tail_error"] = est.tail_error
        results["reliable"] = est.reliable
    elif loaded.app_kind == "pagerank":
        results["scores"] = {str(k): v for k, v in sorted(apps.pagerank_scores(trace).items())}
    elif loaded.app_kind == "degseq":
        seqs = apps.degseq_estimate(trace, loaded.app_cfg)
        results["sequences"] = {str(k): list(v) for k, v in sorted(seqs.items())}
        results["fixed_point"] = apps.degseq_fixed_point(loaded.app_cfg, trace.segments[-1].graph)
    results["events_applied"] = [f"{t}:{ev!r}" for t, ev in trace.events_applied]
    return results


def cmd_run(loaded: LoadedScenario) -> int:
    status = cmd_validate(loaded)
    if status != EXIT_OK:
        return status
    sc = loaded.scenario
    trace = simulate(sc)

    seg = trace.segments[-1]
    pair = seg.pair
    dec = decompose(seg.weights, pair)
    blended = build_blended(seg.dynamics, pair)
    cert = contraction_affine(blended.affine[0])
    rep = error_report(trace, pair, dec, cert)
    frac = fraction_identities(trace, dec, seg)

    out = loaded.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.csv").write_text(trace_to_csv(trace))
    (out / "blended.csv").write_text(blended_to_csv(trace))
    (out / "results.json").write_text(json.dumps(_results_block(loaded, trace), indent=2, sort_keys=True) + "\n")

    lyap_excess = max((lhs - rhs for _, lhs, rhs in rep.lyapunov_steps), default=0.0)
    report = {
        "scenario": scenario_hash(sc),
        "window": list(rep.window),
        "tail_errors": {str(k): v for k, v in sorted(rep.tail_errors.items())},
        "max_tail_error": rep.max_tail_error,
        "gamma": rep.gamma,
        "eta": rep.eta,
        "evidence_only": rep.evidence_only,
        "lyapunov_max_step_excess": lyap_excess,
        "lyapunov_ok": lyap_excess <= 0.0,
        "fraction_xi1_dev": frac.max_xi1_dev,
        "fraction_xi1_ok": frac.max_xi1_dev <= 1e-12,
        "fraction_decay_excess": frac.max_decay_excess,
        "fraction_decay_ok": frac.max_decay_excess <= 1e-9,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    lines = ["t,V,dV,step_bound"]
    step_by_t = {t: (lhs, rhs) for t, lhs, rhs in rep.lyapunov_steps}
    for t, v in rep.lyapunov:
        lhs, rhs = step_by_t.get(t, (float("nan"), float("nan")))
        lines.append(f"{t},{v!r},{lhs!r},{rhs!r}")
    (out / "lyapunov.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote trace, blended, results, report to {out}")
    return EXIT_OK


def cmd_kmin(loaded: LoadedScenario, eps: float, mode: str) -> int:
    sc = loaded.scenario
    w, report, pair, dec, dynamics, blended, cert = _certify(loaded)
    if not cert.contractive:
        raise AnalysisError("scenario is not contractive; no sub-step count exists")
    lip = family_lipschitz(dynamics)
    bound_fn = family_bound(dynamics)
    payload = {"mode": mode, "eps": eps, "gamma": cert.gamma, "lambda2_mag": pair.lambda2_mag}
    if mode == "analytic":
        consts = kmin_constants(dec, cert, lip, bound_fn)
        payload["kmin"] = kmin_analytic(consts, eps, sc.graph.n, bound_fn)
        payload["eta"] = consts.eta
        payload["M1"] = consts.M1
        payload["Ms"] = consts.Ms
    elif mode == "corollary":
        sup_f = estimate_sup_f(dynamics, dec, cert, eps, loaded.init_radius, seed=sc.seed)
        result = kmin_corollary(dec, cert, eps, lip, sup_f.analytic)
        payload["kmin"] = result.kmin
        payload["eps0"] = result.eps0
        payload["delta"] = result.delta
        payload["sup_f"] = sup_f.analytic
        payload["sup_f_sampled"] = sup_f.sampled
    elif mode == "empirical":
        payload["kmin"] = kmin_empirical(sc, eps)
    else:
        raise ConfigError(f"unknown kmin mode {mode!r}")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_batch(config_paths, seed_override, out_override) -> int:
    base = Path(out_override) if out_override else None
    worst = EXIT_OK
    for cfg_path in config_paths:
        out = str(base / Path(cfg_path).stem) if base else None
        loaded = load_scenario(cfg_path, seed_override=seed_override, out_override=out)
        status = cmd_run(loaded)
        worst = max(worst, status)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blendnet", description="Multi-step coupling simulator and analyzer")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p_val = sub.add_parser("validate", help="check graph, weights, and contraction")
    common(p_val)
    p_run = sub.add_parser("run", help="simulate and write trace/report files")
    common(p_run)
    p_kmin = sub.add_parser("kmin", help="compute a sufficient sub-step count")
    common(p_kmin)
    p_kmin.add_argument("--eps", type=float, required=True)
    p_kmin.add_argument("--mode", choices=("analytic", "corollary", "empirical"), default="empirical")
    p_batch = sub.add_parser("batch", help="run several configs")
    p_batch.add_argument("configs", nargs="+")
    p_batch.add_argument("--out", default=None)
    p_batch.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BLENDNET_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        if args.command == "batch":
            return cmd_batch(args.configs, args.seed, args.out)
        loaded = load_scenario(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "validate":
            return cmd_validate(loaded)
        if args.command == "run":
            return cmd_run(loaded)
        if args.command == "kmin":
            return cmd_kmin(loaded, args.eps, args.mode)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, GraphError, WeightError, AssumptionViolation, AnalysisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SpectralError, SimulationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
