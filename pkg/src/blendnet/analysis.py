"""Contraction certificates, sub-step count bounds, and trace error reports.

The blended map is contractive when its Jacobian J satisfies J' H^2 J <= g H^2
for a positive definite H and g < 1; everything downstream (Lyapunov tracking,
analytic and finite-time sub-step counts, tail error measurement) is built on
that certificate plus the spectral decomposition of the coupling matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .simulator import (
    NodeDynamics,
    Scenario,
    Segment,
    SimulationTrace,
    simulate,
    transform,
)
from .spectral import SpectralDecomposition


class AnalysisError(ValueError):
    """Raised when a certificate or bound cannot be produced."""


# ---------------------------------------------------------------------------
# contraction certificates


@dataclass(frozen=True)
class ContractionCertificate:
    """Positive definite H and rate gamma with ||H(f(s2)-f(s1))|| <= sqrt(gamma)||H(s2-s1)||.

    ``kind`` is "analytic" for affine maps (a proof) or "sampled" for grid
    evidence; sampled certificates are flagged ``evidence_only`` everywhere.
    """

    H: np.ndarray
    gamma: float
    kind: str

    def __post_init__(self):
        h = np.atleast_2d(np.array(self.H, dtype=float))
        h.setflags(write=False)
        object.__setattr__(self, "H", h)

    @property
    def sqrt_gamma(self) -> float:
        return math.sqrt(self.gamma)

    @property
    def contractive(self) -> bool:
        return self.gamma < 1.0

    @property
    def evidence_only(self) -> bool:
        return self.kind == "sampled"

    def h_inv(self) -> np.ndarray:
        return np.linalg.inv(self.H)


def contraction_affine(a, tol: float = 1e-9) -> ContractionCertificate:
    """Certificate for an affine map with linear part ``a``.

    For normal ``a`` the identity H already achieves gamma equal to the squared
    spectral radius; otherwise candidate H come from discrete Lyapunov solves
    at a grid of target rates and the smallest achieved gamma wins.  The
    returned gamma carries a tiny safety inflation so the certified inequality
    holds under floating-point evaluation.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(a)))) if n else 0.0
    if rho >= 1.0:
        raise AnalysisError(f"linear part has spectral radius {rho:.6g} >= 1; map is not contractive")
    opnorm = float(np.linalg.norm(a, 2)) if n else 0.0
    if opnorm == 0.0:
        return ContractionCertificate(np.eye(max(n, 1)), float(tol), "analytic")
    best_h = np.eye(n)
    best_gamma = opnorm**2
    if best_gamma > rho**2 * (1.0 + 1e-9) + 1e-15:
        # non-normal linear part: search similarity transforms
        lo = rho**2 * 1.02 + 1e-14
        hi = max(min(0.999999, opnorm**2), lo * (1.0 + 1e-6))
        for beta in np.geomspace(lo, hi, num=12):
            b = a / math.sqrt(beta)
            try:
                with np.errstate(all="ignore"):
                    p = scipy.linalg.solve_discrete_lyapunov(b.T, np.eye(n))
            except Exception:
                continue
            p = (p + p.T) / 2.0
            if not np.isfinite(p).all():
                continue
            vals, vecs = np.linalg.eigh(p)
            if vals.min() <= 0:
                continue
            h = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
            h_inv = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
            achieved = float(np.linalg.norm(h @ a @ h_inv, 2)) ** 2
            if math.isfinite(achieved) and achieved < best_gamma:
                best_gamma = achieved
                best_h = h
    gamma = best_gamma * (1.0 + 1e-9)
    if gamma >= 1.0:
        raise AnalysisError("no positive definite H certifying contraction was found")
    return ContractionCertificate(best_h, gamma, "analytic")


def _fd_jacobian(f, t: int, s: np.ndarray) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n = len(s)
    jac = np.zeros((n, n))
    for j in range(n):
        h = 1e-6 * (1.0 + abs(s[j]))
        up = s.copy()
        dn = s.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (np.atleast_1d(f(t, up)) - np.atleast_1d(f(t, dn))) / (2.0 * h)
    return jac


def contraction_sampled(f_s, grid, h=None, tol: float = 1e-9) -> ContractionCertificate:
    """Grid evidence for contraction: max ||H J H^-1||^2 over sampled Jacobians.

    This is evidence, not proof; the result is flagged accordingly and may
    report gamma >= 1 (non-contractive on the samples).
    """
    points = list(grid)
    if not points:
        raise AnalysisError("empty sample grid")
    n = len(np.atleast_1d(np.asarray(points[0][1], dtype=float)))
    h = np.eye(n) if h is None else np.atleast_2d(np.asarray(h, dtype=float))
    vals = np.linalg.eigvalsh((h + h.T) / 2.0)
    if vals.min() <= 0:
        raise AnalysisError("H must be symmetric positive definite")
    h_inv = np.linalg.inv(h)
    gamma = 0.0
    for t, s in points:
        jac = _fd_jacobian(f_s, int(t), s)
        gamma = max(gamma, float(np.linalg.norm(h @ jac @ h_inv, 2)) ** 2)
    return ContractionCertificate(h, max(gamma, tol) * (1.0 + 1e-9), "sampled")


@dataclass(frozen=True)
class Lemma4Result:
    ok: bool
    witness: tuple | None = None


def lemma4_check(f_s, cert: ContractionCertificate, samples) -> Lemma4Result:
    """Check ||H(f(t,s2)-f(t,s1))|| <= sqrt(gamma) ||H(s2-s1)|| on sample triples.

    Returns the first falsifying (t, s1, s2) if any.
    """
    h = cert.H
    root = cert.sqrt_gamma
    for t, s1, s2 in samples:
        s1 = np.atleast_1d(np.asarray(s1, dtype=float))
        s2 = np.atleast_1d(np.asarray(s2, dtype=float))
        lhs = float(np.linalg.norm(h @ (np.atleast_1d(f_s(t, s2)) - np.atleast_1d(f_s(t, s1)))))
        rhs = root * float(np.linalg.norm(h @ (s2 - s1)))
        if lhs > rhs:
            return Lemma4Result(False, (t, s1, s2))
    return Lemma4Result(True, None)


# ---------------------------------------------------------------------------
# boundedness of the blended reference


@dataclass(frozen=True)
class BlendedBound:
    """Envelope for ||H s[t]||: geometric decay of the start plus a steady offset."""

    cert: ContractionCertificate
    t0: int
    initial: float  # ||H s[t0]||
    drive: float  # sup over tau of ||H f_s(tau, 0)||
    M_s: float | None = None

    def __call__(self, t: int) -> float:
        root = self.cert.sqrt_gamma
        return root ** (t - self.t0) * self.initial + self.drive / (1.0 - root)

    @property
    def limit(self) -> float:
        return self.drive / (1.0 - self.cert.sqrt_gamma)


def blended_bound(
    cert: ContractionCertificate,
    t0: int,
    s_t0,
    sup_norm_hfs0: float,
    pair=None,
    n_agents: int | None = None,
    bound_fn=None,
) -> BlendedBound:
    """Bound function t -> sqrt(gamma)^(t-t0) ||H s[t0]|| + sup||H f_s(.,0)|| / (1-sqrt(gamma)).

    When the Perron pair, agent count, and the family bound M are supplied the
    asymptotic constant M_s = sqrt(N) ||q|| ||H^-1|| ||H|| M(0) / (1-sqrt(gamma))
    is attached as well.
    """
    if not cert.contractive:
        raise AnalysisError("bound requires a contractive certificate")
    initial = float(np.linalg.norm(cert.H @ np.atleast_1d(np.asarray(s_t0, dtype=float))))
    m_s = None
    if pair is not None and n_agents is not None and bound_fn is not None:
        norm_q = float(np.linalg.norm(pair.q))
        norm_h = float(np.linalg.norm(cert.H, 2))
        norm_h_inv = float(np.linalg.norm(cert.h_inv(), 2))
        m_s = math.sqrt(n_agents) * norm_q * norm_h_inv * norm_h * float(bound_fn(0.0))
        m_s /= 1.0 - cert.sqrt_gamma
    return BlendedBound(cert, t0, initial, float(sup_norm_hfs0), m_s)


# ---------------------------------------------------------------------------
# analytic and finite-time sub-step counts


def family_lipschitz(dynamics) -> float:
    return max(d.lipschitz for d in dynamics)


def family_bound(dynamics):
    maps = tuple(dynamics)

    def bound(r: float) -> float:
        return max(d.bound(r) for d in maps)

    return bound


@dataclass(frozen=True)
class KminConstants:
    """Norm constants feeding the analytic sub-step count."""

    eta: float
    M1: float
    Ms: float
    L: float
    norm_z: float
    norm_r: float
    norm_q: float
    norm_p: float
    norm_h: float
    norm_h_inv: float
    lambda2_mag: float
    gamma: float


def kmin_constants(dec: SpectralDecomposition, cert: ContractionCertificate, lipschitz: float, bound_fn) -> KminConstants:
    """Assemble the constants; eta is set to twice its lower threshold
    L ||q|| ||R|| ||H|| / sqrt(gamma) (any value above works, the factor two
    avoids boundary fragility), with 1.0 as fallback for L = 0.
    """
    if not cert.contractive:
        raise AnalysisError("constants require a contractive certificate")
    norm_p = float(np.linalg.norm(dec.pair.p))
    norm_q = float(np.linalg.norm(dec.pair.q))
    norm_r = float(np.linalg.norm(dec.R, 2)) if dec.R.size else 0.0
    norm_z = float(np.linalg.norm(dec.Z, 2)) if dec.Z.size else 0.0
    norm_h = float(np.linalg.norm(cert.H, 2))
    norm_h_inv = float(np.linalg.norm(cert.h_inv(), 2))
    root = cert.sqrt_gamma
    threshold = lipschitz * norm_q * norm_r * norm_h / root
    eta = 2.0 * threshold if threshold > 0 else 1.0
    m1 = max(norm_p * norm_h_inv, norm_r / eta)
    n = dec.n
    m_s = math.sqrt(n) * norm_q * norm_h_inv * norm_h * float(bound_fn(0.0)) / (1.0 - root)
    return KminConstants(
        eta=eta,
        M1=m1,
        Ms=m_s,
        L=float(lipschitz),
        norm_z=norm_z,
        norm_r=norm_r,
        norm_q=norm_q,
        norm_p=norm_p,
        norm_h=norm_h,
        norm_h_inv=norm_h_inv,
        lambda2_mag=dec.pair.lambda2_mag,
        gamma=cert.gamma,
    )


def _smallest_k(lam: float, pairs) -> int:
    """Smallest integer K >= 1 with lam**K * c <= r for every (c, r)."""
    if lam >= 1.0:
        raise AnalysisError(f"subdominant magnitude {lam:.6g} >= 1 violates the assumptions")
    pairs = [(float(c), float(r)) for c, r in pairs]
    for c, r in pairs:
        if c > 0 and r <= 0:
            raise AnalysisError("zero tolerance with a positive coefficient is unreachable")
    if lam <= 0.0:
        return 1

    def holds(k: int) -> bool:
        return all(lam**k * c <= r for c, r in pairs)

    k = 1
    for c, r in pairs:
        if lam * c > r:
            k = max(k, math.ceil(math.log(r / c) / math.log(lam)))
    while not holds(k):
        k += 1
    while k > 1 and holds(k - 1):
        k -= 1
    return k


def kmin_analytic(consts: KminConstants, eps: float, n_agents: int, bound_fn) -> int:
    """Smallest K with lam2^K eta L M1 ||Z|| <= (1-sqrt(g))/2 and
    lam2^K 2 eta M1 M(||p|| Ms) sqrt(N) ||Z|| / (1-sqrt(g)) <= eps/2."""
    root = math.sqrt(consts.gamma)
    c1 = consts.eta * consts.L * consts.M1 * consts.norm_z
    r1 = (1.0 - root) / 2.0
    c2 = 2.0 * consts.eta * consts.M1 * float(bound_fn(consts.norm_p * consts.Ms)) * math.sqrt(n_agents) * consts.norm_z
    c2 /= 1.0 - root
    r2 = eps / 2.0
    return _smallest_k(consts.lambda2_mag, [(c1, r1), (c2, r2)])


@dataclass(frozen=True)
class CorollaryKmin:
    eps0: float
    delta: float
    kmin: int


def kmin_corollary(
    dec: SpectralDecomposition,
    cert: ContractionCertificate,
    eps: float,
    lipschitz: float,
    sup_f: float,
) -> CorollaryKmin:
    """Finite-time sub-step count from a bound on ||F|| over the reachable set.

    eps0 = eps / (2 max{||p|| ||H^-1||, ||R||}),
    delta = min{1, (1-sqrt(g)) / (L ||q|| ||R|| ||H||)} * eps0, and K is the
    smallest integer with lam2^K ||Z|| sup_f <= delta.
    """
    if not cert.contractive:
        raise AnalysisError("finite-time bound requires a contractive certificate")
    norm_p = float(np.linalg.norm(dec.pair.p))
    norm_q = float(np.linalg.norm(dec.pair.q))
    norm_r = float(np.linalg.norm(dec.R, 2)) if dec.R.size else 0.0
    norm_z = float(np.linalg.norm(dec.Z, 2)) if dec.Z.size else 0.0
    norm_h = float(np.linalg.norm(cert.H, 2))
    norm_h_inv = float(np.linalg.norm(cert.h_inv(), 2))
    eps0 = eps / (2.0 * max(norm_p * norm_h_inv, norm_r))
    denom = lipschitz * norm_q * norm_r * norm_h
    scale = min(1.0, (1.0 - cert.sqrt_gamma) / denom) if denom > 0 else 1.0
    delta = scale * eps0
    kmin = _smallest_k(dec.pair.lambda2_mag, [(norm_z * float(sup_f), delta)])
    return CorollaryKmin(eps0, delta, kmin)


@dataclass(frozen=True)
class SupFEstimate:
    """Bound on ||F|| over the reachable tube: analytic envelope plus grid evidence."""

    analytic: float
    sampled: float
    node_radius: float


def estimate_sup_f(
    dynamics,
    dec: SpectralDecomposition,
    cert: ContractionCertificate,
    eps: float,
    init_radius: float,
    seed: int = 0,
    samples: int = 200,
) -> SupFEstimate:
    """Estimate sup ||F(t, xbar)|| over states compatible with the invariant tube.

    The per-node radius combines the initial box with |p_i| times the blended
    envelope inflated by eps0, plus the complement allowance delta; the
    declared bound function turns the radius into the analytic value, and a
    seeded random sample of tube states cross-checks it from below.
    """
    maps = tuple(dynamics)
    lip = family_lipschitz(maps)
    bound_fn = family_bound(maps)
    n_agents = dec.n
    norm_q = float(np.linalg.norm(dec.pair.q))
    norm_h = float(np.linalg.norm(cert.H, 2))
    norm_h_inv = float(np.linalg.norm(cert.h_inv(), 2))
    norm_p = float(np.linalg.norm(dec.pair.p))
    norm_r = float(np.linalg.norm(dec.R, 2)) if dec.R.size else 0.0
    norm_z = float(np.linalg.norm(dec.Z, 2)) if dec.Z.size else 0.0
    eps0 = eps / (2.0 * max(norm_p * norm_h_inv, norm_r))
    denom = lip * norm_q * norm_r * norm_h
    delta = (min(1.0, (1.0 - cert.sqrt_gamma) / denom) if denom > 0 else 1.0) * eps0
    root = cert.sqrt_gamma
    # reference states s[t] stay within the start bound plus the steady offset
    s_start = norm_h_inv * norm_h * norm_q * math.sqrt(n_agents) * float(bound_fn(init_radius))
    s_bound = s_start + norm_h_inv * norm_h * norm_q * math.sqrt(n_agents) * float(bound_fn(0.0)) / (1.0 - root)
    p_max = float(np.max(np.abs(dec.pair.p)))
    row_r = float(np.max(np.linalg.norm(dec.R, axis=1))) if dec.R.size else 0.0
    node_radius = max(p_max * (s_bound + norm_h_inv * eps0) + row_r * delta, init_radius)
    analytic = math.sqrt(n_agents) * float(bound_fn(node_radius))

    rng = np.random.default_rng([seed, 0x5F])
    n_dim = 1
    sampled = 0.0
    for _ in range(samples):
        s_val = rng.uniform(-s_bound, s_bound, size=n_dim)
        e_val = rng.uniform(-1.0, 1.0, size=n_dim)
        e_val *= eps0 * norm_h_inv / max(1.0, float(np.linalg.norm(e_val)))
        xi_t = rng.uniform(-1.0, 1.0, size=(max(n_agents - 1, 0), n_dim))
        nrm = float(np.linalg.norm(xi_t))
        if nrm > 0:
            xi_t *= delta / nrm
        xbar = np.outer(dec.pair.p, s_val + e_val) + (dec.R @ xi_t if dec.R.size else 0.0)
        total = 0.0
        for d, x in zip(maps, np.atleast_2d(xbar)):
            total += float(np.linalg.norm(np.atleast_1d(d.update(0, x)))) ** 2
        sampled = max(sampled, math.sqrt(total))
    return SupFEstimate(analytic, sampled, node_radius)


# ---------------------------------------------------------------------------
# trace measurement


def tail_window(t_start: int, t_end: int, fraction: float = 0.25, min_steps: int = 10) -> tuple[int, int]:
    """Last `fraction` of [t_start, t_end], at least min_steps integer counts."""
    span = t_end - t_start + 1
    length = min(span, max(min_steps, int(round(fraction * span))))
    return (t_end - length + 1, t_end)


def _segment_analysis_range(trace: SimulationTrace, seg: Segment) -> tuple[int, int]:
    # the blended reference is (re)seeded one count after a membership change
    start = seg.t_start + 1 if seg.t_start > 0 else 1
    return (start, seg.t_end)


def measure_tail_error(
    trace: SimulationTrace,
    segment: Segment | None = None,
    tail_fraction: float | None = None,
) -> tuple[float, dict[int, float], tuple[int, int]]:
    """Per-node sup over the tail window of ||x_i[t] - p_i s[t]||."""
    seg = segment if segment is not None else trace.segments[-1]
    fraction = trace.scenario.tail_fraction if tail_fraction is None else tail_fraction
    t_lo, t_hi = _segment_analysis_range(trace, seg)
    if t_hi < t_lo:
        raise AnalysisError("segment too short for a tail window")
    w_lo, w_hi = tail_window(t_lo, t_hi, fraction)
    per_node: dict[int, float] = {v: 0.0 for v in seg.graph.nodes}
    for t in range(w_lo, w_hi + 1):
        state = trace.state_at(t, 0)
        s_t = np.atleast_1d(trace.blended_at(t))
        for node_id, p_i, x in zip(state.ids, seg.pair.p, state.values):
            err = float(np.linalg.norm(x - p_i * s_t))
            if err > per_node[node_id]:
                per_node[node_id] = err
    max_err = max(per_node.values())
    return max_err, per_node, (w_lo, w_hi)


def kmin_empirical(
    scenario: Scenario,
    eps: float,
    tail_fraction: float | None = None,
    k_max: int = 4096,
) -> int:
    """Smallest K whose simulated tail error is at most eps (doubling + bisection).

    The search contract guarantees the returned K passes and K-1 fails (when
    the result is above 1); the predicate need not be monotone for this to
    hold.
    """

    def tail_err(k: int) -> float:
        trace = simulate(replace(scenario, K=k))
        return measure_tail_error(trace, tail_fraction=tail_fraction)[0]

    if tail_err(1) <= eps:
        return 1
    lo, hi = 1, 2
    while tail_err(hi) > eps:
        lo = hi
        hi *= 2
        if hi > k_max:
            raise AnalysisError(f"no K <= {k_max} reaches tail error {eps}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_err(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class FractionReport:
    """Fraction-count identities measured on a trace segment.

    ``max_xi1_dev`` is the worst relative deviation of xi1[t_k] from
    xi1[(t+1)_0] over k = 1..K-1; ``max_decay_excess`` is the worst value of
    ||xitilde[t_k]|| |lamN|^(K-k) - ||xitilde[t+1]|| (nonpositive when the
    geometric decay envelope holds).
    """

    max_xi1_dev: float
    max_decay_excess: float
    rounds: int


def fraction_identities(trace: SimulationTrace, dec: SpectralDecomposition, segment: Segment | None = None) -> FractionReport:
    seg = segment if segment is not None else trace.segments[-1]
    k_steps = trace.scenario.K
    lam_n = dec.pair.lambdaN_mag
    by_time = {(rec.time.t, rec.time.k): rec.state for rec in trace.records}
    max_dev = 0.0
    max_excess = -math.inf
    rounds = 0
    for t in range(seg.t_start, seg.t_end):
        if (t, 1) not in by_time or (t + 1, 0) not in by_time:
            continue
        nxt = transform(by_time[(t + 1, 0)], dec)
        ref = np.atleast_1d(nxt.xi1)
        scale = max(1.0, float(np.max(np.abs(ref))))
        norm_next = float(np.linalg.norm(nxt.xitilde))
        rounds += 1
        for k in range(1, k_steps):
            ts = transform(by_time[(t, k)], dec)
            max_dev = max(max_dev, float(np.max(np.abs(np.atleast_1d(ts.xi1) - ref))) / scale)
            if lam_n > 1e-12:
                lhs = float(np.linalg.norm(ts.xitilde)) * lam_n ** (k_steps - k)
                max_excess = max(max_excess, lhs - norm_next)
    if max_excess == -math.inf:
        max_excess = 0.0
    return FractionReport(max_dev, max_excess, rounds)


# ---------------------------------------------------------------------------
# error report


@dataclass(frozen=True)
class FractionalErrorRow:
    t: int
    k: int
    node: int
    error: float
    bound: float | None


@dataclass(frozen=True)
class ErrorReport:
    """Tail errors, fractional-step errors with their bounds, and the Lyapunov series.

    ``lyapunov_steps`` holds (t, V[t+1]-V[t], rhs) where rhs is the one-step
    ultimate bound -(1-sqrt(g))/2 V[t] + lam2^(K-1) eta ||Z|| ||F(t, p s[t])||.
    """

    window: tuple[int, int]
    tail_errors: dict[int, float]
    max_tail_error: float
    fractional: tuple[FractionalErrorRow, ...]
    lyapunov: tuple[tuple[int, float], ...]
    lyapunov_steps: tuple[tuple[int, float, float], ...]
    eta: float
    gamma: float
    evidence_only: bool


def error_report(
    trace: SimulationTrace,
    pair,
    dec: SpectralDecomposition,
    cert: ContractionCertificate,
    eps: float | None = None,
    segment: Segment | None = None,
) -> ErrorReport:
    """Measure a trace against the blended reference.

    Requires the trace's blended series; fractional rows are only present when
    the trace recorded every fraction count.  The Lyapunov weight eta is twice
    the threshold L ||q|| ||R|| ||H|| / sqrt(gamma) of the segment's dynamics.
    """
    if not trace.blended:
        raise AnalysisError("trace has no blended reference")
    if not cert.contractive:
        raise AnalysisError("error report requires a contractive certificate")
    seg = segment if segment is not None else trace.segments[-1]
    max_err, per_node, window = measure_tail_error(trace, segment=seg)

    k_steps = trace.scenario.K
    lam2 = pair.lambda2_mag
    lam_n = pair.lambdaN_mag
    h = cert.H
    root = cert.sqrt_gamma
    lip = family_lipschitz(seg.dynamics)
    norm_q = float(np.linalg.norm(pair.q))
    norm_r = float(np.linalg.norm(dec.R, 2)) if dec.R.size else 0.0
    norm_z = float(np.linalg.norm(dec.Z, 2)) if dec.Z.size else 0.0
    norm_h = float(np.linalg.norm(h, 2))
    threshold = lip * norm_q * norm_r * norm_h / root
    eta = 2.0 * threshold if threshold > 0 else 1.0

    t_lo, t_hi = _segment_analysis_range(trace, seg)
    blended = {t: np.atleast_1d(s) for t, s in trace.blended}

    fractional: list[FractionalErrorRow] = []
    if trace.scenario.record == "all":
        for rec in trace.records:
            t, k = rec.time.t, rec.time.k
            if k == 0 or not (t_lo <= t + 1 <= t_hi) or (t + 1) not in blended:
                continue
            s_next = blended[t + 1]
            if eps is not None and lam_n > 1e-12:
                bound = (eps / 2.0) * (1.0 + lam_n ** -(k_steps - k))
            else:
                bound = None  # unbounded (or no eps requested)
            for node_id, p_i, x in zip(rec.state.ids, pair.p, rec.state.values):
                err = float(np.linalg.norm(x - p_i * s_next))
                fractional.append(FractionalErrorRow(t, k, node_id, err, bound))

    lyapunov: list[tuple[int, float]] = []
    v_by_t: dict[int, float] = {}
    for t in range(t_lo, t_hi + 1):
        state = trace.state_at(t, 0)
        ts = transform(state, dec)
        e_t = np.atleast_1d(ts.xi1) - blended[t]
        v = float(np.linalg.norm(h @ e_t)) + eta * float(np.linalg.norm(ts.xitilde))
        lyapunov.append((t, v))
        v_by_t[t] = v

    steps: list[tuple[int, float, float]] = []
    for t in range(t_lo, t_hi):
        if t not in v_by_t or (t + 1) not in v_by_t:
            continue
        s_t = blended[t]
        total = 0.0
        for d, p_i in zip(seg.dynamics, pair.p):
            total += float(np.linalg.norm(np.atleast_1d(d.update(t, p_i * s_t)))) ** 2
        rhs = -(1.0 - root) / 2.0 * v_by_t[t] + lam2 ** (k_steps - 1) * eta * norm_z * math.sqrt(total)
        steps.append((t, v_by_t[t + 1] - v_by_t[t], rhs))

    return ErrorReport(
        window=window,
        tail_errors=per_node,
        max_tail_error=max_err,
        fractional=tuple(fractional),
        lyapunov=tuple(lyapunov),
        lyapunov_steps=tuple(steps),
        eta=eta,
        gamma=cert.gamma,
        evidence_only=cert.evidence_only,
    )
