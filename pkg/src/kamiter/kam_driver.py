"""The KAM iteration: step-0 setup, schedules, hypothesis monitors, step loop.

Two schedule modes:

* ``paper`` evaluates the asymptotic formulas literally
  (s+ = mu^(2 rho) s / 8, mu+ = 8^m c0 mu^(1+rho), r+ = r/2 + r0/4,
  K+ = ([log 1/mu] + 1)^(3 eta)).  In double precision these only make sense
  for formula-level checks.
* ``practical`` measures mu from |P|, shrinks r by r0 / 2^(nu+2) per step and
  picks K+ = ceil(|log mu| (tau+2) / (r - r+)) clamped to [K_min, K_max].
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import gammaincc, gammaln

from .assumptions import DiophantineParams, FrequencyMap
from .errors import (BoundViolated, DegreeVanished, Diverged, EpsilonTooLarge, KamError,
                     OrderTooLow, ResidualTooLarge)
from .frequency_matching import ParameterGrid, advance_parameter, degree_root, solve_frequency_equation
from .kam_core import (Generator, HomologicalInfo, NormalForm, extract_normal_form,
                       homological_residual, lie_compose, lie_transform, solve_homological,
                       translate_action, truncate)
from .models import HamiltonianFamily, solve_th3
from .series import FourierTaylorSeries, holder_seminorm, pruning


@dataclass
class RunOptions:
    mode: str = "practical"
    m: int = 5
    tau: float = 2.0
    stop_tol: float = 1e-12
    freq_tol: float = 1e-9
    homological_tol: float = 1e-10
    max_steps: int = 12
    lie_order: int = 8
    lie_rel_tol: float = 1e-16
    grid: int = 9
    diverge_after: int = 3
    K_min: int = 4
    K_max: int = 40
    extra_taylor: int = 4
    beta: float = 0.5
    c0: float = 1.0
    s0: float | None = None
    r0: float | None = None
    gamma0: float | None = None
    prune: float = 1e-30

    def __post_init__(self):
        if self.mode not in ("paper", "practical"):
            raise ValueError("mode must be 'paper' or 'practical'")
        for name in ("stop_tol", "freq_tol", "homological_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


# ---------------------------------------------------------------------------
# schedule


def rho_of(m: int) -> float:
    return 1.0 / (2 * (m + 1))


def eta_of(m: int) -> int:
    """Smallest integer eta with (1 + rho)^eta > 2."""
    rho = rho_of(m)
    eta = max(1, int(math.log(2) / math.log1p(rho)))
    while (1 + rho) ** eta <= 2:
        eta += 1
    while eta > 1 and (1 + rho) ** (eta - 1) > 2:
        eta -= 1
    return eta


def paper_K(mu: float, eta: int) -> float:
    """([log 1/mu] + 1)^(3 eta); infinite for mu = 0."""
    if mu <= 0:
        return math.inf
    return float((math.floor(math.log(1.0 / mu)) + 1) ** (3 * eta)) if mu < 1 else 1.0


@dataclass(frozen=True)
class PaperConstants:
    gamma0: float
    mu0: float
    rho: float
    eta: int
    K1: float


def paper_constants(eps: float, n: int, m: int, tau: float) -> PaperConstants:
    if not eps > 0:
        raise ValueError("paper-mode constants need eps > 0")
    rho, eta = rho_of(m), eta_of(m)
    gamma0 = eps ** (1.0 / (4 * (n + m + 2)))
    mu0 = eps ** (1.0 / (8 * eta * (tau + 1) * (m + 1)))
    return PaperConstants(gamma0, mu0, rho, eta, paper_K(mu0, eta))


@dataclass(frozen=True)
class Schedule:
    mode: str
    n: int
    m: int
    tau: float
    gamma0: float
    r0: float
    r: float
    s: float
    mu: float
    K: float
    Mstar: float
    c0: float = 1.0
    nu: int = 0
    K_min: int = 4
    K_max: int = 40
    mu0: float = 0.0

    @property
    def rho(self) -> float:
        return rho_of(self.m)

    @property
    def eta(self) -> int:
        return eta_of(self.m)

    @property
    def dp(self) -> DiophantineParams:
        return DiophantineParams(self.gamma0, self.tau)

    @property
    def domain(self) -> tuple[float, float]:
        return (self.s, self.r)

    @property
    def alpha(self) -> float:
        return min(1.0, self.mu) ** (2 * self.rho)

    def plan(self) -> "StepPlan":
        """Parameters of the next domain, fixed before the step runs."""
        if self.mode == "paper":
            r_plus = self.r / 2 + self.r0 / 4
            K_plus = paper_K(self.mu, self.eta)
            s_plus = self.mu ** (2 * self.rho) * self.s / 8
            mu_plus = 8**self.m * self.c0 * self.mu ** (1 + self.rho)
        else:
            r_plus = self.r - self.r0 / 2 ** (self.nu + 2)
            if self.mu > 0:
                K_raw = math.ceil(abs(math.log(self.mu)) * (self.tau + 2) / (self.r - r_plus))
            else:
                K_raw = self.K_min
            K_plus = int(min(max(K_raw, self.K_min), self.K_max))
            s_plus = self.s * self.alpha / 8
            mu_plus = math.nan
        return StepPlan(r_plus, s_plus, K_plus, mu_plus,
                        gamma_factor(self.r, r_plus, K_plus, self.tau, self.n))

    def advance(self, plan: "StepPlan", norm_P_plus: float) -> "Schedule":
        if self.mode == "paper":
            mu = plan.mu_plus
        else:
            mu = practical_mu(norm_P_plus, self.gamma0, plan.s_plus, self.n, self.m)
        return replace(self, r=plan.r_plus, s=plan.s_plus, mu=mu, K=plan.K_plus, nu=self.nu + 1)


@dataclass(frozen=True)
class StepPlan:
    r_plus: float
    s_plus: float
    K_plus: float
    mu_plus: float
    Gamma: float


def practical_mu(norm_P: float, gamma0: float, s: float, n: int, m: int) -> float:
    return norm_P / (gamma0 ** (n + m + 2) * s**m)


def l1_sphere_count(n: int, kappa: np.ndarray) -> np.ndarray:
    """Number of k in Z^n with |k|_1 = kappa (kappa >= 1)."""
    kappa = np.asarray(kappa, dtype=float)
    total = np.zeros_like(kappa)
    for j in range(1, n + 1):
        ok = kappa >= j
        logc = (j * math.log(2) + gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
                + gammaln(np.where(ok, kappa, j)) - gammaln(j) - gammaln(np.where(ok, kappa, j) - j + 1))
        total += np.where(ok, np.exp(logc), 0.0)
    return total


def gamma_factor(r: float, r_plus: float, K_plus: float, tau: float, n: int = 2) -> float:
    """Sum over 0 < |k|_1 <= K+ of |k|^(3 tau + 5) exp(-|k| (r - r+)/8)."""
    if K_plus < 1:
        return 0.0
    if not r > r_plus:
        raise ValueError("gamma_factor needs r > r_plus")
    a = (r - r_plus) / 8
    p = 3 * tau + 5
    total = 0.0
    lo = 1
    chunk = 1 << 20
    peak = p / a
    while lo <= K_plus:
        hi = int(min(K_plus, lo + chunk - 1))
        kap = np.arange(lo, hi + 1, dtype=float)
        logt = np.log(l1_sphere_count(n, kap)) + p * np.log(kap) - kap * a
        part = float(np.sum(np.exp(logt)))
        total += part
        if lo > peak and part <= 1e-17 * total:
            break
        lo = hi + 1
    return total


# ---------------------------------------------------------------------------
# state and reports


@dataclass(frozen=True)
class NodeState:
    xi: np.ndarray
    nf: NormalForm
    P: FourierTaylorSeries


@dataclass(frozen=True)
class KamState:
    nf: NormalForm
    P: FourierTaylorSeries
    xi: np.ndarray
    hbar0: FourierTaylorSeries
    p01_sum: np.ndarray
    step: int = 0
    freq_residual: float = 0.0
    nodes: tuple | None = None
    grid: ParameterGrid | None = None
    fmap: FrequencyMap | None = None
    target: np.ndarray | None = None


HYPOTHESES = ("H1", "H2", "H3", "H4", "H5", "H6", "H7")


@dataclass(frozen=True)
class Hypothesis:
    name: str
    satisfied: bool
    margin: float
    value: float
    bound: float


def _margin(value: float, bound: float) -> float:
    if bound == 0:
        return 1.0 if value == 0 else -1e300
    m = (bound - value) / bound
    if not math.isfinite(m):
        return -1e300 if m < 0 or math.isnan(m) else 1.0
    return float(max(m, -1e300))


def _hyp(name, value, bound, strict=False):
    ok = value < bound if strict else value <= bound
    if value == 0 and bound == 0:
        ok = True
    return Hypothesis(name, bool(ok), _margin(value, bound), float(value), float(bound))


def derivative_norms(f: FourierTaylorSeries, domain, max_order: int = 2) -> float:
    """max over |i| <= max_order of |d_y^i f| on the domain."""
    n = f.dim
    best = f.weighted_norm(domain)
    frontier = [f]
    for _ in range(max_order):
        nxt = []
        for g in frontier:
            for i in range(n):
                d = g.d_y(i)
                best = max(best, d.weighted_norm(domain))
                nxt.append(d)
        frontier = nxt
    return best


def measured_c4(F: FourierTaylorSeries | None, sched: Schedule, plan: StepPlan) -> float:
    """max |d_x^j d_y^i F| / (gamma0^(n+m+1) s^(m-|i|) mu Gamma), |i| + |j| <= 1."""
    if F is None or F.is_zero:
        return 0.0
    scale = sched.gamma0 ** (sched.n + sched.m + 1) * sched.mu * plan.Gamma
    if scale == 0 or not math.isfinite(scale):
        return 0.0
    d = (sched.s, sched.r)
    vals = [F.weighted_norm(d) / sched.s**sched.m]
    for i in range(F.dim):
        vals.append(F.d_x(i).weighted_norm(d) / sched.s**sched.m)
        vals.append(F.d_y(i).weighted_norm(d) / sched.s ** (sched.m - 1))
    return max(vals) / scale


def h1_integral(n: int, K: float, a: float) -> float:
    """int_K^inf t^n exp(-a t) dt."""
    if math.isinf(K):
        return 0.0
    return float(gammaincc(n + 1, a * K) * math.exp(gammaln(n + 1)) / a ** (n + 1))


def check_hypotheses(state: KamState, sched: Schedule, *, plan: StepPlan | None = None,
                     F: FourierTaylorSeries | None = None, mu: float | None = None,
                     Gamma: float | None = None) -> list[Hypothesis]:
    """Evaluate H1-H7 with measured norms in place of the abstract constants.

    ``mu`` and ``Gamma`` override the schedule values (for audits).
    """
    plan = sched.plan() if plan is None else plan
    mu = sched.mu if mu is None else mu
    G = plan.Gamma if Gamma is None else Gamma
    K_plus = plan.K_plus if mu == sched.mu else (paper_K(mu, sched.eta) if sched.mode == "paper" else plan.K_plus)
    n, m, rho = sched.n, sched.m, sched.rho
    dr = sched.r - plan.r_plus
    mu0 = sched.mu0

    h1 = 0.0 if mu == 0 else h1_integral(n, K_plus, dr / 16)
    out = [_hyp("H1", h1, mu)]

    dh = state.nf.hbar - state.hbar0
    h2 = derivative_norms(dh, (sched.s, 0.0)) if not dh.is_zero else 0.0
    out.append(_hyp("H2", h2, math.sqrt(mu0)))

    h3_bound = sched.gamma0 / ((sched.Mstar + 2) * K_plus ** (sched.tau + 1))
    out.append(_hyp("H3", 2 * sched.s, h3_bound, strict=True))

    out.append(_hyp("H4", float(np.linalg.norm(state.p01_sum)), math.sqrt(mu0), strict=True))

    sched_mu = replace(sched, mu=mu)
    c4 = measured_c4(F, sched_mu, replace(plan, Gamma=G))
    out.append(_hyp("H5", c4 * sched.s ** (m - 1) * mu * G, dr / 8, strict=True))
    alpha = min(1.0, mu) ** (2 * rho) if sched.mode == "practical" else mu ** (2 * rho)
    out.append(_hyp("H6", c4 * sched.s**m * mu * G, alpha * sched.s / 8, strict=True))

    out.append(_hyp("H7", mu**rho * (G * G + G), 1.0))
    return out


@dataclass
class StepReport:
    step: int
    r: float
    s: float
    mu: float
    K: float
    norm_P: float
    holder_P: float
    xi: list
    xi_displacement: float
    freq_residual: float
    margins: dict
    gamma_factor: float
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


# ---------------------------------------------------------------------------
# step 0


def _M_star(hbar: FourierTaylorSeries, s: float) -> float:
    return 0.0 if hbar.is_zero else derivative_norms(hbar, (s, 0.0))


def init_step0(model: HamiltonianFamily, eps: float, options: RunOptions | None = None):
    """Initial state and schedule: e0 = 0, hbar0 from the model, P0 = eps P."""
    opt = options or RunOptions()
    n, m, tau = model.dim, opt.m, opt.tau
    if model.known_L is not None and m <= model.known_L + 1:
        raise OrderTooLow(f"m = {m} must exceed L + 1 = {model.known_L + 1}")
    M_work = m + opt.extra_taylor
    xi0 = np.zeros(n)
    hbar0 = model.hbar(xi0).with_cutoffs(max(M_work, model.hbar(xi0).taylor_cutoff))
    s_model, r0 = model.s, (opt.r0 if opt.r0 is not None else model.r)
    Mstar = _M_star(hbar0, s_model)

    if opt.mode == "paper":
        pc = paper_constants(eps, n, m, tau)
        gamma0, mu0, K1 = pc.gamma0, pc.mu0, pc.K1
        s0 = s_model * gamma0 / (16 * (Mstar + 2) * K1 ** (tau + 1)) if opt.s0 is None else opt.s0
        P_unit = model.perturbation(1.0, xi0)
        lhs = (eps ** (1 / 8 - 1 / (8 * pc.eta * (tau + 1) * (m + 1)))
               * P_unit.weighted_norm((s0, r0)) * 16**m * (Mstar + 2) ** m / s_model**m)
        if lhs > 1:
            raise EpsilonTooLarge(f"eps = {eps:g} above the step-0 threshold (lhs = {lhs:.3e} > 1)")
        mu = mu0
    else:
        gamma0 = opt.gamma0 if opt.gamma0 is not None else model.gamma(tau)
        s0 = s_model * gamma0 / (16 * (Mstar + 2)) if opt.s0 is None else opt.s0
        mu0 = mu = math.nan
        K1 = opt.K_max

    with pruning(opt.prune):
        if model.route == "parameter":
            grid = ParameterGrid(xi0, _param_radius(model), opt.grid)
            nodes = []
            for node in grid.nodes:
                nf = NormalForm.unperturbed(model.frequency(node),
                                            model.hbar(node).with_cutoffs(M_work))
                nodes.append(NodeState(node, nf, _embed(model.perturbation(eps, node), M_work)))
            nodes = tuple(nodes)
            cur = nodes[grid.nearest_node(xi0)[0]]
            nf0, P0 = cur.nf, cur.P
            norm0 = max(nd.P.weighted_norm((s0, r0)) for nd in nodes)
        else:
            grid, nodes = None, None
            nf0 = NormalForm.unperturbed(model.omega, hbar0)
            P0 = _embed(model.perturbation(eps, xi0), M_work)
            norm0 = P0.weighted_norm((s0, r0))

    if opt.mode == "practical":
        mu0 = mu = practical_mu(norm0, gamma0, s0, n, m)
    elif norm0 > gamma0 ** (n + m + 2) * s0**m * mu0:
        raise BoundViolated("initial perturbation exceeds gamma0^(n+m+2) s0^m mu0")

    sched = Schedule(opt.mode, n, m, tau, gamma0, r0, r0, s0, mu, K1, Mstar, opt.c0, 0,
                     opt.K_min, opt.K_max, mu0)
    fmap = model.frequency_map if nodes is not None else None
    target = model.frequency(xi0) if nodes is not None else None
    state = KamState(nf0, P0, xi0, hbar0, np.zeros(n), 0, 0.0, nodes, grid, fmap, target)
    return state, sched


def _embed(P: FourierTaylorSeries, M: int) -> FourierTaylorSeries:
    return P.with_cutoffs(max(M, P.taylor_cutoff))


def _param_radius(model: HamiltonianFamily) -> float:
    return min(min(b - 0.0, 0.0 - a) for a, b in model.param_box)


# ---------------------------------------------------------------------------
# one step


@dataclass
class _Cycle:
    nf: NormalForm
    P: FourierTaylorSeries
    gen: Generator
    p00: float
    p01: np.ndarray
    entry: dict
    info: HomologicalInfo
    lie_terms: int
    lie_remainder: float
    hom_residual: float


def _cycle(nf: NormalForm, P: FourierTaylorSeries, sched: Schedule, plan: StepPlan,
           opt: RunOptions, K_work: int) -> _Cycle:
    m = sched.m
    K_plus = int(min(plan.K_plus, 10**6))
    R, _tail = truncate(P, K_plus, m)
    info = HomologicalInfo()
    gen = solve_homological(nf, R, sched.dp, m, s=sched.s, info=info)
    hom_res = homological_residual(nf, R, gen, m, sched.domain) if not gen.is_zero else 0.0
    M_work = P.taylor_cutoff
    lie = lie_compose(nf, P, gen, sched.domain, lie_order=opt.lie_order, taylor_cutoff=M_work,
                      fourier_cutoff=K_work, rel_tol=opt.lie_rel_tol)
    nf_new, P_new, p00, p01 = extract_normal_form(lie.series, nf)
    entry = {"kind": "lie", "F": gen.F.to_dict(), "terms": lie.terms_used,
             "taylor_cutoff": M_work, "fourier_cutoff": K_work}
    return _Cycle(nf_new, P_new, gen, p00, p01, entry, info, lie.terms_used, lie.remainder, hom_res)


def _holder_action(P: FourierTaylorSeries, s: float, r: float, beta: float) -> float:
    if P.is_zero:
        return 0.0
    d = s / 8
    fam = [(np.array(c), P.shift_y(np.array(c))) for c in itertools.product((-d, 0.0, d), repeat=P.dim)]
    return holder_seminorm(fam, beta, (s, r))


def kam_step(state: KamState, sched: Schedule, opt: RunOptions | None = None):
    """One atomic KAM step; returns (state', schedule', report, record entries).

    Any failure raises with the step index attached and leaves the inputs
    untouched (all state is immutable).
    """
    opt = opt or RunOptions()
    step = state.step + 1
    t0 = time.perf_counter()
    try:
        if state.freq_residual > opt.freq_tol:
            raise ResidualTooLarge(
                f"previous frequency residual {state.freq_residual:.3e} > {opt.freq_tol:.3e}")
        with pruning(opt.prune):
            if state.nodes is not None:
                out = _step_parameter(state, sched, opt)
            else:
                out = _step_action(state, sched, opt)
    except KamError as exc:
        raise exc.with_step(step)
    new_state, new_sched, report, entries = out
    report.wall_time = time.perf_counter() - t0
    return new_state, new_sched, report, entries


def _work_cutoff(P: FourierTaylorSeries, plan: StepPlan) -> int:
    return int(max(2 * min(plan.K_plus, 10**6), P.fourier_cutoff))


def _step_action(state: KamState, sched: Schedule, opt: RunOptions):
    plan = sched.plan()
    K_work = _work_cutoff(state.P, plan)
    cyc = _cycle(state.nf, state.P, sched, plan, opt, K_work)
    hyps = check_hypotheses(state, sched, plan=plan, F=cyc.gen.F)
    entries = [cyc.entry]

    nf, P = cyc.nf, cyc.P
    shift = np.zeros(state.nf.dim)
    degree = None
    drift = nf.drift
    if np.linalg.norm(drift) > opt.freq_tol / 10:
        half = sched.s / (4 * math.sqrt(nf.dim)) * (1 - 1e-9)
        box = [(-half, half)] * nf.dim

        def G(pts, nf=nf):
            return nf.drift + nf.grad_hbar(pts)

        root = degree_root(G, box, tol=half * 1e-14, atol=opt.freq_tol / 100)
        shift, degree = root.xi, root.degree
        nf, P = translate_action(nf, P, shift, s=sched.s)
        entries.append({"kind": "translate", "shift": [float(v) for v in shift]})
    freq_residual = float(np.linalg.norm(nf.drift))

    norm_P = P.weighted_norm((plan.s_plus, plan.r_plus))
    if sched.mode == "paper":
        bound = sched.gamma0 ** (sched.n + sched.m + 2) * plan.s_plus**sched.m * plan.mu_plus
        if norm_P > bound:
            raise BoundViolated(f"|P+| = {norm_P:.3e} exceeds the step bound {bound:.3e}")
    new_sched = sched.advance(plan, norm_P)
    xi = state.xi + shift
    new_state = replace(state, nf=nf, P=P, xi=xi, p01_sum=state.p01_sum + cyc.p01,
                        step=state.step + 1, freq_residual=freq_residual)
    report = StepReport(
        step=state.step + 1, r=new_sched.r, s=new_sched.s, mu=new_sched.mu, K=float(plan.K_plus),
        norm_P=norm_P, holder_P=_holder_action(P, plan.s_plus, plan.r_plus, opt.beta),
        xi=[float(v) for v in xi], xi_displacement=float(np.linalg.norm(shift)),
        freq_residual=freq_residual, margins={h.name: h.margin for h in hyps},
        gamma_factor=plan.Gamma,
        extra={"p00": cyc.p00, "p01": [float(v) for v in cyc.p01], "lie_terms": cyc.lie_terms,
               "lie_remainder": cyc.lie_remainder, "homological_residual": cyc.hom_residual,
               "worst_small_divisor": cyc.info.worst_small_divisor,
               "safety_ratio": cyc.info.worst_safety_ratio, "degree_at_box": degree,
               "snap_distance": 0.0, "hypotheses_satisfied": {h.name: h.satisfied for h in hyps}},
    )
    return new_state, new_sched, report, entries


def _step_parameter(state: KamState, sched: Schedule, opt: RunOptions):
    plan = sched.plan()
    grid = state.grid
    cycles = []
    entries = []
    for j, nd in enumerate(state.nodes):
        K_work = _work_cutoff(nd.P, plan)
        cyc = _cycle(nd.nf, nd.P, sched, plan, opt, K_work)
        cycles.append(cyc)
        if cyc.lie_terms:
            entries.append(dict(cyc.entry, node=j))
    cur_idx = grid.nearest_node(state.xi)[0]
    hyps = check_hypotheses(state, sched, plan=plan, F=cycles[cur_idx].gen.F)

    drifts = np.array([c.nf.drift for c in cycles])
    root = solve_frequency_equation(state.fmap, drifts, state.target, grid, tol=1e-13,
                                    atol=opt.freq_tol / 100)
    adv = advance_parameter(grid, root.xi)
    entries.append({"kind": "parameter", "xi": [float(v) for v in root.xi]})
    nodes = tuple(NodeState(nd.xi, c.nf, c.P) for nd, c in zip(state.nodes, cycles))
    cur = nodes[adv.node]
    norm_P = max(c.P.weighted_norm((plan.s_plus, plan.r_plus)) for c in cycles)
    new_sched = sched.advance(plan, norm_P)
    fam = [(nd.xi, nd.P) for nd in nodes]
    holder = holder_seminorm(fam, opt.beta, (plan.s_plus, plan.r_plus)) if len(fam) > 1 else 0.0
    new_state = replace(state, nf=cur.nf, P=cur.P, xi=root.xi, nodes=nodes, grid=adv.grid,
                        p01_sum=state.p01_sum + cycles[cur_idx].p01, step=state.step + 1,
                        freq_residual=root.residual)
    report = StepReport(
        step=state.step + 1, r=new_sched.r, s=new_sched.s, mu=new_sched.mu, K=float(plan.K_plus),
        norm_P=norm_P, holder_P=holder, xi=[float(v) for v in root.xi],
        xi_displacement=adv.displacement, freq_residual=root.residual,
        margins={h.name: h.margin for h in hyps}, gamma_factor=plan.Gamma,
        extra={"snap_distance": adv.snap_distance, "degree_at_box": root.degree,
               "node": adv.node, "hypotheses_satisfied": {h.name: h.satisfied for h in hyps}},
    )
    return new_state, new_sched, report, entries


# ---------------------------------------------------------------------------
# the run


@dataclass
class TransformationRecord:
    """Enough to rebuild Psi^nu: the generators and translations in order."""

    model: dict
    eps: float
    options: dict
    entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"model": self.model, "eps": self.eps, "options": self.options,
                "entries": self.entries}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformationRecord":
        return cls(d["model"], d["eps"], d["options"], list(d["entries"]))


@dataclass
class RunResult:
    converged: bool
    reports: list
    state: KamState | None
    schedule: Schedule | None
    record: TransformationRecord | None
    torus: dict
    closed_form: object = None


def torus_residual(P: FourierTaylorSeries, samples: int = 64) -> dict:
    """Vector field J grad P on the torus y = 0: majorant (r = 0) and sampled max."""
    n = P.dim
    low = P.restrict_degree(0, 1)
    if low.is_zero:
        return {"majorant": 0.0, "sampled_max": 0.0}
    maj = 0.0
    parts = []
    for i in range(n):
        dx = low.d_x(i).restrict_degree(0, 0)
        dy = low.d_y(i).restrict_degree(0, 0)
        maj += dx.weighted_norm((1.0, 0.0)) + dy.weighted_norm((1.0, 0.0))
        parts.append((dx, dy))
    grid1 = 2 * np.pi * np.arange(samples) / samples
    thetas = np.array(list(itertools.product(grid1, repeat=n))) if n <= 2 else \
        np.random.default_rng(0).uniform(0, 2 * np.pi, (samples**2, n))
    ys = np.zeros_like(thetas)
    field_sq = np.zeros(thetas.shape[0])
    for dx, dy in parts:
        field_sq += np.abs(dx.evaluate_many(ys, thetas)) ** 2 + np.abs(dy.evaluate_many(ys, thetas)) ** 2
    return {"majorant": float(maj), "sampled_max": float(np.sqrt(field_sq.max()))}


def run_kam(model: HamiltonianFamily, eps: float, options: RunOptions | None = None,
            *, model_spec: dict | None = None) -> RunResult:
    """Iterate until |P| < stop_tol or max_steps.

    Raises Diverged after ``diverge_after`` consecutive increases of |P|;
    sub-step errors carry the step index.
    """
    opt = options or RunOptions()
    if model.route == "closed_form":
        cf = solve_th3(model, eps)
        if not cf.roots:
            raise DegreeVanished(f"{model.name}: g'(y) = -eps P'(y) has no real solution (eps = {eps:g})")
        return RunResult(True, [], None, None, None, {"roots": list(cf.roots)}, cf)

    state, sched = init_step0(model, eps, opt)
    record = TransformationRecord(model_spec or {"name": model.name}, float(eps), asdict(opt))
    reports = []
    norm = _norm_of(state, sched)
    rises = 0
    while norm >= opt.stop_tol and state.step < opt.max_steps:
        state, sched, rep, entries = kam_step(state, sched, opt)
        record.entries.extend(entries)
        reports.append(rep)
        rises = rises + 1 if rep.norm_P > norm else 0
        norm = rep.norm_P
        if rises >= opt.diverge_after:
            raise Diverged(f"|P| increased for {rises} consecutive steps").with_step(state.step)
    torus = torus_residual(state.P)
    torus.update({"xi": [float(v) for v in state.xi], "e": state.nf.e,
                  "hbar": state.nf.hbar.to_dict(), "norm_P": norm, "steps": state.step,
                  "frequency": [float(v) for v in state.nf.frequency]})
    return RunResult(norm < opt.stop_tol, reports, state, sched, record, torus)


def _norm_of(state: KamState, sched: Schedule) -> float:
    if state.nodes is not None:
        return max(nd.P.weighted_norm(sched.domain) for nd in state.nodes)
    return state.P.weighted_norm(sched.domain)


def initial_hamiltonian(model: HamiltonianFamily, eps: float, opt: RunOptions,
                        xi=None) -> FourierTaylorSeries:
    """N0 + eps P at the working Taylor cutoff, as the run builds it."""
    xi = np.zeros(model.dim) if xi is None else np.asarray(xi, dtype=float)
    M_work = opt.m + opt.extra_taylor
    hbar = model.hbar(xi)
    hbar = hbar.with_cutoffs(max(M_work, hbar.taylor_cutoff))
    freq = model.frequency(xi) if model.route == "parameter" else model.omega
    nf = NormalForm.unperturbed(freq, hbar)
    P = _embed(model.perturbation(eps, xi), M_work)
    with pruning(opt.prune):
        return nf.as_series(P.taylor_cutoff, P.fourier_cutoff) + P


def replay(record: TransformationRecord, H0: FourierTaylorSeries, node: int | None = None,
           prune: float | None = None) -> FourierTaylorSeries:
    """Re-apply every recorded generator and translation to H0."""
    thr = record.options.get("prune", 1e-30) if prune is None else prune
    H = H0
    with pruning(thr):
        for e in record.entries:
            if e.get("node", node) != node:
                continue
            if e["kind"] == "lie":
                F = FourierTaylorSeries.from_dict(e["F"])
                M, K = e["taylor_cutoff"], e["fourier_cutoff"]
                H = H.with_cutoffs(M, K)
                if e["terms"]:
                    H = lie_transform(H, F, (1.0, 0.0), order=e["terms"], taylor_cutoff=M,
                                      fourier_cutoff=K, rel_tol=0.0, check_stall=False).series
                H = H.realify()
            elif e["kind"] == "translate":
                H = H.shift_y(np.asarray(e["shift"], dtype=float)).realify()
    return H


def replay_check(record: TransformationRecord, H0: FourierTaylorSeries,
                 nf: NormalForm, P: FourierTaylorSeries, domain, node: int | None = None) -> float:
    """Relative majorant distance between the replayed H and N + P."""
    H = replay(record, H0, node)
    with pruning(record.options.get("prune", 1e-30)):
        target = nf.as_series(P.taylor_cutoff, P.fourier_cutoff) + P
    diff = (H - target).weighted_norm(domain)
    scale = max(target.weighted_norm(domain), 1e-300)
    return diff / scale
