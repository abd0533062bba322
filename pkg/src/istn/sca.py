"""Iterative relaxation algorithm: reweighted-l1 association + SCALE rate bounds.

Per time slot the loop alternates three steps until the subproblem objective
settles: refresh the sparsity weights from the previous powers/bandwidths,
refresh the log-rate lower-bound coefficients at the previous SINRs, and solve
the convex subproblem. The relaxed point is then rounded to binary
associations, repaired to satisfy every constraint, and the bits it really
delivers are charged against the remaining demand.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ScaConfig
from .convex_core import (
    ConvexProgram,
    SubproblemSolution,
    SubproblemSpec,
    access_bound,
    build_subproblem,
    scale_bound_coeffs,
)
from .rates import (
    Allocation,
    Association,
    DemandState,
    FeasibilityReport,
    check_feasibility,
    data_ue_sc,
    sinr_ue,
    slot_rates,
    update_demand,
)
from .scenario import Scenario

log = logging.getLogger(__name__)


class ScaAbort(RuntimeError):
    """The convex solver failed repeatedly within one time slot."""


@dataclass
class CsWeights:
    zeta: np.ndarray  # (N, K, S)
    xi: np.ndarray  # (N, K)
    chi: np.ndarray  # (M, N)
    epsilon: float


def update_cs_weights(
    p: np.ndarray, W_bs: np.ndarray, epsilon: float, S_bar: float | None = None, normalize: bool = True
) -> CsWeights:
    """Reweighting 1 / (previous value + epsilon) for every sparsified quantity.

    With ``normalize`` the raw weights are shrunk wherever the previous point
    would violate a weighted budget (several links sharing one SC, one UE or
    one BS). Every budget then holds at the previous point, which keeps that
    point feasible for the next subproblem and the objective nondecreasing.
    Sparse points are untouched.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if np.any(p < 0) or np.any(W_bs < 0):
        raise ValueError("previous powers and bandwidths must be nonnegative")
    zeta = 1.0 / (p + epsilon)
    q = p.sum(axis=2)
    xi = 1.0 / (q + epsilon)
    chi = 1.0 / (W_bs + epsilon)
    if normalize:
        zp = zeta * p
        per_sc = np.maximum(zp.sum(axis=1, keepdims=True), 1.0)  # one UE per (n, s)
        zeta = zeta / per_sc
        if S_bar is not None:
            per_link = np.maximum((zeta * p).sum(axis=2, keepdims=True) / S_bar, 1.0)
            zeta = zeta / per_link
        xi = xi / np.maximum((xi * q).sum(axis=0, keepdims=True), 1.0)  # one BS per UE
        chi = chi / np.maximum((chi * W_bs).sum(axis=0, keepdims=True), 1.0)  # one LEO per BS
    return CsWeights(zeta=zeta, xi=xi, chi=chi, epsilon=epsilon)


SINR_FLOOR = 1e-8
# bits/s/Hz below which a relaxed link is treated as unused
MIN_SPECTRAL_EFF = 1e-3
# share of a budget above which a relaxed link counts as active
ACTIVE_SHARE = 1e-3
# sparsity weight that makes a weighted budget vacuous
RELAXED_WEIGHT = 1e-12


def update_scale_coeffs(
    p: np.ndarray | None, h: np.ndarray, sigma2: float, iteration: int
) -> tuple[np.ndarray, np.ndarray]:
    """SCALE coefficients per (n, k, s) at the SINRs of powers ``p``.

    Iteration 0 uses a = 1, b = 0. Afterwards every link is treated as
    associated (the relaxation has no separate alpha), and a link with zero
    SINR keeps (1, 0).
    """
    if iteration == 0 or p is None:
        return np.ones(h.shape), np.zeros(h.shape)
    x = sinr_ue(h, p, np.ones_like(p), sigma2)
    # Dormant links have SINR near zero and a ~ SINR, which wrecks solver
    # scaling. Expanding at a floored SINR keeps the bound valid; it is only
    # loose on links whose rate is negligible anyway.
    a, b = scale_bound_coeffs(np.maximum(x, SINR_FLOOR))
    return a, b


def initial_point(scn: Scenario, scfg: ScaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Starting powers and bandwidths for the first reweighting.

    ``full`` starts every link at the largest value it may ever take (UE
    budget per link, whole LEO band per link). ``split`` divides both budgets
    evenly across links.
    """
    cfg = scn.cfg
    shape = (cfg.N, cfg.K, cfg.N_SC)
    if scfg.init == "full":
        return np.full(shape, cfg.p_UE_max), np.full((cfg.M, cfg.N), cfg.W_LEO)
    if scfg.init == "split":
        return np.full(shape, cfg.p_UE_max / (cfg.N * cfg.N_SC)), np.full((cfg.M, cfg.N), cfg.W_LEO / cfg.N)
    raise ValueError(f"unknown init {scfg.init!r}")


@dataclass
class ScaState:
    t: int
    iteration: int
    solution: SubproblemSolution
    weights: CsWeights  # weights the final solution was computed with
    a: np.ndarray
    b: np.ndarray
    objective_history: list[float]
    converged: bool
    trace: list[dict] = field(default_factory=list)
    program: ConvexProgram | None = field(default=None, repr=False)
    # point the final weights and bounds were built from
    p_expansion: np.ndarray | None = None
    W_expansion: np.ndarray | None = None


def make_spec(
    scn: Scenario, t: int, omega: np.ndarray, weights: CsWeights, a, b, scfg: ScaConfig,
    link_on: np.ndarray | None = None,
) -> SubproblemSpec:
    cfg, ch = scn.cfg, scn.channels
    return SubproblemSpec(
        omega=np.asarray(omega, dtype=float),
        h=ch.h[t - 1],
        g=ch.g[t - 1],
        zeta=weights.zeta,
        xi=weights.xi,
        chi=weights.chi,
        a=a,
        b=b,
        p_max=np.full(cfg.K, cfg.p_UE_max),
        P_max=np.full(cfg.N, cfg.P_BS_max),
        W_LEO=cfg.W_LEO,
        S_bar=cfg.S_bar,
        T_S=cfg.T_S,
        W_SC=cfg.W_SC,
        sigma2=ch.sigma2_bs,
        delta=ch.delta_leo,
        active=np.asarray(omega) > 0,
        link_on=link_on,
        demand_cap=np.asarray(omega, dtype=float) if scfg.cap_at_demand else None,
        p_floor=scfg.p_floor,
    )


def _solve_with_retry(program: ConvexProgram, scfg: ScaConfig, t: int, i: int) -> SubproblemSolution:
    sol = program.solve(tol=scfg.solver_tol, max_iter=scfg.solver_max_iter)
    if sol.ok:
        return sol
    log.warning("slot %d iteration %d: solver returned %s, retrying", t, i, sol.status)
    sol = program.solve(tol=max(scfg.solver_tol, 1e-6), max_iter=2 * scfg.solver_max_iter)
    if not sol.ok:
        raise ScaAbort(f"slot {t} iteration {i}: solver returned {sol.status} twice")
    return sol


def fixed_point_gap(
    p: np.ndarray, p_prev: np.ndarray, W: np.ndarray, W_prev: np.ndarray, epsilon: float, cfg
) -> float:
    """Largest |value / (previous + epsilon) - 1| over links carrying a real share of a budget.

    Zero at an exact fixed point of the reweighting, where every active
    link's raw weight times its value equals one.
    """
    gaps = [0.0]
    for v, v0, budget in ((p, p_prev, cfg.p_UE_max), (W, W_prev, cfg.W_LEO)):
        live = np.maximum(v, v0) >= ACTIVE_SHARE * budget
        if live.any():
            gaps.append(float(np.max(np.abs(v[live] / (v0[live] + epsilon) - 1.0))))
    return max(gaps)


def run_sca_for_ts(
    scn: Scenario,
    demand: DemandState,
    t: int,
    scfg: ScaConfig = ScaConfig(),
    program: ConvexProgram | None = None,
) -> ScaState:
    """Iterate the convex subproblem at slot ``t`` until the objective settles."""
    omega = demand.omega
    if not np.any(omega > 0):
        raise ValueError("no outstanding demand")
    h = scn.channels.h[t - 1]
    p_prev, W_prev = initial_point(scn, scfg)
    # UEs with no demand left stay silent
    p_prev[:, omega <= 0, :] = scfg.p_floor
    history: list[float] = []
    trace: list[dict] = []
    converged = False
    i = 0
    while True:
        weights = update_cs_weights(p_prev, W_prev, scfg.epsilon, scn.cfg.S_bar)
        a, b = update_scale_coeffs(p_prev if i else None, h, scn.channels.sigma2_bs, i)
        link_on = W_prev >= scfg.link_off_frac * scn.cfg.W_LEO
        spec = make_spec(scn, t, omega, weights, a, b, scfg, link_on)
        floor = np.minimum(access_bound(np.log(np.maximum(p_prev, scfg.p_floor)), spec), 0.0)
        spec.lam_floor = floor - scfg.lam_margin_bits
        program = build_subproblem(spec, program)
        try:
            new = _solve_with_retry(program, scfg, t, i)
        except ScaAbort:
            if i == 0:
                raise
            # fall back to the last solved iterate, which is feasible
            log.warning("slot %d: stopping at iteration %d after repeated solver failure", t, i)
            weights, a, b, p_prev, W_prev = last
            break
        sol = new
        last = (weights, a, b, p_prev, W_prev)
        history.append(sol.objective)
        trace.append({"t": t, "iteration": i, "objective": sol.objective, "status": sol.status,
                      "solve_time": sol.solve_time})
        i += 1
        if math.isinf(scfg.tol_sca):
            converged = True  # convergence test disabled: one pass
        elif len(history) > 1:
            prev = history[-2]
            settled = abs(history[-1] - prev) <= scfg.tol_sca * max(abs(prev), 1e-12)
            gap = fixed_point_gap(sol.p, p_prev, sol.W_bs, W_prev, scfg.epsilon, scn.cfg)
            converged = settled and gap <= scfg.fixed_point_tol
        if converged or i >= scfg.max_iters:
            break
        p_prev, W_prev = sol.p, sol.W_bs
    return ScaState(t, i, sol, weights, a, b, history, converged, trace, program, p_prev, W_prev)


def _keep_max(score: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    """Within each slice along ``axis`` keep only the highest-scoring set entry."""
    s = np.where(mask, score, -np.inf)
    best = np.argmax(s, axis=axis)
    keep = np.zeros_like(mask)
    np.put_along_axis(keep, np.expand_dims(best, axis), True, axis=axis)
    return mask & keep


def recover_binaries(
    state: ScaState,
    weights: CsWeights | None = None,
    S_bar: int | None = None,
    scn: Scenario | None = None,
) -> tuple[Association, Allocation]:
    """Threshold weight*value at 1/2, then resolve conflicts greedily by score.

    When ``scn`` is given the backhaul side is also completed: a BS that
    serves UEs but lost every LEO link gets its best-scoring one back, each
    LEO band is shared out in full among its BSs (in proportion to their
    relaxed bandwidths) and linked BSs transmit at full power. Budgets are
    then enforced exactly, so the result passes every check except possibly
    load balance.
    """
    w = weights or state.weights
    sol = state.solution
    p = sol.p
    score_a = w.zeta * p
    score_m = w.chi * sol.W_bs
    alpha = score_a >= 0.5
    mu = score_m >= 0.5

    if scn is not None:
        # pick each UE's BS by the data its relaxed powers would carry there;
        # a UE whose every link fell below the threshold keeps its best SC
        h = scn.channels.h[state.t - 1]
        data = data_ue_sc(sinr_ue(h, p, np.ones_like(p), scn.channels.sigma2_bs), scn.cfg.T_S, scn.cfg.W_SC)
        per_bs = data.sum(axis=2)
        serving = np.argmax(per_bs, axis=0)
        K = p.shape[1]
        live = alpha.any(axis=(0, 2)) | (per_bs.max(axis=0) >= MIN_SPECTRAL_EFF * scn.cfg.T_S * scn.cfg.W_SC)
        home = np.zeros_like(alpha)
        home[serving, np.arange(K)] = live[:, None]
        alpha &= home
        lone = live & ~alpha.any(axis=(0, 2))
        for k in np.flatnonzero(lone):
            alpha[serving[k], k, np.argmax(data[serving[k], k])] = True
    # C1: one UE per (n, s)
    alpha = _keep_max(score_a, alpha, axis=1)
    # C2: at most S_bar SCs per (n, k)
    if S_bar is not None:
        s = np.where(alpha, score_a, -np.inf)
        rank = np.argsort(np.argsort(-s, axis=2), axis=2)
        alpha &= rank < S_bar
    if scn is None:
        # C3: one BS per UE, the one with the largest total score
        per_bs = np.where(alpha, score_a, 0.0).sum(axis=2)  # (N, K)
        serving = np.argmax(per_bs, axis=0)
        has_any = alpha.any(axis=(0, 2))
        bs_mask = np.zeros_like(per_bs, dtype=bool)
        bs_mask[serving, np.arange(per_bs.shape[1])] = True
        alpha &= (bs_mask & has_any[None, :])[:, :, None]
    # C4: one LEO per BS
    mu = _keep_max(score_m, mu, axis=0)

    p_int = np.where(alpha, p, 0.0)
    if scn is None:
        P = np.where(mu.any(axis=0), sol.P, 0.0)
        W = np.where(mu, sol.W_bs, 0.0)
    else:
        cfg = scn.cfg
        busy = alpha.any(axis=(1, 2))
        orphan = busy & ~mu.any(axis=0)
        if orphan.any():
            best = np.argmax(score_m, axis=0)
            mu[best[orphan], np.flatnonzero(orphan)] = True
        share = np.where(mu, np.maximum(sol.W_bs.sum(axis=0, keepdims=True), 1.0), 0.0)
        totals = share.sum(axis=1, keepdims=True)
        W = np.divide(share * cfg.W_LEO, totals, out=np.zeros_like(share), where=totals > 0)
        P = np.where(mu.any(axis=0), cfg.P_BS_max, 0.0)
        # solver round-off can leave a UE marginally over its budget
        p_int = p_int * _shrink(p_int.sum(axis=(0, 2)), cfg.p_UE_max)[None, :, None]
    return Association(alpha.astype(float), mu.astype(float)), Allocation(p=p_int, P=P, W_bs=W)


def polish_allocation(
    scn: Scenario,
    omega: np.ndarray,
    t: int,
    assoc: Association,
    alloc: Allocation,
    scfg: ScaConfig = ScaConfig(),
    program: ConvexProgram | None = None,
) -> tuple[Allocation, list[float], ConvexProgram]:
    """Re-optimise powers and bandwidths with the integral association held fixed.

    Same convex program, with the sparsity budgets switched off, every
    unassociated link pinned at the power floor and the SCALE bounds
    expanded at the current point. Returns the allocation (zero on
    unassociated links), the objective trace and the program for reuse.
    """
    cfg = scn.cfg
    h = scn.channels.h[t - 1]
    on = assoc.alpha > 0
    mu = assoc.mu > 0
    N, K, S = h.shape
    off = CsWeights(
        zeta=np.full((N, K, S), RELAXED_WEIGHT),
        xi=np.full((N, K), RELAXED_WEIGHT),
        chi=np.full(mu.shape, RELAXED_WEIGHT),
        epsilon=scfg.epsilon,
    )
    p_prev = np.where(on, np.maximum(alloc.p, scfg.p_floor), scfg.p_floor)
    best = alloc
    history: list[float] = []
    for i in range(scfg.polish_iters):
        a, b = update_scale_coeffs(p_prev, h, scn.channels.sigma2_bs, 1)
        spec = make_spec(scn, t, omega, off, a, b, scfg, link_on=mu)
        spec.access_on = on
        floor = np.minimum(access_bound(np.log(p_prev), spec), 0.0)
        spec.lam_floor = floor - scfg.lam_margin_bits
        program = build_subproblem(spec, program)
        sol = program.solve(tol=scfg.solver_tol, max_iter=scfg.solver_max_iter)
        if not sol.ok:
            log.warning("slot %d polish step %d: solver returned %s; keeping last point", t, i, sol.status)
            break
        history.append(sol.objective)
        best = Allocation(
            p=np.where(on, sol.p, 0.0),
            P=np.where(mu.any(axis=0), cfg.P_BS_max, 0.0),
            W_bs=np.where(mu, sol.W_bs, 0.0),
        )
        if len(history) > 1 and abs(history[-1] - history[-2]) <= scfg.tol_sca * max(abs(history[-2]), 1e-12):
            break
        p_prev = np.where(on, np.maximum(sol.p, scfg.p_floor), scfg.p_floor)
    return _enforce_budgets(scn, best, assoc), history, program


def _shrink(used: np.ndarray, budget: float) -> np.ndarray:
    """Factor <= 1 that brings ``used`` within ``budget``."""
    return np.divide(budget, used, out=np.ones_like(used), where=used > budget).clip(max=1.0)


def _enforce_budgets(scn: Scenario, alloc: Allocation, assoc: Association) -> Allocation:
    """Clip round-off overshoot so the budget checks hold exactly."""
    cfg = scn.cfg
    p = alloc.p * (assoc.alpha > 0)
    used = p.sum(axis=(0, 2))
    p = p * _shrink(used, cfg.p_UE_max)[None, :, None]
    W = alloc.W_bs * (assoc.mu > 0)
    W = W * _shrink(W.sum(axis=1, keepdims=True), cfg.W_LEO)
    P = np.minimum(alloc.P, cfg.P_BS_max)
    return Allocation(p=p, P=P, W_bs=W)


def repair_load_balance(
    scn: Scenario, alloc: Allocation, assoc: Association, t: int, margin: float = 1e-9, max_rounds: int = 100
) -> Allocation:
    """Scale down UE powers at every BS whose access data exceeds its backhaul.

    Lowering powers at one BS cuts the interference it causes, which raises
    the access data of other BSs; the outer loop repeats until no BS violates.
    """
    alloc = alloc.copy()
    for _ in range(max_rounds):
        access, backhaul = slot_rates(scn, alloc, assoc, t)
        need = access.sum(axis=(1, 2))
        cap = backhaul.sum(axis=0) * (1 - margin)
        bad = np.flatnonzero(need > cap)
        if bad.size == 0:
            return alloc
        for n in bad:
            if cap[n] <= 0:
                alloc.p[n] = 0.0
                continue
            base = alloc.p[n].copy()
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                alloc.p[n] = base * mid
                acc, bh = slot_rates(scn, alloc, assoc, t)
                if acc[n].sum() <= bh[:, n].sum() * (1 - margin):
                    lo = mid
                else:
                    hi = mid
            alloc.p[n] = base * lo
    raise RuntimeError("load-balance repair did not converge")


@dataclass
class SlotRecord:
    t: int
    association: Association
    allocation: Allocation
    delivered: np.ndarray  # (K,) bits charged against demand
    iterations: int
    converged: bool
    objective_history: list[float]
    feasibility: FeasibilityReport
    trace: list[dict] = field(default_factory=list)


@dataclass
class TsLoopResult:
    slots: list[SlotRecord]
    demand: DemandState
    v: int | None  # slots needed to clear all demand; None when not met within N_T

    @property
    def met(self) -> bool:
        return self.v is not None

    @property
    def residual_bits(self) -> float:
        return float(self.demand.d.sum())

    @property
    def mean_iterations(self) -> float:
        its = [s.iterations for s in self.slots]
        return float(np.mean(its)) if its else 0.0


def delivered_bits(scn: Scenario, alloc: Allocation, assoc: Association, t: int, remaining: np.ndarray) -> np.ndarray:
    access, _ = slot_rates(scn, alloc, assoc, t)
    return np.minimum(access.sum(axis=(0, 2)), remaining)


def schedule_slot(
    scn: Scenario,
    demand: DemandState,
    t: int,
    scfg: ScaConfig = ScaConfig(),
    program: ConvexProgram | None = None,
) -> tuple[Association, Allocation, ScaState]:
    """Relax, round, polish and repair: an integral, load-balanced decision for slot ``t``."""
    state = run_sca_for_ts(scn, demand, t, scfg, program)
    assoc, alloc = recover_binaries(state, S_bar=scn.cfg.S_bar, scn=scn)
    if scfg.polish_iters:
        alloc, _, state.program = polish_allocation(scn, demand.omega, t, assoc, alloc, scfg, state.program)
    alloc = repair_load_balance(scn, alloc, assoc, t)
    return assoc, alloc, state


def run_min_time(scn: Scenario, scfg: ScaConfig = ScaConfig()) -> TsLoopResult:
    """Drain all UE demand slot by slot; stops early once every UE is served."""
    cfg = scn.cfg
    demand = DemandState(np.full(cfg.K, cfg.demand_bits))
    program: ConvexProgram | None = None
    slots: list[SlotRecord] = []
    t = 1
    while t <= cfg.N_T and not demand.done:
        assoc, alloc, state = schedule_slot(scn, demand, t, scfg, program)
        program = state.program
        report = check_feasibility(scn, alloc, assoc, t)
        got = delivered_bits(scn, alloc, assoc, t, demand.d)
        demand = update_demand(demand, t, got)
        slots.append(SlotRecord(t, assoc, alloc, got, state.iteration, state.converged,
                                state.objective_history, report, state.trace))
        log.debug("slot %d: %d iterations, delivered %.0f bits", t, state.iteration, got.sum())
        t += 1
    v = demand.t if demand.done else None
    return TsLoopResult(slots, demand, v)
