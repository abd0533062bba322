"""Greedy baseline: strongest-link association, equal backhaul split,
per-UE water-filling and a per-BS power cap found by bisection so that the
interference-free access data never exceeds the backhaul data."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import GreedyConfig
from .rates import (
    Allocation,
    Association,
    DemandState,
    FeasibilityReport,
    check_feasibility,
    data_bs_leo,
    update_demand,
)
from .sca import SlotRecord, TsLoopResult, delivered_bits
from .scenario import Scenario

log = logging.getLogger(__name__)


def waterfill(gains: np.ndarray, noise: float, budget: float) -> np.ndarray:
    """Maximise sum log(1 + p_s g_s / noise) subject to sum p_s = budget, p >= 0.

    Exact: sort the floors noise/g, find the largest active set whose water
    level sits above its highest floor.
    """
    g = np.asarray(gains, dtype=float)
    if g.size == 0:
        return np.zeros(0)
    if np.any(g <= 0):
        raise ValueError("gains must be positive")
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if budget == 0:
        return np.zeros_like(g)
    floors = noise / g
    order = np.argsort(floors)
    f = floors[order]
    csum = np.cumsum(f)
    n = np.arange(1, f.size + 1)
    levels = (budget + csum) / n
    # active set {0..j} is valid while its level stays above floor j; the
    # strongest channel is always active (the test can miss it when the
    # budget is below float resolution of the floor)
    valid = np.flatnonzero(levels > f)
    j = int(valid[-1]) if valid.size else 0
    level = levels[j]
    return np.maximum(level - floors, 0.0)


@dataclass
class GreedyState:
    """Per-slot greedy decisions plus the bisection diagnostics of every BS."""

    K_D: np.ndarray  # indices of UEs with demand left
    served: list[list[int]]  # UEs per BS
    cap: np.ndarray  # (N,) auxiliary per-UE power cap finally used
    bracket: list[tuple[float, float]]  # (p_low, p_up) at exit
    bisect_iters: np.ndarray  # (N,)
    fallback: np.ndarray  # (N,) True when the iteration limit was hit
    association: Association | None = None
    allocation: Allocation | None = None


def greedy_associate(scn: Scenario, K_D: np.ndarray, t: int) -> tuple[Association, Allocation, list[list[int]]]:
    """Associations, full BS power and an equal LEO bandwidth split at slot ``t``.

    UE powers are left at zero; the power step fills them in.
    """
    cfg, ch = scn.cfg, scn.channels
    K_D = np.asarray(K_D, dtype=int)
    if K_D.size == 0:
        raise ValueError("no UE with remaining demand")
    h, g = ch.h[t - 1], ch.g[t - 1]
    N, K, S = h.shape
    M = g.shape[0]

    mu = np.zeros((M, N))
    mu[np.argmax(g, axis=0), np.arange(N)] = 1.0
    linked = mu.sum(axis=1, keepdims=True)
    W_bs = np.divide(mu * cfg.W_LEO, linked, out=np.zeros_like(mu), where=linked > 0)
    P = np.full(N, cfg.P_BS_max)

    home = np.argmax(h.mean(axis=2)[:, K_D], axis=0)
    served = [[int(k) for k, n in zip(K_D, home) if n == bs] for bs in range(N)]

    alpha = np.zeros((N, K, S))
    for n, ues in enumerate(served):
        free = np.ones(S, bool)
        held = dict.fromkeys(ues, 0)
        while free.any() and any(c < cfg.S_bar for c in held.values()):
            for k in ues:  # ascending index
                if held[k] >= cfg.S_bar or not free.any():
                    continue
                s = int(np.argmax(np.where(free, h[n, k], -np.inf)))
                alpha[n, k, s] = 1.0
                free[s] = False
                held[k] += 1
    return Association(alpha, mu), Allocation(np.zeros((N, K, S)), P, W_bs), served


def _interference_free_bits(h_nk: np.ndarray, p: np.ndarray, sigma2: float, T_S: float, W_SC: float) -> float:
    return float(T_S * W_SC * np.log2(1.0 + p * h_nk / sigma2).sum())


def _fill_bs(h_n: np.ndarray, alpha_n: np.ndarray, ues: list[int], cap: float, scn: Scenario) -> tuple[np.ndarray, float]:
    """Water-fill every UE of one BS with budget min(cap, p_max); returns powers and data."""
    cfg, sigma2 = scn.cfg, scn.channels.sigma2_bs
    p_n = np.zeros_like(h_n)
    total = 0.0
    for k in ues:
        sc = np.flatnonzero(alpha_n[k])
        if sc.size == 0:
            continue
        p_n[k, sc] = waterfill(h_n[k, sc], sigma2, min(cap, cfg.p_UE_max))
        total += _interference_free_bits(h_n[k, sc], p_n[k, sc], sigma2, cfg.T_S, cfg.W_SC)
    return p_n, total


def bisect_cap(
    scn: Scenario, assoc: Association, alloc: Allocation, n: int, ues: list[int], t: int, gcfg: GreedyConfig
) -> tuple[np.ndarray, float, tuple[float, float], int, bool]:
    """Powers of BS ``n``'s UEs such that their interference-free data fits the backhaul.

    Returns (powers (K, S), cap, bracket, iterations, fallback).
    """
    cfg, ch = scn.cfg, scn.channels
    h_n = ch.h[t - 1][n]
    alpha_n = assoc.alpha[n]
    r_bs = float(data_bs_leo(alloc.P, alloc.W_bs, ch.g[t - 1], assoc.mu, ch.delta_leo, cfg.T_S)[:, n].sum())
    lo, up = 0.0, 2.0 * cfg.p_UE_max
    if r_bs <= 0:
        return np.zeros_like(h_n), 0.0, (lo, up), 0, False
    p_full, r_sum = _fill_bs(h_n, alpha_n, ues, cfg.p_UE_max, scn)
    if r_sum <= r_bs:
        return p_full, cfg.p_UE_max, (lo, up), 0, False

    best = (np.zeros_like(h_n), 0.0)
    for it in range(1, gcfg.max_bisect + 1):
        mid = 0.5 * (lo + up)
        p_n, r_sum = _fill_bs(h_n, alpha_n, ues, mid, scn)
        if r_sum > r_bs:
            up = mid
            continue
        best = (p_n, mid)
        if r_bs - r_sum <= gcfg.eps_rate_bits:
            return p_n, mid, (lo, up), it, False
        lo = mid
    log.debug("slot %d BS %d: bisection hit %d iterations", t, n, gcfg.max_bisect)
    return best[0], best[1], (lo, up), gcfg.max_bisect, True


def greedy_slot(scn: Scenario, demand: DemandState, t: int, gcfg: GreedyConfig = GreedyConfig()) -> GreedyState:
    K_D = np.flatnonzero(demand.d > 0)
    assoc, alloc, served = greedy_associate(scn, K_D, t)
    N = scn.cfg.N
    cap = np.zeros(N)
    brackets: list[tuple[float, float]] = []
    iters = np.zeros(N, dtype=int)
    fallback = np.zeros(N, dtype=bool)
    for n in range(N):
        p_n, cap[n], br, iters[n], fallback[n] = bisect_cap(scn, assoc, alloc, n, served[n], t, gcfg)
        alloc.p[n] = p_n
        brackets.append(br)
    return GreedyState(K_D, served, cap, brackets, iters, fallback, assoc, alloc)


def run_greedy(scn: Scenario, gcfg: GreedyConfig = GreedyConfig()) -> TsLoopResult:
    """Greedy counterpart of the iterative loop; same demand accounting."""
    cfg = scn.cfg
    demand = DemandState(np.full(cfg.K, cfg.demand_bits))
    slots: list[SlotRecord] = []
    t = 1
    while t <= cfg.N_T and not demand.done:
        st = greedy_slot(scn, demand, t, gcfg)
        report: FeasibilityReport = check_feasibility(scn, st.allocation, st.association, t)
        got = delivered_bits(scn, st.allocation, st.association, t, demand.d)
        demand = update_demand(demand, t, got)
        trace = [{"t": t, "bs": n, "cap": float(st.cap[n]), "iterations": int(st.bisect_iters[n]),
                  "fallback": bool(st.fallback[n])} for n in range(cfg.N)]
        slots.append(SlotRecord(t, st.association, st.allocation, got, 0, True, [], report, trace))
        t += 1
    v = demand.t if demand.done else None
    return TsLoopResult(slots, demand, v)
