"""Exhaustive-search reference for one slot on very small instances.

Every association (UE to (BS, SC) or silent, BS to LEO or unlinked) is
enumerated together with a grid of UE powers and LEO bandwidth shares; BSs
with a link transmit at full power. The score is the weighted data credited
to UEs (capped at their demand), subject to every BS's access data fitting
its backhaul data.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .config import PAPER_LEO_POSITIONS, RunConfig, desk_profile
from .rates import Allocation, Association, data_bs_leo, data_ue_sc
from .scenario import Scenario


def tiny_profile(**overrides) -> RunConfig:
    """One LEO, two BSs, two UEs, two SCs, one SC per UE."""
    base = dict(M=1, N=2, K=2, N_SC=2, S_bar=1, bs_per_cluster=2, leo_positions=PAPER_LEO_POSITIONS[:1])
    base.update(overrides)
    return desk_profile(**base)


@dataclass
class OracleResult:
    value: float  # weighted credited data, bits
    association: Association
    allocation: Allocation
    evaluated: int


def power_grid(p_max: float, levels: int = 8, span_db: float = 30.0) -> np.ndarray:
    return np.geomspace(p_max * 10 ** (-span_db / 10), p_max, levels)


def bandwidth_grid(W_LEO: float, levels: int = 4) -> np.ndarray:
    return W_LEO * np.arange(1, levels + 1) / levels


def weighted_credit(access_per_ue: np.ndarray, omega: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """sum_k omega_k min(D_k, d_k), broadcasting over leading axes."""
    return (np.minimum(access_per_ue, demand) * omega).sum(axis=-1)


def _ue_options(N: int, S: int) -> list[tuple[int, int] | None]:
    return [None] + [(n, s) for n in range(N) for s in range(S)]


def _backhaul_options(cfg: RunConfig, w_levels: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(mu, W) pairs: each BS picks a LEO or none, then a grid share; LEO bands respected."""
    M, N = cfg.M, cfg.N
    out = []
    for links in itertools.product(range(-1, M), repeat=N):
        on = [n for n in range(N) if links[n] >= 0]
        for shares in itertools.product(w_levels, repeat=len(on)):
            mu = np.zeros((M, N))
            W = np.zeros((M, N))
            for n, w in zip(on, shares):
                mu[links[n], n] = 1.0
                W[links[n], n] = w
            if np.all(W.sum(axis=1) <= cfg.W_LEO * (1 + 1e-12)):
                out.append((mu, W))
    return out


def exhaustive_slot(
    scn: Scenario, omega: np.ndarray, demand: np.ndarray, t: int = 1,
    p_levels: int = 8, w_levels: int = 4,
) -> OracleResult:
    """Best grid decision for slot ``t``; exact over the grid, exponential in size."""
    cfg, ch = scn.cfg, scn.channels
    if cfg.S_bar != 1:
        raise ValueError("the exhaustive search assumes one SC per UE")
    h, g = ch.h[t - 1], ch.g[t - 1]
    N, K, S = h.shape
    omega = np.asarray(omega, float)
    demand = np.asarray(demand, float)
    pg = power_grid(cfg.p_UE_max, p_levels)
    backhaul = _backhaul_options(cfg, bandwidth_grid(cfg.W_LEO, w_levels))
    # backhaul data per option and BS, independent of the access side
    bh = np.array([
        data_bs_leo(np.full(N, cfg.P_BS_max), W, g, mu, ch.delta_leo, cfg.T_S).sum(axis=0)
        for mu, W in backhaul
    ])  # (B, N)
    linked = np.array([mu.any(axis=0) for mu, _ in backhaul])  # (B, N)

    best_val, best = -1.0, None
    evaluated = 0
    for choice in itertools.product(_ue_options(N, S), repeat=K):
        used = [c for c in choice if c is not None]
        if len(set(used)) != len(used):
            continue  # two UEs on one (BS, SC)
        tx = [k for k in range(K) if choice[k] is not None]
        # powers of the transmitting UEs over the full grid, shape (G, |tx|)
        grids = np.array(list(itertools.product(pg, repeat=len(tx))), dtype=float) if tx else np.zeros((1, 0))
        G = grids.shape[0]
        data = np.zeros((G, K))
        for i, k in enumerate(tx):
            n, s = choice[k]
            interf = np.zeros(G)
            for j, kk in enumerate(tx):
                if kk != k and choice[kk][1] == s:
                    interf += grids[:, j] * h[n, kk, s]
            sinr = grids[:, i] * h[n, k, s] / (interf + ch.sigma2_bs)
            data[:, k] = data_ue_sc(sinr, cfg.T_S, cfg.W_SC)
        load = np.zeros((G, N))
        for k in tx:
            load[:, choice[k][0]] += data[:, k]
        score = weighted_credit(data, omega, demand)  # (G,)
        busy = load > 0
        # (G, B): every loaded BS needs a link and enough backhaul
        ok = np.all(~busy[:, None, :] | (linked[None] & (load[:, None, :] <= bh[None])), axis=2)
        evaluated += G * len(backhaul)
        if not ok.any():
            continue
        gi, bi = np.unravel_index(np.argmax(np.where(ok, score[:, None], -1.0)), ok.shape)
        if score[gi] > best_val:
            best_val = float(score[gi])
            alpha = np.zeros((N, K, S))
            p = np.zeros((N, K, S))
            for i, k in enumerate(tx):
                n, s = choice[k]
                alpha[n, k, s] = 1.0
                p[n, k, s] = grids[gi, i]
            mu, W = backhaul[bi]
            best = (Association(alpha, mu.copy()),
                    Allocation(p, np.where(mu.any(axis=0), cfg.P_BS_max, 0.0), W.copy()))
    if best is None:
        raise RuntimeError("no feasible grid point")
    return OracleResult(best_val, best[0], best[1], evaluated)


__all__ = ["OracleResult", "bandwidth_grid", "exhaustive_slot", "power_grid", "tiny_profile", "weighted_credit"]
