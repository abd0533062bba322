"""Rate expressions, constraint checks and demand bookkeeping for one time slot.

Arrays are per-slot slices: UE powers and access associations are (N, K, S),
backhaul quantities are (M, N), BS powers are (N,).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario


@dataclass
class Association:
    alpha: np.ndarray  # (N, K, S) in {0, 1}
    mu: np.ndarray  # (M, N) in {0, 1}


@dataclass
class Allocation:
    p: np.ndarray  # (N, K, S) W
    P: np.ndarray  # (N,) W
    W_bs: np.ndarray  # (M, N) Hz

    def copy(self) -> "Allocation":
        return Allocation(self.p.copy(), self.P.copy(), self.W_bs.copy())


def full_association(shape_access: tuple[int, int, int], shape_backhaul: tuple[int, int]) -> Association:
    return Association(np.ones(shape_access), np.ones(shape_backhaul))


def sinr_ue(h: np.ndarray, p: np.ndarray, alpha: np.ndarray, sigma2: float) -> np.ndarray:
    """Uplink SINR for every (n, k, s).

    Interference at BS n on SC s comes from every other UE j transmitting on
    s, whichever BS it is associated with, received through h[n, j, s].
    """
    q = np.einsum("ijs,ijs->js", alpha, p)  # UE j's total power on SC s
    rx = h * q[None, :, :]  # (N, J, S): power of UE j seen at BS n
    interference = rx.sum(axis=1, keepdims=True) - rx
    # cancellation error from the subtraction can leave tiny negatives
    interference = np.maximum(interference, 0.0)
    return alpha * p * h / (interference + sigma2)


def data_ue_sc(sinr: np.ndarray, T_S: float, W_SC: float) -> np.ndarray:
    return T_S * W_SC * np.log2(1.0 + sinr)


def data_ue_total(per_sc: np.ndarray) -> np.ndarray:
    """Sum over (n, s) of per-SC data, giving one value per UE."""
    return per_sc.sum(axis=(0, 2))


def data_bs_leo(P: np.ndarray, W_bs: np.ndarray, g: np.ndarray, mu: np.ndarray, delta: float, T_S: float) -> np.ndarray:
    """Backhaul data per (m, n); exactly zero when mu = 0 or W = 0."""
    P = np.broadcast_to(P, W_bs.shape)
    out = np.zeros_like(W_bs, dtype=float)
    on = (mu > 0) & (W_bs > 0)
    snr = P[on] * g[on] / (W_bs[on] * delta)
    out[on] = T_S * W_bs[on] * np.log2(1.0 + snr)
    return out


def slot_rates(scn: Scenario, alloc: Allocation, assoc: Association, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-(n,k,s) access data and per-(m,n) backhaul data at slot ``t`` (1-based)."""
    cfg, ch = scn.cfg, scn.channels
    sinr = sinr_ue(ch.h[t - 1], alloc.p, assoc.alpha, ch.sigma2_bs)
    access = data_ue_sc(sinr, cfg.T_S, cfg.W_SC)
    backhaul = data_bs_leo(alloc.P, alloc.W_bs, ch.g[t - 1], assoc.mu, ch.delta_leo, cfg.T_S)
    return access, backhaul


@dataclass
class FeasibilityReport:
    ok: dict[str, bool]
    worst: dict[str, float]

    @property
    def feasible(self) -> bool:
        return all(self.ok.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.ok.items() if not v]


# Slack for the "exact" families; only absorbs float round-off.
EXACT_RTOL = 1e-12


def check_feasibility(
    scn: Scenario, alloc: Allocation, assoc: Association, t: int, c6_rtol: float = 1e-6
) -> FeasibilityReport:
    """Evaluate every constraint family at slot ``t``. Never raises.

    ``worst`` holds the largest violation of each family (<= 0 means slack).
    """
    cfg = scn.cfg
    alpha, mu = assoc.alpha, assoc.mu
    worst: dict[str, float] = {}
    ok: dict[str, bool] = {}

    def record(name: str, excess: np.ndarray, scale: float | np.ndarray) -> None:
        excess = np.asarray(excess, dtype=float)
        worst[name] = float(excess.max()) if excess.size else 0.0
        ok[name] = bool(np.all(excess <= EXACT_RTOL * np.maximum(scale, 1.0)))

    binary = np.concatenate([alpha.ravel(), mu.ravel()])
    ok["C10"] = bool(np.all((binary == 0) | (binary == 1)))
    worst["C10"] = float(np.max(np.minimum(np.abs(binary), np.abs(binary - 1)), initial=0.0))

    record("C1", alpha.sum(axis=1) - 1, 1.0)
    record("C2", alpha.sum(axis=2) - cfg.S_bar, cfg.S_bar)
    record("C3", (alpha.sum(axis=2) > 0).sum(axis=0) - 1, 1.0)
    record("C4", mu.sum(axis=0) - 1, 1.0)
    record("C5", (mu * alloc.W_bs).sum(axis=1) - cfg.W_LEO, cfg.W_LEO)
    record("C7", (alpha * alloc.p).sum(axis=(0, 2)) - cfg.p_UE_max, cfg.p_UE_max)
    record("C8", alloc.P - cfg.P_BS_max, cfg.P_BS_max)
    negatives = np.concatenate([alloc.p.ravel(), alloc.P.ravel(), alloc.W_bs.ravel()])
    ok["nonneg"] = bool(np.all(negatives >= 0))
    worst["nonneg"] = float(-negatives.min(initial=0.0))

    access, backhaul = slot_rates(scn, alloc, assoc, t)
    ue_in = access.sum(axis=(1, 2))
    bs_out = backhaul.sum(axis=0)
    excess = ue_in - bs_out
    worst["C6"] = float(excess.max())
    ok["C6"] = bool(np.all(excess <= c6_rtol * np.maximum(bs_out, ue_in)))
    return FeasibilityReport(ok, worst)


@dataclass
class DemandState:
    """Remaining demand per UE. ``history[t]`` is the remainder after slot t."""

    D: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.D = np.asarray(self.D, dtype=float)
        if not self.history:
            self.history = [self.D.copy()]

    @property
    def t(self) -> int:
        """Number of slots already accounted for."""
        return len(self.history) - 1

    @property
    def d(self) -> np.ndarray:
        return self.history[-1]

    @property
    def omega(self) -> np.ndarray:
        """Weights for the next slot: demand still outstanding when it starts."""
        return self.history[-1].copy()

    @property
    def done(self) -> bool:
        return bool(np.all(self.d <= 0))


def update_demand(state: DemandState, t: int, delivered: np.ndarray) -> DemandState:
    """Subtract the bits delivered in slot ``t`` (clamped at zero)."""
    if t != state.t + 1:
        raise ValueError(f"expected slot {state.t + 1}, got {t}")
    delivered = np.asarray(delivered, dtype=float)
    if np.any(delivered < 0):
        raise ValueError("delivered bits must be nonnegative")
    new = np.maximum(0.0, state.d - delivered)
    return DemandState(state.D, state.history + [new])
