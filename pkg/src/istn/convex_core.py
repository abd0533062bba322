"""Convex subproblem of one relaxation iteration, posed as an exponential-cone program.

UE powers enter in the log domain (``p = exp(p_bar)``), so every power
constraint becomes a log-sum-exp bound and the lower-bounded access rate is
concave. The backhaul rate ``W log(1 + P g / (W delta))`` is the perspective
of a logarithm and is written with ``rel_entr``.

Internally the program works in scaled units: bandwidth in MHz, data in
kbit, and weights normalised to a unit maximum. ``SubproblemSolution``
reports everything back in SI units (Hz, bits).

The program is DPP-compliant: it is compiled once per problem size and then
re-solved with new parameter values, which is what the iterative loop does
hundreds of times per run.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

LN2 = math.log(2.0)
KBIT = 1e3
MHZ = 1e6


class SubproblemError(ValueError):
    """Raised when a subproblem specification violates its invariants."""


def scale_bound_coeffs(x_prev: float | np.ndarray) -> tuple:
    """Coefficients (a, b) of the bound a*log2(x) + b <= log2(1 + x), tight at x_prev."""
    x = np.asarray(x_prev, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("expansion point must be positive")
    a = x / (x + 1.0)
    b = np.log2(1.0 + x) - a * np.log2(x)
    if a.ndim == 0:
        return float(a), float(b)
    return a, b


@dataclass
class SubproblemSpec:
    """Everything one convex subproblem needs, for one time slot."""

    omega: np.ndarray  # (K,) weights, bits
    h: np.ndarray  # (N, K, S)
    g: np.ndarray  # (M, N)
    zeta: np.ndarray  # (N, K, S)
    xi: np.ndarray  # (N, K)
    chi: np.ndarray  # (M, N), per Hz
    a: np.ndarray  # (N, K, S)
    b: np.ndarray  # (N, K, S)
    p_max: np.ndarray  # (K,) W
    P_max: np.ndarray  # (N,) W
    W_LEO: float  # Hz
    S_bar: int
    T_S: float
    W_SC: float
    sigma2: float
    delta: float
    active: np.ndarray | None = None  # (K,) UEs allowed to transmit
    link_on: np.ndarray | None = None  # (M, N) backhaul links still in play
    access_on: np.ndarray | None = None  # (N, K, S) access links allowed to carry power
    lam_floor: np.ndarray | None = None  # (N, K) bits, lower bound on access epigraph
    demand_cap: np.ndarray | None = None  # (K,) bits; data beyond it earns nothing
    p_floor: float = 1e-12

    @property
    def dims(self) -> tuple[int, int, int, int]:
        N, K, S = self.h.shape
        return N, K, S, self.g.shape[0]

    def validate(self) -> None:
        N, K, S, M = self.dims
        shapes = {
            "omega": (K,), "zeta": (N, K, S), "xi": (N, K), "chi": (M, N),
            "a": (N, K, S), "b": (N, K, S), "p_max": (K,), "P_max": (N,), "g": (M, N),
        }
        if self.lam_floor is not None and np.shape(self.lam_floor) != (N, K):
            raise SubproblemError(f"lam_floor has shape {np.shape(self.lam_floor)}, expected {(N, K)}")
        if self.access_on is not None and np.shape(self.access_on) != (N, K, S):
            raise SubproblemError(f"access_on has shape {np.shape(self.access_on)}, expected {(N, K, S)}")
        if self.demand_cap is not None and np.shape(self.demand_cap) != (K,):
            raise SubproblemError(f"demand_cap has shape {np.shape(self.demand_cap)}, expected {(K,)}")
        if self.link_on is not None and np.shape(self.link_on) != (M, N):
            raise SubproblemError(f"link_on has shape {np.shape(self.link_on)}, expected {(M, N)}")
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise SubproblemError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if np.any(self.a <= 0) or np.any(self.a > 1):
            raise SubproblemError("SCALE coefficient a must lie in (0, 1]")
        for name in ("zeta", "xi", "chi", "p_max", "P_max", "h"):
            if np.any(~(np.asarray(getattr(self, name)) > 0)):
                raise SubproblemError(f"{name} must be strictly positive")
        if np.any(self.g < 0) or np.any(self.omega < 0):
            raise SubproblemError("gains and weights must be nonnegative")
        for name in ("W_LEO", "S_bar", "T_S", "W_SC", "sigma2", "delta", "p_floor"):
            if not getattr(self, name) > 0:
                raise SubproblemError(f"{name} must be positive")


@dataclass
class SubproblemSolution:
    p_bar: np.ndarray  # (N, K, S) natural-log watts
    P: np.ndarray  # (N,) total BS power
    P_link: np.ndarray  # (M, N) BS power per LEO link
    W_bs: np.ndarray  # (M, N) Hz
    lambda_ue: np.ndarray  # (N, K) bits
    lambda_bs: np.ndarray  # (N,) bits
    objective: float  # bits, weights normalised to max 1
    status: str
    solve_time: float

    @property
    def p(self) -> np.ndarray:
        return np.exp(self.p_bar)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near-optimal")


_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "near-optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
}

# Cap on chi in 1/MHz (bandwidth of a switched-off link forced below 1 Hz);
# larger coefficients only hurt the conditioning.
CHI_CAP_PER_MHZ = 1e6
# Backhaul SNR ceiling (power spectral density cap). Without it a link can
# keep power while its bandwidth shrinks to nothing, which leaves the solver
# chasing an unbounded SNR.
BACKHAUL_SNR_CAP = 1e5


# Clarabel settings tried in turn until one does not stall; shorter
# interior-point steps rescue most of the runs that do
SOLVER_RETRIES: tuple[dict, ...] = ({}, {"max_step_fraction": 0.8}, {"max_step_fraction": 0.6})


class ConvexProgram:
    """Parametrised convex program for fixed (N, K, S, M, T_S, W_SC)."""

    def __init__(self, N: int, K: int, S: int, M: int, T_S: float, W_SC: float):
        self.dims = (N, K, S, M)
        self.T_S, self.W_SC = T_S, W_SC
        L = N * K * S
        r = np.arange(L).reshape(N, K, S)
        self._r = r

        self.p_bar = cp.Variable(L, name="p_bar")
        self.u = cp.Variable(L, name="log_interference")
        self.lambda_ue = cp.Variable(N * K, name="lambda_ue")
        self.lambda_bs = cp.Variable(N, name="lambda_bs")
        # BS power on each LEO link; one budget per BS
        self.P_link = cp.Variable((M, N), nonneg=True, name="P_link")
        self.W = cp.Variable((M, N), nonneg=True, name="W_mhz")

        par = self.params = {
            "ln_zeta": cp.Parameter(L),
            "ln_xi": cp.Parameter(L),
            "chi": cp.Parameter((M, N), nonneg=True),
            "a": cp.Parameter(L, nonneg=True),
            "const": cp.Parameter(L),
            "ln_hint": cp.Parameter((L, max(K - 1, 1))),
            "ln_sigma2": cp.Parameter(L),
            "weight": cp.Parameter(K, nonneg=True),
            "d_cap": cp.Parameter(K),
            "p_lo": cp.Parameter(L),
            "p_hi": cp.Parameter(L),
            "ln_pmax": cp.Parameter(K),
            "P_max": cp.Parameter(N, nonneg=True),
            "W_LEO": cp.Parameter(nonneg=True),
            "snr_coef": cp.Parameter((M, N), nonneg=True),
            "lam_lo": cp.Parameter(N * K),
            "u_hi": cp.Parameter(L),
            "ln_pmax_ks": cp.Parameter(K * S),
            "W_hi": cp.Parameter((M, N), nonneg=True),
            "P_hi": cp.Parameter((M, N), nonneg=True),
        }
        pb = self.p_bar
        cons = [pb >= par["p_lo"], pb <= par["p_hi"]]

        def lse_rows(expr, index: np.ndarray):
            rows = cp.reshape(expr[index.ravel()], index.shape, order="C")
            return cp.log_sum_exp(rows, axis=1)

        zeta_pb = pb + par["ln_zeta"]
        # one SC per BS carries at most one UE
        cons.append(lse_rows(zeta_pb, r.transpose(0, 2, 1).reshape(N * S, K)) <= 0)
        # at most S_bar SCs per (BS, UE); S_bar enters as log bound set in load()
        self._ln_sbar = cp.Parameter()
        cons.append(lse_rows(zeta_pb, r.reshape(N * K, S)) <= self._ln_sbar)
        # one serving BS per UE
        ue_rows = r.transpose(1, 0, 2).reshape(K, N * S)
        cons.append(lse_rows(pb + par["ln_xi"], ue_rows) <= 0)
        # UE power budget
        cons.append(lse_rows(pb, ue_rows) <= par["ln_pmax"])

        # log of each UE's total power on each SC, shared by every receiving BS
        self.log_q = cp.Variable(K * S, name="log_q")
        q_rows = r.transpose(1, 2, 0).reshape(K * S, N)
        cons.append(self.log_q >= lse_rows(pb, q_rows))
        # log(interference + noise) epigraph, one row per (n, k, s)
        if K > 1:
            qr = np.arange(K * S).reshape(K, S)
            idx = np.empty((L, K - 1), dtype=int)
            for n in range(N):
                for k in range(K):
                    others = [j for j in range(K) if j != k]
                    for s in range(S):
                        idx[r[n, k, s]] = qr[others, s]
            self._hint_idx = idx
            terms = cp.reshape(self.log_q[idx.ravel()], idx.shape, order="C") + par["ln_hint"]
            terms = cp.hstack([terms, cp.reshape(par["ln_sigma2"], (L, 1), order="C")])
            cons.append(self.u >= cp.log_sum_exp(terms, axis=1))
        else:
            self._hint_idx = None
            cons.append(self.u >= par["ln_sigma2"])

        # lower-bounded access data per (n, k), kbit
        sum_s = sp.kron(sp.eye(N * K), np.ones((1, S)), format="csr")
        access = sum_s @ (cp.multiply(par["a"], pb - self.u) + par["const"])
        cons.append(self.lambda_ue <= access)
        # Floor on the per-link access data. The iterative loop sets it just
        # below min(0, bound at the expansion point); without a floor,
        # negative lambda would free up backhaul capacity for other UEs.
        cons.append(self.lambda_ue >= par["lam_lo"])
        # same idea for the epigraph variables: cap them at values every
        # feasible power vector respects
        cons += [self.u <= par["u_hi"], self.log_q <= par["ln_pmax_ks"]]

        # load balance
        sum_k = sp.kron(sp.eye(N), np.ones((1, K)), format="csr")
        cons.append(sum_k @ self.lambda_ue <= self.lambda_bs)

        # backhaul data, kbit: T_S * W * log2(1 + P g / (W delta)), W in MHz
        bh_scale = T_S * MHZ / KBIT / LN2
        backhaul = -cp.rel_entr(self.W, self.W + cp.multiply(par["snr_coef"], self.P_link))
        cons.append(self.lambda_bs <= bh_scale * cp.sum(backhaul, axis=0))

        cons.append(cp.sum(cp.multiply(par["chi"], self.W), axis=0) <= 1)
        cons.append(cp.sum(self.W, axis=1) <= par["W_LEO"])
        cons.append(cp.sum(self.P_link, axis=0) <= par["P_max"])
        # switched-off links are pinned at zero; left free they make the
        # exponential cones degenerate (W -> 0 with P > 0)
        cons += [self.W <= par["W_hi"], self.P_link <= par["P_hi"]]
        cons.append(cp.multiply(par["snr_coef"], self.P_link) <= BACKHAUL_SNR_CAP * self.W)

        # credited data per UE, clipped at what it still needs
        self.served = cp.Variable(K, name="served")
        sum_n = sp.kron(np.ones((1, N)), sp.eye(K), format="csr")
        cons += [self.served <= sum_n @ self.lambda_ue, self.served <= par["d_cap"]]

        self.constraints = cons
        self.problem = cp.Problem(cp.Maximize(par["weight"] @ self.served), cons)
        self._omega_scale = 1.0

    @classmethod
    def for_spec(cls, spec: SubproblemSpec) -> "ConvexProgram":
        N, K, S, M = spec.dims
        return cls(N, K, S, M, spec.T_S, spec.W_SC)

    def matches(self, spec: SubproblemSpec) -> bool:
        return self.dims == spec.dims and (self.T_S, self.W_SC) == (spec.T_S, spec.W_SC)

    def load(self, spec: SubproblemSpec) -> "ConvexProgram":
        spec.validate()
        if not self.matches(spec):
            raise SubproblemError("spec dimensions do not match this program")
        N, K, S, M = self.dims
        par = self.params
        tw = spec.T_S * spec.W_SC / KBIT
        a = spec.a.ravel()
        par["ln_zeta"].value = np.log(spec.zeta).ravel()
        par["ln_xi"].value = np.repeat(np.log(spec.xi), S, axis=1).ravel()
        par["chi"].value = np.minimum(spec.chi * MHZ, CHI_CAP_PER_MHZ)
        par["a"].value = tw * a / LN2
        par["const"].value = tw * (a * np.log2(spec.h).ravel() + spec.b.ravel())
        # smallest access bound any feasible point can reach: floor power,
        # every other UE at full power
        others = np.einsum("njs,j->ns", spec.h, spec.p_max)[:, None, :] - spec.h * spec.p_max[None, :, None]
        u_max = np.log(np.maximum(others, 0.0) + spec.sigma2).ravel()
        worst = (par["a"].value * (math.log(spec.p_floor) - u_max) + par["const"].value).reshape(N * K, S).sum(axis=1)
        if spec.lam_floor is None:
            par["lam_lo"].value = worst - 1.0 - 1e-6 * np.abs(worst)
        else:
            par["lam_lo"].value = np.maximum(np.asarray(spec.lam_floor, float).ravel() / KBIT, worst)
        par["u_hi"].value = u_max + 1e-6
        par["ln_pmax_ks"].value = np.repeat(np.log(spec.p_max), S) + 1e-9
        if self._hint_idx is not None:
            ln_h = np.log(spec.h)
            vals = np.empty(self._hint_idx.shape)
            for n in range(N):
                for k in range(K):
                    others = [j for j in range(K) if j != k]
                    for s in range(S):
                        # interferer j reaches BS n through h[n, j, s]
                        vals[self._r[n, k, s]] = ln_h[n, others, s]
            par["ln_hint"].value = vals
        else:
            par["ln_hint"].value = np.zeros((N * K * S, 1))
        par["ln_sigma2"].value = np.full(N * K * S, math.log(spec.sigma2))
        omega = np.asarray(spec.omega, dtype=float)
        scale = omega.max() if omega.max() > 0 else 1.0
        self._omega_scale = scale
        # finished UEs keep a token weight so their epigraph variables stay bounded
        w = np.maximum(omega / scale, 1e-6)
        par["weight"].value = w
        if spec.demand_cap is None:
            # nothing a UE can receive in one slot exceeds this
            cap = np.full(K, N * S * spec.T_S * spec.W_SC * 64.0)
        else:
            cap = np.asarray(spec.demand_cap, float)
        par["d_cap"].value = cap / KBIT
        lo = math.log(spec.p_floor)
        par["p_lo"].value = np.full(N * K * S, lo)
        active = np.ones(K, bool) if spec.active is None else np.asarray(spec.active, bool)
        open_ = np.broadcast_to(active[None, :, None], (N, K, S))
        if spec.access_on is not None:
            open_ = open_ & np.asarray(spec.access_on, bool)
        hi = np.where(open_, np.log(spec.p_max)[None, :, None], lo)
        par["p_hi"].value = hi.ravel().copy()
        # a UE pinned at the floor on every link still has to fit its budget
        par["ln_pmax"].value = np.maximum(np.log(spec.p_max), lo + math.log(N * S) + 1e-9)
        par["P_max"].value = np.asarray(spec.P_max, dtype=float)
        par["W_LEO"].value = spec.W_LEO / MHZ
        par["snr_coef"].value = spec.g / (spec.delta * MHZ)
        on = np.ones((M, N), bool) if spec.link_on is None else np.asarray(spec.link_on, bool)
        par["W_hi"].value = np.where(on, spec.W_LEO / MHZ, 0.0)
        par["P_hi"].value = np.where(on, np.asarray(spec.P_max, float)[None, :], 0.0)
        self._ln_sbar.value = math.log(spec.S_bar)
        self.spec = spec
        return self

    def solve(self, tol: float = 1e-7, max_iter: int = 200) -> SubproblemSolution:
        N, K, S, M = self.dims
        start = time.perf_counter()
        status = "numerical-failure"
        for extra in SOLVER_RETRIES:
            try:
                self.problem.solve(
                    solver=cp.CLARABEL,
                    tol_gap_abs=tol,
                    tol_gap_rel=tol,
                    tol_feas=tol,
                    max_iter=max_iter,
                    warm_start=False,
                    **extra,
                )
                status = _STATUS.get(self.problem.status, "numerical-failure")
            except cp.SolverError:
                status = "numerical-failure"
            if status != "numerical-failure":
                break
        elapsed = time.perf_counter() - start
        if status in ("optimal", "near-optimal"):
            lam_ue = self.lambda_ue.value.reshape(N, K) * KBIT
            return SubproblemSolution(
                p_bar=self.p_bar.value.reshape(N, K, S).copy(),
                P=np.clip(self.P_link.value, 0, None).sum(axis=0),
                P_link=np.clip(self.P_link.value, 0, None),
                W_bs=np.clip(self.W.value, 0, None) * MHZ,
                lambda_ue=lam_ue,
                lambda_bs=self.lambda_bs.value * KBIT,
                objective=float(self.problem.value) * KBIT,
                status=status,
                solve_time=elapsed,
            )
        nan = np.full
        return SubproblemSolution(
            p_bar=nan((N, K, S), np.nan), P=nan(N, np.nan), P_link=nan((M, N), np.nan), W_bs=nan((M, N), np.nan),
            lambda_ue=nan((N, K), np.nan), lambda_bs=nan(N, np.nan),
            objective=float("nan"), status=status, solve_time=elapsed,
        )


def build_subproblem(spec: SubproblemSpec, program: ConvexProgram | None = None) -> ConvexProgram:
    """Load ``spec`` into ``program`` (compiled fresh when absent or mismatched)."""
    spec.validate()
    if program is None or not program.matches(spec):
        program = ConvexProgram.for_spec(spec)
    return program.load(spec)


def solve(program: ConvexProgram, tol: float = 1e-7, max_iter: int = 200) -> SubproblemSolution:
    return program.solve(tol=tol, max_iter=max_iter)


def access_bound(p_bar: np.ndarray, spec: SubproblemSpec) -> np.ndarray:
    """Right-hand side of the access epigraph constraint, per (n, k), in bits.

    Numpy twin of the cvxpy expression, used to check the log-domain
    rewrite and by the iterative loop for diagnostics.
    """
    p = np.exp(p_bar)
    q = p.sum(axis=0)  # (K, S) total power per UE and SC
    rx = spec.h * q[None, :, :]
    interference = np.maximum(rx.sum(axis=1, keepdims=True) - rx, 0.0)
    log2_sinr = np.log2(spec.h) + p_bar / LN2 - np.log2(interference + spec.sigma2)
    return (spec.T_S * spec.W_SC * (spec.a * log2_sinr + spec.b)).sum(axis=2)
