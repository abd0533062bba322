"""End-to-end acceptance checks on the desk instance.

Each test prints one PASS/FAIL line. The sweeps behind the monotonicity,
comparison and feasibility checks run once per session and are shared.
Run only these with ``pytest -m acceptance -s``.
"""
from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
import pytest

from istn.config import ScaConfig, dbm_to_w, dbw_to_w, desk_profile
from istn.convex_core import scale_bound_coeffs
from istn.greedy import waterfill
from istn.harness import SweepSpec, mean_v, run_sweep
from istn.oracle import exhaustive_slot, tiny_profile, weighted_credit
from istn.rates import DemandState, check_feasibility, slot_rates, update_demand
from istn.sca import ACTIVE_SHARE, delivered_bits, schedule_slot, update_cs_weights
from istn.scenario import build_scenario

pytestmark = pytest.mark.acceptance

SEEDS = tuple(range(1, 11))
SWEEPS = {
    "P_BS_max": tuple(dbw_to_w(x) for x in (10, 12, 14, 16, 18)),
    "W_LEO": (0.6e6, 0.8e6, 1.0e6, 1.2e6, 1.4e6),
    "p_UE_max": tuple(dbm_to_w(x) for x in (20, 22, 24, 26, 28)),
}
BASE = desk_profile()
N_T = BASE.N_T


def report(capsys, name: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def _is_base(parameter: str, value: float) -> bool:
    return math.isclose(getattr(BASE, parameter), value)


@pytest.fixture(scope="session")
def sweeps():
    """Rows per swept parameter. The baseline point is solved once and relabelled."""
    start = time.perf_counter()
    rows = {}
    base_rows = None
    for parameter, values in SWEEPS.items():
        todo = [v for v in values if base_rows is None or not _is_base(parameter, v)]
        spec = SweepSpec(base=BASE, parameter=parameter, values=tuple(todo), seeds=SEEDS)
        got = run_sweep(spec)
        if base_rows is None:
            base_rows = [r for r in got if _is_base(r.parameter, r.value)]
        else:
            value = next(v for v in values if _is_base(parameter, v))
            got += [dataclasses.replace(r, parameter=parameter, value=value) for r in base_rows]
        rows[parameter] = got
    return rows, time.perf_counter() - start


@pytest.fixture(scope="session")
def convergence_runs():
    """20 seeds, first five slots each, scheduled with demand carried between slots."""
    start = time.perf_counter()
    runs = []
    for seed in range(1, 21):
        scn = build_scenario(BASE.replace(rng_seed=seed))
        demand = DemandState(np.full(BASE.K, BASE.demand_bits))
        program = None
        slots = []
        for t in range(1, 6):
            if demand.done:
                break
            assoc, alloc, state = schedule_slot(scn, demand, t, ScaConfig(), program)
            program = state.program
            slots.append((t, assoc, alloc, state, check_feasibility(scn, alloc, assoc, t)))
            demand = update_demand(demand, t, delivered_bits(scn, alloc, assoc, t, demand.d))
        runs.append((seed, scn, slots))
    return runs, time.perf_counter() - start


@pytest.fixture(scope="session")
def oracle_runs():
    out = []
    for seed in SEEDS:
        scn = build_scenario(tiny_profile(rng_seed=seed))
        demand = DemandState(np.full(scn.cfg.K, scn.cfg.demand_bits))
        start = time.perf_counter()
        best = exhaustive_slot(scn, demand.omega, demand.d)
        oracle_time = time.perf_counter() - start
        assoc, alloc, _ = schedule_slot(scn, demand, 1)
        access, _ = slot_rates(scn, alloc, assoc, 1)
        ours = weighted_credit(access.sum(axis=(0, 2)), demand.omega, demand.d)
        out.append((seed, scn, best, oracle_time, ours, check_feasibility(scn, alloc, assoc, 1)))
    return out


@pytest.fixture(scope="session")
def small_band_rows():
    cfg = BASE.replace(W_LEO=0.5e6)
    spec = SweepSpec(base=cfg, parameter="p_UE_max", values=(dbm_to_w(20), dbm_to_w(28)), seeds=SEEDS)
    return run_sweep(spec)


def test_convergence(convergence_runs, capsys):
    runs, elapsed = convergence_runs
    good = 0
    worst_drop = 0.0
    for _, _, slots in runs:
        seed_ok = True
        for _, _, _, state, _ in slots:
            h = np.asarray(state.objective_history)
            drops = (h[:-1] - h[1:]) / np.maximum(np.abs(h[:-1]), 1e-12)
            worst_drop = max(worst_drop, float(drops.max(initial=0.0)))
            monotone = np.all(drops <= 1e-6)
            close = np.abs(h - h[-1]) <= 0.01 * abs(h[-1])
            reached = int(np.argmax(close)) + 1  # iterations until within 1% of the final value
            seed_ok &= bool(monotone and reached <= 30)
        good += seed_ok
    ok = good >= 18 and elapsed <= 300
    report(capsys, "1 convergence", ok,
           f"{good}/20 seeds monotone and within 1% by 30 iterations, worst relative drop "
           f"{worst_drop:.2e}, {elapsed:.0f} s")
    assert ok


def test_beats_greedy(sweeps, capsys):
    rows, _ = sweeps
    bad = []
    for parameter, values in SWEEPS.items():
        for value in values:
            a = mean_v(rows[parameter], "sca", value, N_T)
            g = mean_v(rows[parameter], "greedy", value, N_T)
            if a > g:
                bad.append(f"{parameter}={value:g}: {a:.2f} > {g:.2f}")
    base = rows["W_LEO"]
    a = mean_v(base, "sca", BASE.W_LEO, N_T)
    g = mean_v(base, "greedy", BASE.W_LEO, N_T)
    ok = not bad and a <= 0.85 * g
    report(capsys, "2 versus greedy", ok,
           f"baseline {a:.2f} vs {g:.2f} slots (ratio {a / g:.3f}); points where greedy wins: {bad or 'none'}")
    assert ok


def _inversions(curve):
    """Increases of a curve that should be nonincreasing."""
    return [b - a for a, b in zip(curve, curve[1:]) if b > a]


def test_monotone_in_resources(sweeps, capsys):
    rows, elapsed = sweeps
    lines = []
    ok = elapsed <= 1800
    for parameter, values in SWEEPS.items():
        for alg in ("sca", "greedy"):
            curve = [mean_v(rows[parameter], alg, v, N_T) for v in values]
            inv = _inversions(curve)
            fine = len(inv) == 0 or (len(inv) == 1 and inv[0] <= 0.5)
            ok &= fine
            lines.append(f"{parameter}/{alg} {[round(float(c), 2) for c in curve]}{'' if fine else ' <-'}")
    report(capsys, "3 monotone in resources", ok, f"{elapsed / 60:.1f} min; " + "; ".join(lines))
    assert ok


def test_oracle_gap(oracle_runs, capsys):
    ratios = [ours / best.value if best.value > 0 else 1.0 for _, _, best, _, ours, _ in oracle_runs]
    slowest = max(r[3] for r in oracle_runs)
    hits = sum(r >= 0.85 for r in ratios)
    ok = hits >= 9 and slowest <= 60
    report(capsys, "4 exhaustive reference", ok,
           f"{hits}/10 seeds at >= 85% of the optimum, ratios {[round(float(r), 3) for r in ratios]}, "
           f"slowest search {slowest:.2f} s")
    assert ok


def test_properties(convergence_runs, capsys):
    rng = np.random.default_rng(2024)
    x0 = 10 ** rng.uniform(-6, 6, 10_000)
    x = 10 ** rng.uniform(-6, 6, 10_000)
    a, b = scale_bound_coeffs(x0)
    exact = np.log2(1 + x)
    scale_gap = float(np.max((a * np.log2(x) + b - exact) / np.maximum(1.0, exact)))
    tight = float(np.max(np.abs(a * np.log2(x0) + b - np.log2(1 + x0)) / np.maximum(1.0, np.log2(1 + x0))))
    scale_ok = scale_gap <= 1e-12 and tight <= 1e-12

    kkt = 0.0
    for _ in range(1000):
        gains = 10 ** rng.uniform(-3, 3, rng.integers(1, 13))
        noise, budget = 10 ** rng.uniform(-3, 1), 10 ** rng.uniform(-3, 2)
        p = waterfill(gains, noise, budget)
        level = p + noise / gains
        on = p > 0
        nu = level[on].max()
        res = [abs(p.sum() - budget) / budget, np.max(np.abs(level[on] - nu)) / nu,
               max(0.0, float(np.max(nu - noise / gains[~on], initial=-np.inf))) / nu, max(0.0, -p.min())]
        kkt = max(kkt, *res)
    kkt_ok = kkt <= 1e-9

    products = []
    for _, scn, slots in convergence_runs[0]:
        cfg = scn.cfg
        for _, assoc, _, state, _ in slots:
            if not state.converged:
                continue
            raw = update_cs_weights(state.p_expansion, state.W_expansion, ScaConfig().epsilon, normalize=False)
            p, W = state.solution.p, state.solution.W_bs
            on_p = (assoc.alpha > 0) & (p >= ACTIVE_SHARE * cfg.p_UE_max)
            on_W = (assoc.mu > 0) & (W >= ACTIVE_SHARE * cfg.W_LEO)
            products += list((raw.zeta * p)[on_p]) + list((raw.chi * W)[on_W])
    products = np.array(products)
    fp_ok = products.size > 0 and bool(np.all((products >= 0.5) & (products <= 1.5)))

    ok = scale_ok and kkt_ok and fp_ok
    report(capsys, "5 properties", ok,
           f"bound excess {scale_gap:.1e}, tightness {tight:.1e}; waterfill KKT residual {kkt:.1e}; "
           f"weight*value over {products.size} active links in [{products.min():.3f}, {products.max():.3f}]")
    assert ok


def test_feasibility(sweeps, convergence_runs, oracle_runs, capsys):
    rows, _ = sweeps
    sweep_rows = [r for group in rows.values() for r in group]
    bad_rows = [f"{r.parameter}={r.value:g} seed {r.seed} {r.algorithm} {r.error}".strip()
                for r in sweep_rows if not r.feasible]
    bad_slots = [f"seed {seed} slot {t}: {rep.failures()}"
                 for seed, _, slots in convergence_runs[0] for t, _, _, _, rep in slots if not rep.feasible]
    bad_oracle = [f"tiny seed {seed}: {rep.failures()}" for seed, _, _, _, _, rep in oracle_runs if not rep.feasible]
    bad_oracle += [f"tiny seed {seed} reference: {check_feasibility(scn, b.allocation, b.association, 1).failures()}"
                   for seed, scn, b, *_ in oracle_runs
                   if not check_feasibility(scn, b.allocation, b.association, 1).feasible]
    bad = bad_rows + bad_slots + bad_oracle
    checked = len(sweep_rows) + sum(len(s) for _, _, s in convergence_runs[0]) + 2 * len(oracle_runs)
    report(capsys, "6 feasibility", not bad, f"{checked} runs and slots checked; violations: {bad or 'none'}")
    assert not bad


def test_user_power_at_small_band(small_band_rows, capsys):
    lo, hi = dbm_to_w(20), dbm_to_w(28)
    g0, g1 = (mean_v(small_band_rows, "greedy", v, N_T) for v in (lo, hi))
    a0, a1 = (mean_v(small_band_rows, "sca", v, N_T) for v in (lo, hi))
    change = abs(g1 - g0) / g0
    infeasible = [r for r in small_band_rows if not r.feasible]
    ok = change < 0.10 and a1 < a0 and not infeasible
    report(capsys, "7 user power at 0.5 MHz", ok,
           f"greedy {g0:.2f} -> {g1:.2f} ({100 * change:.1f}%), iterative {a0:.2f} -> {a1:.2f}, "
           f"{len(infeasible)} infeasible runs")
    assert ok
