import numpy as np
import pytest

from istn.config import GreedyConfig, desk_profile
from istn.greedy import bisect_cap, greedy_associate, greedy_slot, run_greedy, waterfill
from istn.rates import DemandState, check_feasibility, slot_rates
from istn.scenario import build_scenario


def test_waterfill_both_active():
    np.testing.assert_allclose(waterfill(np.array([2.0, 1.0]), 1.0, 1.0), [0.75, 0.25], atol=1e-15)


def test_waterfill_weak_channel_dry():
    np.testing.assert_allclose(waterfill(np.array([2.0, 1.0]), 1.0, 0.2), [0.2, 0.0], atol=1e-15)


def test_waterfill_edge_cases():
    assert waterfill(np.array([2.0, 1.0]), 1.0, 0.0).tolist() == [0.0, 0.0]
    assert waterfill(np.array([]), 1.0, 1.0).size == 0
    with pytest.raises(ValueError):
        waterfill(np.array([1.0, 0.0]), 1.0, 1.0)
    with pytest.raises(ValueError):
        waterfill(np.array([1.0]), 1.0, -1.0)


def test_strongest_leo_chosen(hand_scenario):
    scn = hand_scenario(np.full((2, 2, 2), 1e-12), np.array([[2e-13, 1e-13], [1e-13, 3e-13]]))
    assoc, alloc, _ = greedy_associate(scn, np.arange(2), 1)
    assert assoc.mu.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    assert alloc.P.tolist() == [scn.cfg.P_BS_max] * 2


def test_equal_bandwidth_split(hand_scenario):
    scn = hand_scenario(np.full((4, 4, 1), 1e-12), np.full((1, 4), 1e-13), W_LEO=20e6)
    _, alloc, _ = greedy_associate(scn, np.arange(4), 1)
    np.testing.assert_allclose(alloc.W_bs, 5e6)


def test_round_robin_subchannels(hand_scenario):
    # both UEs prefer low SC indices; they alternate picks
    gains = np.geomspace(1e-11, 1e-12, 8)
    h = np.stack([gains, gains * 0.9])[None]  # (1, 2, 8)
    scn = hand_scenario(h, np.full((1, 1), 1e-13), S_bar=8)
    assoc, _, served = greedy_associate(scn, np.arange(2), 1)
    assert served == [[0, 1]]
    held = assoc.alpha[0]
    assert held.sum(axis=1).tolist() == [4.0, 4.0]
    assert np.flatnonzero(held[0]).tolist() == [0, 2, 4, 6]
    assert np.flatnonzero(held[1]).tolist() == [1, 3, 5, 7]
    assert check_feasibility(scn, _zero_alloc(scn), assoc, 1).ok["C1"]


def _zero_alloc(scn):
    from istn.rates import Allocation

    cfg = scn.cfg
    return Allocation(np.zeros((cfg.N, cfg.K, cfg.N_SC)), np.zeros(cfg.N), np.zeros((cfg.M, cfg.N)))


def test_subchannel_cap_respected(hand_scenario):
    h = np.full((1, 2, 8), 1e-12)
    scn = hand_scenario(h, np.full((1, 1), 1e-13), S_bar=2)
    assoc, _, _ = greedy_associate(scn, np.arange(2), 1)
    assert assoc.alpha[0].sum(axis=1).tolist() == [2.0, 2.0]


def test_huge_backhaul_keeps_full_waterfilling(hand_scenario):
    scn = hand_scenario(np.full((1, 1, 2), 1e-12), np.full((1, 1), 1e-6))
    assoc, alloc, served = greedy_associate(scn, np.arange(1), 1)
    p, cap, _, iters, fallback = bisect_cap(scn, assoc, alloc, 0, served[0], 1, GreedyConfig())
    assert cap == scn.cfg.p_UE_max and iters == 0 and not fallback
    np.testing.assert_allclose(p[0], waterfill(np.full(2, 1e-12), 1.433e-15, scn.cfg.p_UE_max))


def test_no_backhaul_means_silence(hand_scenario):
    scn = hand_scenario(np.full((1, 1, 2), 1e-12), np.full((1, 1), 0.0))
    assoc, alloc, served = greedy_associate(scn, np.arange(1), 1)
    p, cap, *_ = bisect_cap(scn, assoc, alloc, 0, served[0], 1, GreedyConfig())
    assert cap == 0.0 and np.all(p == 0)


def test_bisection_fits_backhaul(hand_scenario):
    scn = hand_scenario(np.full((1, 2, 4), 1e-11), np.full((1, 1), 1e-14), W_LEO=2e5)
    st = greedy_slot(scn, DemandState(np.full(2, 1e6)), 1)
    access, backhaul = slot_rates(scn, st.allocation, st.association, 1)
    assert access.sum() <= backhaul.sum()
    assert backhaul.sum() - access.sum() <= 1e3
    assert 0 < st.cap[0] < scn.cfg.p_UE_max
    assert not st.fallback.any()


def test_zero_demand():
    res = run_greedy(build_scenario(desk_profile(demand_bits=0.0)))
    assert res.v == 0 and res.slots == []


def test_every_slot_feasible():
    res = run_greedy(build_scenario(desk_profile(rng_seed=5)))
    assert res.met
    assert all(s.feasibility.feasible for s in res.slots)
    assert len(res.slots) == res.v
