import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from istn.config import desk_profile
from istn.scenario import build_scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# cvxpy warns about solver defaults it cannot act on; not useful here
warnings.filterwarnings("ignore", module="cvxpy")


@pytest.fixture(scope="session")
def desk_scenario():
    return build_scenario(desk_profile(rng_seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def hand_scenario():
    """Factory for a one-slot scenario with given h (N, K, S) and g (M, N)."""
    from istn.scenario import ChannelSet, Scenario, build_topology

    def make(h, g, **overrides):
        h, g = np.asarray(h, float), np.asarray(g, float)
        N, K, S = h.shape
        M = g.shape[0]
        cfg = desk_profile(M=M, N=N, K=K, N_SC=S, N_T=1, bs_per_cluster=1,
                           leo_positions=((39.93, 19.99),) * M, **overrides)
        ch = ChannelSet(h=h[None], g=g[None], sigma2_bs=1.433e-15, delta_leo=3.98e-21)
        return Scenario(cfg, build_topology(cfg), ch)

    return make
