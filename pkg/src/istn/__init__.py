"""Joint UE/BS/LEO association and resource allocation for satellite-backhauled terrestrial networks."""
from .config import GreedyConfig, RunConfig, ScaConfig, desk_profile, paper_profile
from .greedy import run_greedy
from .sca import run_min_time
from .scenario import build_scenario

__all__ = [
    "GreedyConfig", "RunConfig", "ScaConfig", "build_scenario", "desk_profile", "paper_profile",
    "run_greedy", "run_min_time",
]
