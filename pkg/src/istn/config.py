"""Run configuration for the satellite-backhauled terrestrial network.

All quantities are stored in linear SI units (W, Hz, s, bits, m). The only
dB-valued fields are the ones that are conventionally specified that way
(noise density, antenna gains, Rician K-factor); they are converted once, at
the point of use.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for an invalid or inconsistent configuration."""


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def dbw_to_w(dbw: float) -> float:
    return 10.0 ** (dbw / 10.0)


def w_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


# LEO positions at the first time slot, (lat, lon) in degrees.
PAPER_LEO_POSITIONS = ((39.93, 19.99), (39.97, 19.99), (39.95, 20.03))


@dataclass(frozen=True)
class RunConfig:
    """Network instance parameters. Defaults reproduce the full-size table."""

    M: int = 3
    N: int = 12
    K: int = 48
    N_SC: int = 8
    S_bar: int | None = None  # None -> N_SC
    T_S: float = 0.03
    N_T: int = 50
    W_SC: float = 360e3
    W_LEO: float = 20e6
    f_c: float = 30e9
    noise_density_dbm_hz: float = -174.0
    p_UE_max: float = dbm_to_w(24.0)
    P_BS_max: float = dbw_to_w(14.0)
    demand_bits: float = 2.5e6

    # geometry
    area_center: tuple[float, float] = (40.0, 20.0)
    area_size_m: tuple[float, float] = (5000.0, 6000.0)  # (east-west, north-south)
    bs_per_cluster: int = 3
    cluster_radius_m: float = 600.0
    ue_disc_radius_m: float = 500.0
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5

    # access channel
    rician_k_db: float = 6.0

    # backhaul link budget
    leo_altitude_m: float = 600e3
    leo_positions: tuple[tuple[float, float], ...] = PAPER_LEO_POSITIONS
    leo_velocity_mps: tuple[float, float] = (7560.0, 0.0)  # (north, east) ground-track
    sat_max_gain_dbi: float = 38.5
    sat_aperture_radius_m: float = 0.25
    bs_antenna_gain_dbi: float = 0.0
    # lumped atmospheric, rain and implementation loss on the backhaul hop
    backhaul_loss_db: float = 0.0

    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.S_bar is None:
            object.__setattr__(self, "S_bar", self.N_SC)
        object.__setattr__(
            self, "leo_positions", tuple(tuple(map(float, p)) for p in self.leo_positions)
        )
        object.__setattr__(self, "area_center", tuple(map(float, self.area_center)))
        object.__setattr__(self, "area_size_m", tuple(map(float, self.area_size_m)))
        object.__setattr__(self, "leo_velocity_mps", tuple(map(float, self.leo_velocity_mps)))
        self.validate()

    def validate(self) -> None:
        for name in ("M", "N", "K", "N_SC", "S_bar", "N_T", "bs_per_cluster"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in (
            "T_S", "W_SC", "W_LEO", "f_c", "p_UE_max", "P_BS_max",
            "cluster_radius_m", "ue_disc_radius_m", "leo_altitude_m",
            "sat_aperture_radius_m",
        ):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.demand_bits < 0:
            raise ConfigError("demand_bits must be >= 0")
        if len(self.leo_positions) != self.M:
            raise ConfigError(
                f"{len(self.leo_positions)} LEO positions given for M={self.M}"
            )
        for lat, lon in self.leo_positions:
            if abs(lat) > 90 or abs(lon) > 180:
                raise ConfigError(f"invalid LEO position ({lat}, {lon})")

    @property
    def n_clusters(self) -> int:
        return self.N // self.bs_per_cluster

    @property
    def noise_density_w_hz(self) -> float:
        return dbm_to_w(self.noise_density_dbm_hz)

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["leo_positions"] = [list(p) for p in self.leo_positions]
        for key in ("area_center", "area_size_m", "leo_velocity_mps"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def paper_profile(**overrides: Any) -> RunConfig:
    return RunConfig(**overrides)


def desk_profile(**overrides: Any) -> RunConfig:
    """Small instance: 2 LEOs, 3 BSs, 6 UEs, 4 SCs, 0.5 Mbit demand, 1 MHz per LEO.

    The LEO band is narrowed with the instance so that the backhaul, not the
    access side, stays the bottleneck for a plain scheduler.
    """
    base = dict(
        W_LEO=1e6,
        M=2,
        N=3,
        K=6,
        N_SC=4,
        demand_bits=0.5e6,
        leo_positions=PAPER_LEO_POSITIONS[:2],
    )
    base.update(overrides)
    return RunConfig(**base)


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def load_config(path: str | Path, profile: str = "desk") -> RunConfig:
    """Read a JSON config; keys override the chosen profile's defaults."""
    data = json.loads(Path(path).read_text())
    profile = data.pop("profile", profile)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    base = PROFILES[profile]()
    try:
        return base.replace(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ScaConfig:
    """Knobs for the iterative relaxation algorithm and its convex solver."""

    epsilon: float = 1e-6
    tol_sca: float = 1e-4
    # also require every active link's weight*value to sit within this of one
    fixed_point_tol: float = 0.5
    max_iters: int = 50
    solver_tol: float = 1e-7
    solver_max_iter: int = 200
    p_floor: float = 1e-12
    # a backhaul link whose bandwidth fell below this share of the LEO band is switched off
    link_off_frac: float = 1e-6
    # slack below min(0, access bound at the expansion point) for the access data floor
    lam_margin_bits: float = 1.0
    # SCALE passes with the rounded association held fixed (0 disables)
    polish_iters: int = 10
    # credit each UE at most its remaining demand in the slot objective
    cap_at_demand: bool = True
    init: str = "split"  # "full" | "split"; see sca.initial_point

    def replace(self, **changes: Any) -> "ScaConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class GreedyConfig:
    eps_rate_bits: float = 1e3
    max_bisect: int = 60

    def replace(self, **changes: Any) -> "GreedyConfig":
        return dataclasses.replace(self, **changes)


def config_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


__all__ = [
    "ConfigError",
    "GreedyConfig",
    "PROFILES",
    "RunConfig",
    "ScaConfig",
    "config_json",
    "dbm_to_w",
    "dbw_to_w",
    "desk_profile",
    "load_config",
    "paper_profile",
    "w_to_dbm",
]
