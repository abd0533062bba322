"""Network instances: BS/UE layout, LEO ground tracks and per-slot channel gains.

Geometry uses a spherical Earth. Ground positions are generated in a local
east/north frame around the area centre and converted to latitude/longitude;
every distance is then measured between Earth-centred Cartesian points, so
the access and backhaul hops share one coordinate system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import j1

from .config import ConfigError, RunConfig

EARTH_RADIUS_M = 6371e3
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class GeoPosition:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.lat) > 90 or abs(self.lon) > 180 or self.alt < 0:
            raise ValueError(f"invalid position {self}")

    def ecef(self) -> np.ndarray:
        r = EARTH_RADIUS_M + self.alt
        la, lo = math.radians(self.lat), math.radians(self.lon)
        return np.array([r * math.cos(la) * math.cos(lo), r * math.cos(la) * math.sin(lo), r * math.sin(la)])


@dataclass(frozen=True)
class Topology:
    bs_positions: tuple[GeoPosition, ...]
    ue_positions: tuple[GeoPosition, ...]
    ue_home_bs: tuple[int, ...]
    ue_home_cluster: tuple[int, ...]


@dataclass(frozen=True)
class ChannelSet:
    """Linear power gains. ``h`` is indexed (t, n, k, s); ``g`` is (t, m, n)."""

    h: np.ndarray
    g: np.ndarray
    sigma2_bs: float
    delta_leo: float


@dataclass(frozen=True)
class Scenario:
    cfg: RunConfig
    topology: Topology
    channels: ChannelSet


def _offset(center: tuple[float, float], east_m: float, north_m: float, alt: float) -> GeoPosition:
    lat0, lon0 = center
    lat = lat0 + math.degrees(north_m / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return GeoPosition(lat, lon, alt)


def _cluster_centers(cfg: RunConfig) -> list[tuple[float, float]]:
    nc = cfg.n_clusters
    cols = math.ceil(math.sqrt(nc))
    rows = math.ceil(nc / cols)
    width, height = cfg.area_size_m
    centers = []
    for c in range(nc):
        r, q = divmod(c, cols)
        centers.append(((q + 0.5) * width / cols - width / 2, (r + 0.5) * height / rows - height / 2))
    return centers


def build_topology(cfg: RunConfig) -> Topology:
    """Place BSs in clusters of ``bs_per_cluster`` and K/N UEs around each BS."""
    if cfg.N % cfg.bs_per_cluster:
        raise ConfigError(f"N={cfg.N} is not a multiple of the cluster size {cfg.bs_per_cluster}")
    if cfg.K % cfg.N:
        raise ConfigError(f"K={cfg.K} is not a multiple of N={cfg.N}")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed).spawn(2)[0])
    per_bs = cfg.K // cfg.N

    bs_xy, bs_cluster = [], []
    for c, (cx, cy) in enumerate(_cluster_centers(cfg)):
        for j in range(cfg.bs_per_cluster):
            ang = math.pi / 2 + 2 * math.pi * j / cfg.bs_per_cluster
            bs_xy.append((cx + cfg.cluster_radius_m * math.cos(ang), cy + cfg.cluster_radius_m * math.sin(ang)))
            bs_cluster.append(c)

    ue_xy, home_bs, home_cluster = [], [], []
    for n, (bx, by) in enumerate(bs_xy):
        r = cfg.ue_disc_radius_m * np.sqrt(rng.uniform(size=per_bs))
        phi = rng.uniform(0, 2 * np.pi, size=per_bs)
        for ri, pi in zip(r, phi):
            ue_xy.append((bx + ri * math.cos(pi), by + ri * math.sin(pi)))
            home_bs.append(n)
            home_cluster.append(bs_cluster[n])

    return Topology(
        bs_positions=tuple(_offset(cfg.area_center, x, y, cfg.bs_height_m) for x, y in bs_xy),
        ue_positions=tuple(_offset(cfg.area_center, x, y, cfg.ue_height_m) for x, y in ue_xy),
        ue_home_bs=tuple(home_bs),
        ue_home_cluster=tuple(home_cluster),
    )


def _destination(lat: float, lon: float, bearing: float, dist: float) -> tuple[float, float]:
    """Great-circle destination from (lat, lon) in degrees; bearing in radians."""
    la, lo = math.radians(lat), math.radians(lon)
    delta = dist / EARTH_RADIUS_M
    la2 = math.asin(math.sin(la) * math.cos(delta) + math.cos(la) * math.sin(delta) * math.cos(bearing))
    lo2 = lo + math.atan2(
        math.sin(bearing) * math.sin(delta) * math.cos(la),
        math.cos(delta) - math.sin(la) * math.sin(la2),
    )
    lon2 = (math.degrees(lo2) + 180.0) % 360.0 - 180.0
    return math.degrees(la2), lon2


def propagate_leo(cfg: RunConfig, t: int) -> list[GeoPosition]:
    """LEO positions at time slot ``t`` (1-based), moving along a straight ground track."""
    if not 1 <= t <= cfg.N_T:
        raise ValueError(f"time slot {t} outside 1..{cfg.N_T}")
    v_north, v_east = cfg.leo_velocity_mps
    speed = math.hypot(v_north, v_east)
    dist = (t - 1) * cfg.T_S * speed
    bearing = math.atan2(v_east, v_north)
    out = []
    for lat, lon in cfg.leo_positions:
        if dist > 0:
            lat, lon = _destination(lat, lon, bearing, dist)
        out.append(GeoPosition(lat, lon, cfg.leo_altitude_m))
    return out


def pathloss_bs_ue(d_km: float | np.ndarray) -> float | np.ndarray:
    """Access-link path loss in dB, distance in km."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = 145.4 + 37.5 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def fspl_gain(d_m: float | np.ndarray, f_c: float) -> float | np.ndarray:
    """Free-space path gain (linear, <= 1)."""
    return (SPEED_OF_LIGHT / (4 * np.pi * np.asarray(d_m) * f_c)) ** 2


def beam_gain(off_axis_rad: float | np.ndarray, cfg: RunConfig) -> np.ndarray:
    """Circular-aperture satellite beam pattern, linear gain."""
    wavelength = SPEED_OF_LIGHT / cfg.f_c
    u = 2 * np.pi * cfg.sat_aperture_radius_m / wavelength * np.sin(np.asarray(off_axis_rad, dtype=float))
    g_max = 10 ** (cfg.sat_max_gain_dbi / 10)
    with np.errstate(invalid="ignore", divide="ignore"):
        pattern = np.where(np.abs(u) < 1e-12, 1.0, (2 * j1(u) / u) ** 2)
    return g_max * pattern


def rician_power(rng: np.random.Generator, k_db: float, size) -> np.ndarray:
    """Unit-mean Rician power gains."""
    if math.isinf(k_db) and k_db > 0:
        return np.ones(size)
    k = 10 ** (k_db / 10)
    los = math.sqrt(k / (k + 1))
    scatter = math.sqrt(1 / (2 * (k + 1))) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
    return np.abs(los + scatter) ** 2


def slant_ranges(cfg: RunConfig, topo: Topology, t: int) -> np.ndarray:
    """LEO-to-BS distances (m) at slot ``t``, shape (M, N)."""
    leo = np.array([p.ecef() for p in propagate_leo(cfg, t)])
    bs = np.array([p.ecef() for p in topo.bs_positions])
    return np.linalg.norm(leo[:, None, :] - bs[None, :, :], axis=-1)


def backhaul_gains(cfg: RunConfig, topo: Topology, t: int) -> np.ndarray:
    """Beam gain x BS antenna gain x free-space gain / lumped loss, shape (M, N)."""
    leo = np.array([p.ecef() for p in propagate_leo(cfg, t)])
    bs = np.array([p.ecef() for p in topo.bs_positions])
    target = GeoPosition(*cfg.area_center, 0.0).ecef()
    to_bs = bs[None, :, :] - leo[:, None, :]
    to_target = target[None, :] - leo
    dist = np.linalg.norm(to_bs, axis=-1)
    cos_off = np.einsum("mnd,md->mn", to_bs, to_target) / (dist * np.linalg.norm(to_target, axis=-1)[:, None])
    off_axis = np.arccos(np.clip(cos_off, -1.0, 1.0))
    extra_db = cfg.bs_antenna_gain_dbi - cfg.backhaul_loss_db
    return beam_gain(off_axis, cfg) * 10 ** (extra_db / 10) * fspl_gain(dist, cfg.f_c)


def access_distances_km(topo: Topology) -> np.ndarray:
    bs = np.array([p.ecef() for p in topo.bs_positions])
    ue = np.array([p.ecef() for p in topo.ue_positions])
    return np.linalg.norm(bs[:, None, :] - ue[None, :, :], axis=-1) / 1e3


def synthesize_channels(cfg: RunConfig, topo: Topology) -> ChannelSet:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed).spawn(2)[1])
    pl_db = pathloss_bs_ue(access_distances_km(topo))  # (N, K)
    fading = rician_power(rng, cfg.rician_k_db, (cfg.N_T, cfg.N, cfg.K, cfg.N_SC))
    h = fading * (10 ** (-pl_db / 10))[None, :, :, None]
    g = np.stack([backhaul_gains(cfg, topo, t) for t in range(1, cfg.N_T + 1)])
    n0 = cfg.noise_density_w_hz
    h.setflags(write=False)
    g.setflags(write=False)
    return ChannelSet(h=h, g=g, sigma2_bs=n0 * cfg.W_SC, delta_leo=n0)


def build_scenario(cfg: RunConfig) -> Scenario:
    topo = build_topology(cfg)
    return Scenario(cfg, topo, synthesize_channels(cfg, topo))
