"""Monte-Carlo sweeps of both schedulers with CSV results and plot-data files.

A sweep varies one of P_BS_max, W_LEO or p_UE_max over a sorted value list.
Every (value, seed) pair rebuilds the scenario from the seed, so runs at
different values see the same geometry and fading and are paired.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .config import PROFILES, GreedyConfig, RunConfig, ScaConfig, dbm_to_w, dbw_to_w
from .greedy import run_greedy
from .sca import TsLoopResult, run_min_time
from .scenario import build_scenario

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version", "parameter", "value", "algorithm", "seed", "v", "met",
    "residual_bits", "mean_sca_iterations", "feasible", "error", "wall_time_s",
)
SWEEPABLE = ("P_BS_max", "W_LEO", "p_UE_max")
ALGORITHMS = ("sca", "greedy")
# how sweep files may give values in log units
_DB_UNITS = {"P_BS_max": ("dBW", dbw_to_w), "p_UE_max": ("dBm", dbm_to_w)}


class SweepError(ValueError):
    """Invalid sweep description or result table."""


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    parameter: str
    values: tuple[float, ...]
    algorithms: tuple[str, ...] = ALGORITHMS
    seeds: tuple[int, ...] = tuple(range(1, 11))
    out_dir: Path | None = None
    sca: ScaConfig = ScaConfig()
    greedy: GreedyConfig = GreedyConfig()
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))
        self.validate()

    def validate(self) -> None:
        if self.parameter not in SWEEPABLE:
            raise SweepError(f"cannot sweep {self.parameter!r}; choose one of {SWEEPABLE}")
        if not self.values:
            raise SweepError("value list is empty")
        if list(self.values) != sorted(self.values):
            raise SweepError("values must be sorted ascending")
        if not self.seeds:
            raise SweepError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise SweepError("seeds must be distinct")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown or not self.algorithms:
            raise SweepError(f"unknown algorithms {sorted(unknown)}; choose from {ALGORITHMS}")
        if self.workers < 1:
            raise SweepError("workers must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SweepSpec":
        """Build from a JSON-style mapping.

        Keys: ``profile``, ``base`` (config overrides), ``parameter``, and
        either ``values`` (SI units) or ``values_db`` (dBW for P_BS_max, dBm
        for p_UE_max); optional ``algorithms``, ``seeds``, ``out_dir``,
        ``sca``, ``greedy`` and ``workers``.
        """
        data = dict(data)
        profile = data.pop("profile", "desk")
        if profile not in PROFILES:
            raise SweepError(f"unknown profile {profile!r}")
        base = PROFILES[profile](**data.pop("base", {}))
        parameter = data.pop("parameter", None)
        if "values_db" in data:
            if parameter not in _DB_UNITS:
                raise SweepError(f"values_db is not defined for {parameter!r}")
            conv = _DB_UNITS[parameter][1]
            values = [conv(x) for x in data.pop("values_db")]
        else:
            values = data.pop("values", [])
        kwargs: dict[str, Any] = {}
        if "sca" in data:
            kwargs["sca"] = ScaConfig(**data.pop("sca"))
        if "greedy" in data:
            kwargs["greedy"] = GreedyConfig(**data.pop("greedy"))
        for key in ("algorithms", "seeds", "out_dir", "workers"):
            if key in data:
                kwargs[key] = data.pop(key)
        if data:
            raise SweepError(f"unknown sweep keys: {sorted(data)}")
        return cls(base=base, parameter=parameter, values=tuple(values), **kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SweepSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResultRow:
    parameter: str
    value: float
    algorithm: str
    seed: int
    v: int | None  # None: demand not met within N_T
    residual_bits: float
    mean_sca_iterations: float
    feasible: bool
    wall_time_s: float
    error: str = ""
    trace: list[dict] = field(default_factory=list, repr=False, compare=False)

    @property
    def met(self) -> bool:
        return self.v is not None and not self.error

    def csv_record(self) -> dict[str, str]:
        return {
            "schema_version": str(CSV_SCHEMA_VERSION),
            "parameter": self.parameter,
            "value": repr(float(self.value)),
            "algorithm": self.algorithm,
            "seed": str(self.seed),
            "v": "" if self.v is None else str(self.v),
            "met": str(int(self.met)),
            "residual_bits": repr(float(self.residual_bits)),
            "mean_sca_iterations": repr(float(self.mean_sca_iterations)),
            "feasible": str(int(self.feasible)),
            "error": self.error,
            "wall_time_s": f"{self.wall_time_s:.3f}",
        }


def run_algorithm(cfg: RunConfig, algorithm: str, sca: ScaConfig = ScaConfig(),
                  greedy: GreedyConfig = GreedyConfig()) -> TsLoopResult:
    scn = build_scenario(cfg)
    if algorithm == "sca":
        return run_min_time(scn, sca)
    if algorithm == "greedy":
        return run_greedy(scn, greedy)
    raise SweepError(f"unknown algorithm {algorithm!r}")


def _sca_trace(result: TsLoopResult) -> list[dict]:
    return [row for slot in result.slots for row in slot.trace]


def _run_task(task: tuple[RunConfig, str, float, str, int, ScaConfig, GreedyConfig]) -> ResultRow:
    base, parameter, value, algorithm, seed, sca, greedy = task
    start = time.perf_counter()
    try:
        cfg = base.replace(rng_seed=seed, **{parameter: value})
        res = run_algorithm(cfg, algorithm, sca, greedy)
        its = res.mean_iterations if algorithm == "sca" else 0.0
        feasible = all(s.feasibility.feasible for s in res.slots)
        return ResultRow(parameter, value, algorithm, seed, res.v, res.residual_bits, its, feasible,
                         time.perf_counter() - start, trace=_sca_trace(res))
    except Exception as exc:  # recorded in the row; the sweep goes on
        log.warning("%s=%g seed %d %s failed: %s", parameter, value, seed, algorithm, exc)
        return ResultRow(parameter, value, algorithm, seed, None, float("nan"), float("nan"), False,
                         time.perf_counter() - start, error=f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec) -> list[ResultRow]:
    """Run every (value, seed, algorithm); rows come back in that order."""
    tasks = [
        (spec.base, spec.parameter, value, alg, seed, spec.sca, spec.greedy)
        for value in spec.values for seed in spec.seeds for alg in spec.algorithms
    ]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_run_task, tasks))
    else:
        rows = [_run_task(t) for t in tasks]
    rows.sort(key=lambda r: (r.value, r.seed, r.algorithm))
    if spec.out_dir is not None:
        write_csv(rows, spec.out_dir / f"sweep_{spec.parameter}.csv")
        write_traces(rows, spec.out_dir / "traces")
    return rows


def write_csv(rows: Sequence[ResultRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.csv_record())
    path.write_text(buf.getvalue())
    return path


def read_csv(path: str | Path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if int(rec["schema_version"]) != CSV_SCHEMA_VERSION:
                raise SweepError(f"unsupported schema version {rec['schema_version']}")
            rows.append(ResultRow(
                parameter=rec["parameter"], value=float(rec["value"]), algorithm=rec["algorithm"],
                seed=int(rec["seed"]), v=int(rec["v"]) if rec["v"] else None,
                residual_bits=float(rec["residual_bits"]),
                mean_sca_iterations=float(rec["mean_sca_iterations"]),
                feasible=bool(int(rec["feasible"])), wall_time_s=float(rec["wall_time_s"]),
                error=rec["error"],
            ))
    return rows


def write_traces(rows: Iterable[ResultRow], directory: str | Path) -> list[Path]:
    """One file per SCA run: slot, iteration, objective, solver status."""
    directory = Path(directory)
    out = []
    for row in rows:
        if row.algorithm != "sca" or not row.trace:
            continue
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{row.parameter}_{row.value:.6g}_seed{row.seed}.dat"
        write_trace(row.trace, path)
        out.append(path)
    return out


def write_trace(trace: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# t iteration objective_bits status"]
    lines += [f"{r['t']} {r['iteration']} {r['objective']!r} {r['status']}" for r in trace]
    path.write_text("\n".join(lines) + "\n")
    return path


def effective_v(row: ResultRow, N_T: int) -> int:
    """Slots used, with unmet demand (or a failed run) counted as N_T + 1."""
    return row.v if row.met else N_T + 1


def mean_v(rows: Iterable[ResultRow], algorithm: str, value: float, N_T: int) -> float:
    vals = [effective_v(r, N_T) for r in rows if r.algorithm == algorithm and math.isclose(r.value, value)]
    if not vals:
        raise SweepError(f"no rows for {algorithm} at {value}")
    return float(np.mean(vals))


def summarize(rows: Sequence[ResultRow], N_T: int) -> dict[str, list[tuple[float, float, float, int, int]]]:
    """Per algorithm: (value, mean v, standard error, runs, unmet runs) along the sweep."""
    if not rows:
        raise SweepError("empty result table")
    out: dict[str, list] = {}
    for alg in sorted({r.algorithm for r in rows}):
        curve = []
        for value in sorted({r.value for r in rows if r.algorithm == alg}):
            sel = [r for r in rows if r.algorithm == alg and r.value == value]
            vs = np.array([effective_v(r, N_T) for r in sel], dtype=float)
            se = float(vs.std(ddof=1) / math.sqrt(vs.size)) if vs.size > 1 else 0.0
            curve.append((value, float(vs.mean()), se, int(vs.size), sum(not r.met for r in sel)))
        out[alg] = curve
    return out


def emit_plots(rows: Sequence[ResultRow], out_dir: str | Path, N_T: int,
               algorithms: Sequence[str] = ALGORITHMS) -> Path:
    """Write a whitespace-separated curve file: x, then mean v and its standard error per algorithm."""
    if not rows:
        raise SweepError("empty result table")
    parameters = {r.parameter for r in rows}
    if len(parameters) != 1:
        raise SweepError(f"rows mix parameters {sorted(parameters)}")
    parameter = parameters.pop()
    curves = summarize(rows, N_T)
    present = [a for a in algorithms if a in curves]
    for alg in algorithms:
        if alg not in curves:
            log.warning("no %s rows in the table; its curve is omitted", alg)
    xs = sorted({r.value for r in rows})
    header = ["x"] + [f"{a}_{c}" for a in present for c in ("mean_v", "stderr", "runs", "unmet")]
    lines = ["# " + " ".join(header)]
    for x in xs:
        cols = [repr(x)]
        for alg in present:
            pt = next((c for c in curves[alg] if c[0] == x), None)
            cols += ["nan"] * 4 if pt is None else [repr(pt[1]), repr(pt[2]), str(pt[3]), str(pt[4])]
        lines.append(" ".join(cols))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"curve_{parameter}.dat"
    path.write_text("\n".join(lines) + "\n")
    return path


__all__ = [
    "ALGORITHMS", "CSV_COLUMNS", "CSV_SCHEMA_VERSION", "ResultRow", "SWEEPABLE", "SweepError", "SweepSpec",
    "effective_v", "emit_plots", "mean_v", "read_csv", "run_algorithm", "run_sweep", "summarize",
    "write_csv", "write_trace", "write_traces",
]
