"""Command line: ``istn run``, ``istn sweep`` and ``istn trace``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import PROFILES, ConfigError, GreedyConfig, ScaConfig, config_json, load_config
from .harness import ALGORITHMS, SweepError, SweepSpec, emit_plots, run_algorithm, run_sweep, write_trace


def _base_config(args: argparse.Namespace):
    cfg = load_config(args.config, args.profile) if args.config else PROFILES[args.profile]()
    return cfg.replace(rng_seed=args.seed) if args.seed is not None else cfg


def _sca_config(args: argparse.Namespace) -> ScaConfig:
    changes = {}
    if args.tol_sca is not None:
        changes["tol_sca"] = args.tol_sca
    if args.solver_tol is not None:
        changes["solver_tol"] = args.solver_tol
    if args.max_iters is not None:
        changes["max_iters"] = args.max_iters
    return ScaConfig(**changes)


def _summary(res) -> dict:
    return {
        "v": res.v,
        "met": res.met,
        "residual_bits": res.residual_bits,
        "slots": len(res.slots),
        "mean_sca_iterations": res.mean_iterations,
        "feasible": all(s.feasibility.feasible for s in res.slots),
    }


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    out = {}
    for alg in args.algorithms:
        res = run_algorithm(cfg, alg, _sca_config(args), GreedyConfig())
        out[alg] = _summary(res)
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "run.json").write_text(text + "\n")
        (args.out / "config.json").write_text(config_json(cfg) + "\n")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = SweepSpec.from_file(args.spec)
    changes = {}
    if args.out:
        changes["out_dir"] = args.out
    if args.workers:
        changes["workers"] = args.workers
    if args.tol_sca is not None or args.solver_tol is not None or args.max_iters is not None:
        changes["sca"] = _sca_config(args)
    if changes:
        spec = dataclasses.replace(spec, **changes)
    if spec.out_dir is None:
        raise SweepError("no output directory: give --out or out_dir in the sweep file")
    rows = run_sweep(spec)
    curve = emit_plots(rows, spec.out_dir, spec.base.N_T)
    failed = sum(bool(r.error) for r in rows)
    print(f"{len(rows)} rows, {failed} failed; curve data in {curve}")
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    res = run_algorithm(cfg, "sca", _sca_config(args))
    trace = [row for slot in res.slots for row in slot.trace if args.slot is None or row["t"] == args.slot]
    out = args.out or Path(".")
    path = write_trace(trace, out / f"trace_seed{cfg.rng_seed}.dat")
    print(f"{len(trace)} iterations written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="istn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
        p.add_argument("--config", type=Path, help="JSON file overriding profile fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--tol-sca", type=float)
        p.add_argument("--solver-tol", type=float)
        p.add_argument("--max-iters", type=int)

    p = sub.add_parser("run", help="run one scenario")
    common(p)
    p.add_argument("--algorithms", nargs="+", choices=ALGORITHMS, default=list(ALGORITHMS))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep file")
    p.add_argument("spec", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--tol-sca", type=float)
    p.add_argument("--solver-tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("trace", help="write the per-iteration objective of the iterative scheduler")
    common(p)
    p.add_argument("--slot", type=int, help="keep one slot only")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SweepError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
