#!/usr/bin/env python3
"""Run the three desk-scale sweeps and write CSV, traces and curve files.

Usage: python scripts/run_sweeps.py [--workers N] [--seeds K] [--out DIR]
"""
import argparse
import dataclasses
import time
from pathlib import Path

from istn.harness import SweepSpec, emit_plots, run_sweep, summarize

HERE = Path(__file__).resolve().parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seeds", type=int, help="use seeds 1..K instead of the file's list")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    for name in ("p_bs", "w_leo", "p_ue"):
        spec = SweepSpec.from_file(HERE / "sweeps" / f"{name}.json")
        changes = {"out_dir": args.out / name, "workers": args.workers}
        if args.seeds:
            changes["seeds"] = tuple(range(1, args.seeds + 1))
        spec = dataclasses.replace(spec, **changes)
        start = time.perf_counter()
        rows = run_sweep(spec)
        emit_plots(rows, spec.out_dir, spec.base.N_T)
        print(f"{spec.parameter}: {len(rows)} rows in {time.perf_counter() - start:.0f} s")
        for alg, curve in summarize(rows, spec.base.N_T).items():
            print(f"  {alg:7s}", " ".join(f"{m:6.2f}" for _, m, *_ in curve))


if __name__ == "__main__":
    main()
