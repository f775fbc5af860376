#!/usr/bin/env python3
"""Budget curve, strategy table and anchor-count curve.

The anchor-count sweep runs on the ``centroid_trap`` benchmark, where a single
source centroid sits close to a target-exclusive scene; the other two use the
default benchmark. All sweeps train the M1 variant (active labels only).

Usage:
    python scripts/run_sweeps.py --out results/sweeps
    python scripts/run_sweeps.py --kinds budget --seeds 0 1 2 3 4
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from mada.pipeline import SWEEP_KINDS, median_by, parse_overrides, run_sweeps, write_csv

GROUP = {"anchors": "k_source", "budget": "budget", "strategy": "strategy"}
BENCHMARK = {"anchors": "centroid_trap", "budget": "default", "strategy": "default"}
DEFAULT_SEEDS = {"anchors": [0, 1, 2], "budget": [0, 1, 2, 3, 4], "strategy": [0, 1, 2]}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--kinds", nargs="+", choices=SWEEP_KINDS, default=["budget", "strategy", "anchors"])
    ap.add_argument("--seeds", type=int, nargs="+", help="override the per-sweep seed lists")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/sweeps"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    args.out.mkdir(parents=True, exist_ok=True)

    for kind in args.kinds:
        seeds = ",".join(map(str, args.seeds or DEFAULT_SEEDS[kind]))
        cfg = parse_overrides([f"benchmark={BENCHMARK[kind]}"] + args.set
                              + [f"seeds={seeds}", f"n_jobs={args.jobs}"])
        t0 = time.perf_counter()
        rows = run_sweeps(cfg, (kind,))[kind]
        write_csv(rows, args.out / f"sweep_{kind}.csv")
        med = median_by(rows, GROUP[kind])
        print(f"\n{kind} ({cfg.benchmark}, seeds {seeds}, {time.perf_counter() - t0:.0f}s)")
        if kind == "strategy":
            share = median_by(rows, "strategy", "exclusive_share")
            for s, m in med.items():
                print(f"  {s:>12}  mIoU {m:6.2f}  exclusive share {share[s]:.2f}")
        else:
            for g, m in med.items():
                print(f"  {GROUP[kind]}={g:<6}  mIoU {m:6.2f}")
    print(f"\ntables -> {args.out}")


if __name__ == "__main__":
    main()
