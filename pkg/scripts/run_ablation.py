#!/usr/bin/env python3
"""Ablation ladder M0..M4 plus the fully supervised Mu on the default benchmark.

Usage:
    python scripts/run_ablation.py --seeds 0 1 2 3 4 --out results/ablation
    python scripts/run_ablation.py --set budget=0.1 --set w_dis=1.0
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from mada.pipeline import LADDER, dump_config, median_by, parse_overrides, run_ablation, write_csv

SLACK = 0.5


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--variants", nargs="+", default=list(LADDER))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/ablation"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    seeds = ",".join(map(str, args.seeds))
    cfg = parse_overrides(args.set + [f"seeds={seeds}", f"n_jobs={args.jobs}"])
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.cfg").write_text(dump_config(cfg))

    t0 = time.perf_counter()
    rows = run_ablation(cfg, tuple(args.variants))
    write_csv(rows, args.out / "ablation.csv")
    med = median_by(rows, "variant")
    (args.out / "summary.json").write_text(json.dumps(
        {"median_miou": med, "seeds": args.seeds, "seconds": time.perf_counter() - t0}, indent=2))

    print(f"{'variant':>7}  median mIoU   per seed")
    for v in args.variants:
        per = [f"{r['miou']:.2f}" for r in rows if r["variant"] == v]
        print(f"{v:>7}  {med[v]:11.2f}   {' '.join(per)}")
    if set(LADDER) <= set(med):
        ladder = ["M1", "M2", "M3", "M4", "Mu"]
        ok = (med["M0"] + 15 <= med["M4"] and med["M0"] < med["M1"]
              and all(med[b] >= med[a] - SLACK for a, b in zip(ladder, ladder[1:])))
        print(f"ladder ordering {'holds' if ok else 'VIOLATED'} (slack {SLACK})")
    print(f"{time.perf_counter() - t0:.0f}s -> {args.out}")


if __name__ == "__main__":
    main()
