#!/usr/bin/env python3
"""Sensitivity of the ladder to the soft-alignment weight and pseudo-label threshold.

Trains M1, M2 and M4 for each (w_dis, pseudo_threshold) pair and prints the
median mIoU gap to M1. This is the probe behind the default weights.

Usage:
    python scripts/probe_alignment_weight.py --seeds 0 1 2
"""

from __future__ import annotations

import argparse
import itertools

from mada.pipeline import median_by, parse_overrides, run_ablation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--weights", type=float, nargs="+", default=[1.0, 0.1, 0.01, 0.001])
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.0, 0.9])
    args = ap.parse_args()

    seeds = ",".join(map(str, args.seeds))
    print(f"{'w_dis':>7} {'thresh':>6} {'M1':>7} {'M2-M1':>7} {'M4-M1':>7}")
    for w, t in itertools.product(args.weights, args.thresholds):
        cfg = parse_overrides([f"w_dis={w}", f"pseudo_threshold={t}", f"seeds={seeds}"])
        med = median_by(run_ablation(cfg, ("M1", "M2", "M4")), "variant")
        print(f"{w:7g} {t:6g} {med['M1']:7.2f} {med['M2'] - med['M1']:+7.2f} {med['M4'] - med['M1']:+7.2f}",
              flush=True)


if __name__ == "__main__":
    main()
