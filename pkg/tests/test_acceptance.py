"""Acceptance gate: ten criteria, one PASS/FAIL line each in the terminal summary.

Criteria 6-10 run the full desk-scale pipeline (about eight minutes on one core).
"""

import csv
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gradcheck import CHECKS
from mada import cli, data, losses
from mada.anchors import (AnchorSet, ema_update, ema_update_inplace, kmeans, nearest_anchor,
                          squared_distances, wcss)
from mada.features import pooled_vectors
from mada.pipeline import ExperimentConfig, median_by, run_sweeps
from mada.selection import budget_count, score_multi_anchor, select
from oracles import brute_force_two_means

SLACK = 0.5


def report(n: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{n:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, detail


def test_01_gradients():
    t0 = time.perf_counter()
    worst = {name: max(check(seed) for seed in range(100)) for name, check in CHECKS.items()}
    elapsed = time.perf_counter() - t0
    ok = all(e <= 1e-5 for e in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (100 each, {elapsed:.1f}s)"
    report(1, "gradient suite", ok, detail)


def test_02_kmeans_oracle():
    t0 = time.perf_counter()
    optimal = near = 0
    monotone = True
    for seed in range(25):
        rng = np.random.default_rng(1000 + seed)
        x = rng.normal(size=(int(rng.integers(3, 9)), int(rng.integers(1, 4))))
        best = brute_force_two_means(x)
        a = kmeans(x, 2, seed=seed)
        labels = np.argmin(squared_distances(x, a.anchors), axis=1)
        final = wcss(x, a.anchors, labels)
        if math.isclose(final, best, rel_tol=1e-9, abs_tol=1e-12):
            optimal += 1
        elif a.stop_reason == "fixpoint" and final <= 1.05 * best:
            near += 1
        h = a.wcss_history
        monotone &= all(h[t] <= h[t - 1] * (1 + 1e-12) + 1e-15
                        for t in range(1, len(h)) if t not in a.repair_iterations)
    elapsed = time.perf_counter() - t0
    ok = optimal + near == 25 and monotone and elapsed < 30
    report(2, "k-means oracle", ok,
           f"{optimal} optimal + {near} fixpoints within 5% of 25, objective monotone={monotone}, {elapsed:.1f}s")


def test_03_soft_align_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(10_000):
        k, dim = int(rng.integers(1, 12)), int(rng.integers(1, 9))
        a = rng.normal(size=(k, dim)) * rng.uniform(0.1, 10)
        v = rng.normal(size=dim) * rng.uniform(0.1, 10)
        loss, _, _ = losses.soft_align_loss(v, a)
        d2 = ((v - a) ** 2).sum(axis=1)
        if not d2.min() <= loss <= d2.max():
            bad += 1
        if k == 1 and loss != d2[0]:
            bad += 1
    elapsed = time.perf_counter() - t0
    report(3, "soft-alignment bounds", bad == 0 and elapsed < 10,
           f"{bad} violations in 10^4 pairs, {elapsed:.1f}s")


def test_04_ema():
    rng = np.random.default_rng(4)
    exact = True
    for _ in range(200):
        anchors = rng.normal(size=(int(rng.integers(1, 8)), 5))
        v = rng.normal(size=5)
        k, _ = nearest_anchor(v, AnchorSet(anchors))
        out = ema_update(AnchorSet(anchors), v, 0.999).anchors
        changed = np.flatnonzero(np.any(out != anchors, axis=1))
        exact &= changed.tolist() in ([k], []) and np.array_equal(out[k], 0.999 * anchors[k] + (1 - 0.999) * v)
        exact &= np.array_equal(np.delete(out, k, 0), np.delete(anchors, k, 0))
    a = AnchorSet(np.array([[2.0, -1.0, 0.5], [40.0, 40.0, 40.0]]))
    target = np.zeros(3)
    err = [np.linalg.norm(a.anchors[0] - target)]
    for _ in range(1000):
        ema_update_inplace(a, target, 0.999)
        err.append(np.linalg.norm(a.anchors[0] - target))
    ratios = np.array(err[1:]) / np.array(err[:-1])
    worst = float(np.max(np.abs(ratios / 0.999 - 1)))
    report(4, "EMA exactness and locality", exact and worst <= 1e-9,
           f"200 single-anchor updates bit-exact={exact}, geometric ratio rel err {worst:.1e}")


def test_05_selection_invariances():
    failures = []
    for seed in range(10):
        spec = data.benchmark_spec(seed=seed, n_source=80, n_target=120, n_eval=0)
        src, tgt = data.generate(spec)
        c = spec.n_classes
        # raw pixel statistics stand in for an encoder
        sv, _ = pooled_vectors(src.pixels, src.labels, c)
        tv, _ = pooled_vectors(tgt.pixels, np.argmax(tgt.pixels[..., :c], -1), c, "predicted")
        anchors = kmeans(sv.values, 10, seed=seed)
        scores = score_multi_anchor(tv.values, anchors)
        base = select(tgt.ids, scores, 0.05)
        if len(base.selected) != budget_count(0.05, len(tgt)) or len(set(base.selected)) != len(base.selected):
            failures.append(f"budget seed {seed}")
        chosen = np.isin(tgt.ids, base.selected)
        if scores[chosen].min() < scores[~chosen].max():
            failures.append(f"dominance seed {seed}")
        coarse = np.round(scores / scores.max(), 1)
        tied = select(tgt.ids, coarse, 0.05)
        by_id = dict(zip(tgt.ids.tolist(), coarse.tolist()))
        cut = min(by_id[i] for i in tied.selected)
        inside = [i for i in tied.selected if by_id[i] == cut]
        outside = [i for i, s in by_id.items() if s == cut and i not in tied.selected]
        if outside and max(inside) > min(outside):
            failures.append(f"ties seed {seed}")
        for lam in (0.1, 1.0, 10.0):
            scaled = score_multi_anchor(lam * tv.values, AnchorSet(lam * anchors.anchors))
            if select(tgt.ids, scaled, 0.05).selected != base.selected:
                failures.append(f"scale {lam} seed {seed}")
    report(5, "selection invariances", not failures,
           "budget, dominance, ties, scale {0.1,1,10} on 10 benchmarks"
           + (f"; failed: {failures}" if failures else ""))


# ---------------------------------------------------------------------------
# desk-scale pipeline reproductions


@pytest.fixture(scope="module")
def ablation_csvs(tmp_path_factory):
    """Two identical `ablate` runs on the default benchmark, five seeds."""
    root = tmp_path_factory.mktemp("ablate")
    paths, times = [], []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        assert cli.main(["ablate", "--out", str(root / name), "--set", "seeds=0,1,2,3,4"]) == 0
        times.append(time.perf_counter() - t0)
        paths.append(root / name / "ablation.csv")
    return paths, times


def _rows(path):
    return [{**r, "miou": float(r["miou"])} for r in csv.DictReader(open(path))]


def test_06_ablation_ladder(ablation_csvs):
    (path, _), (elapsed, _) = ablation_csvs
    med = median_by(_rows(path), "variant")
    ladder = ["M1", "M2", "M3", "M4", "Mu"]
    steps = all(med[b] >= med[a] - SLACK for a, b in zip(ladder, ladder[1:]))
    ok = med["M0"] + 15 <= med["M4"] and med["M0"] < med["M1"] and steps and elapsed < 600
    report(6, "ablation ladder", ok,
           " ".join(f"{v}={med[v]:.2f}" for v in ["M0"] + ladder) + f" ({elapsed:.0f}s)")


def test_07_budget_curve():
    t0 = time.perf_counter()
    rows = run_sweeps(ExperimentConfig(seeds=(0, 1, 2, 3, 4)), ("budget",))["budget"]
    elapsed = time.perf_counter() - t0
    med = median_by(rows, "budget")
    grid = [0.01, 0.02, 0.05, 0.1, 0.2]
    steady = all(med[b] >= med[a] - SLACK for a, b in zip(grid, grid[1:]))
    ok = steady and med[1.0] >= max(med[b] for b in grid) and elapsed < 900
    report(7, "budget monotonicity", ok,
           " ".join(f"{100 * b:g}%={med[b]:.2f}" for b in grid + [1.0]) + f" ({elapsed:.0f}s)")


def test_08_anchor_count():
    t0 = time.perf_counter()
    rows = run_sweeps(ExperimentConfig(benchmark="centroid_trap", seeds=(0, 1, 2)), ("anchors",))["anchors"]
    elapsed = time.perf_counter() - t0
    med = median_by(rows, "k_source")
    ok = (med[10] >= med[1] + 3 and all(med[k] > med[1] for k in (5, 10, 20)) and elapsed < 600)
    report(8, "anchor-count effect", ok,
           " ".join(f"K={k}:{m:.2f}" for k, m in med.items()) + f" ({elapsed:.0f}s)")


def test_09_strategy_comparison():
    rows = run_sweeps(ExperimentConfig(seeds=(0, 1, 2)), ("strategy",))["strategy"]
    med = median_by(rows, "strategy")
    share = median_by(rows, "strategy", "exclusive_share")
    spec = data.benchmark_spec(seed=0)
    _, tgt = data.generate(spec)
    base_rate = float(np.isin(tgt.scene_ids, spec.exclusive_scenes).mean())
    ok = (med["multi_anchor"] >= med["random"] + 2 and share["multi_anchor"] > base_rate
          and share["multi_anchor"] > share["random"])
    report(9, "strategy comparison (M1)", ok,
           " ".join(f"{s}={m:.2f}" for s, m in med.items())
           + f"; exclusive capture {share['multi_anchor']:.2f} vs random {share['random']:.2f}"
           + f", base rate {base_rate:.2f}")


def test_10_determinism(ablation_csvs):
    (a, b), _ = ablation_csvs
    same = a.read_bytes() == b.read_bytes()
    report(10, "determinism", same, f"two `ablate` runs byte-identical={same} ({a.stat().st_size} bytes)")
