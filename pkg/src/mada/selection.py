"""Active sample scoring and budgeted one-shot selection."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorSet, squared_distances
from .errors import ConfigError

STRATEGIES = ("multi_anchor", "random", "entropy", "adversarial", "aada")
ADV_CLAMP = 1e-6


def score_multi_anchor(v, source_anchors: AnchorSet, presence=None) -> np.ndarray:
    """Distance to the closest source anchor, min_k ||v - A_k||^2."""
    values = np.asarray(getattr(v, "values", v), dtype=np.float64)
    d2 = squared_distances(values, source_anchors.anchors, presence)
    return d2.min(axis=-1)


def score_entropy(prob: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    """Summed per-pixel entropy over a map, normalised by log C.

    A uniform H x W map scores H * W, a one-hot map 0.
    """
    c = n_classes or prob.shape[-1]
    plogp = prob * np.log(np.where(prob > 0, prob, 1.0))
    total = plogp.sum(axis=(-3, -2, -1))
    return -total / np.log(c)


def score_adversarial(d) -> np.ndarray:
    """(1 - d) / d for discriminator output d = P(source); d clamped away from 0 and 1."""
    d = np.clip(np.asarray(d, dtype=np.float64), ADV_CLAMP, 1.0 - ADV_CLAMP)
    return (1.0 - d) / d


def score_aada(e_ent, e_adv) -> np.ndarray:
    return np.asarray(e_ent) * np.asarray(e_adv)


def budget_count(budget: float, pool_size: int) -> int:
    if not 0.0 < budget <= 1.0:
        raise ConfigError(f"budget must be in (0, 1], got {budget}", "budget")
    # round first: 0.05 * 100 is 5.000000000000001 in binary
    return min(pool_size, math.ceil(round(budget * pool_size, 9)))


@dataclass
class SelectionResult:
    strategy: str
    budget: float
    scores: dict[int, float]
    selected: list[int]
    descending: bool = True
    meta: dict = field(default_factory=dict)

    def to_json(self, scene_ids: dict[int, int] | None = None,
                exclusive_scenes=()) -> dict:
        report = {
            "strategy": self.strategy,
            "budget": self.budget,
            "order": "descending" if self.descending else "ascending",
            "n_pool": len(self.scores),
            "n_selected": len(self.selected),
            "selected": [int(i) for i in self.selected],
            "scores": {str(k): float(v) for k, v in sorted(self.scores.items())},
        }
        if scene_ids is not None:
            report["scene_composition"] = scene_composition(self.selected, scene_ids, exclusive_scenes)
        report.update(self.meta)
        return report


def scene_composition(selected, scene_ids: dict[int, int], exclusive_scenes=()) -> dict:
    sel = Counter(int(scene_ids[i]) for i in selected)
    pool = Counter(int(s) for s in scene_ids.values())
    n_sel = max(len(selected), 1)
    excl = set(int(s) for s in exclusive_scenes)
    return {
        "selected_per_scene": {str(s): sel.get(s, 0) for s in sorted(pool)},
        "pool_per_scene": {str(s): pool[s] for s in sorted(pool)},
        "exclusive_share_selected": sum(sel.get(s, 0) for s in excl) / n_sel,
        "exclusive_share_pool": sum(pool[s] for s in excl) / max(len(scene_ids), 1),
    }


def select(ids, scores=None, budget: float = 0.05, strategy: str = "multi_anchor",
           seed: int = 0, descending: bool = True) -> SelectionResult:
    """Pick ceil(budget * N) ids.

    Scored strategies rank by score (descending unless ``descending=False``),
    breaking ties by ascending id. ``strategy="random"`` ignores scores and
    draws uniformly without replacement from ``seed``.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}", "strategy")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ConfigError("empty target pool", "ids")
    if len(np.unique(ids)) != ids.size:
        raise ConfigError("duplicate ids in pool", "ids")
    k = budget_count(budget, ids.size)
    if strategy == "random":
        rng = np.random.default_rng(seed)
        chosen = ids[rng.choice(ids.size, size=k, replace=False)]
        score_map = {int(i): 0.0 for i in ids} if scores is None else \
            {int(i): float(s) for i, s in zip(ids, scores)}
        return SelectionResult(strategy, budget, score_map, [int(i) for i in chosen], descending)
    if scores is None:
        raise ConfigError(f"strategy {strategy!r} needs scores", "scores")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != ids.shape:
        raise ConfigError(f"{scores.shape[0]} scores for {ids.size} ids", "scores")
    key = -scores if descending else scores
    order = np.lexsort((ids, key))
    chosen = ids[order[:k]]
    return SelectionResult(strategy, budget, {int(i): float(s) for i, s in zip(ids, scores)},
                           [int(i) for i in chosen], descending)
