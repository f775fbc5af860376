"""K-means anchors over image-level vectors, nearest-anchor queries and the
EMA update used to track target anchors during adaptation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

log = logging.getLogger(__name__)


@dataclass
class AnchorSet:
    anchors: np.ndarray  # (K, D)
    domain: str = "source"
    assignment_counts: np.ndarray | None = None
    wcss_history: list[float] = field(default_factory=list)
    repair_iterations: list[int] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def K(self) -> int:
        return self.anchors.shape[0]

    def copy(self) -> "AnchorSet":
        return AnchorSet(self.anchors.copy(), self.domain,
                         None if self.assignment_counts is None else self.assignment_counts.copy(),
                         list(self.wcss_history), list(self.repair_iterations), self.stop_reason)


def squared_distances(vectors: np.ndarray, anchors: np.ndarray, presence=None,
                      block_size: int | None = None) -> np.ndarray:
    """||v - A_k||^2 for every (vector, anchor) pair -> (..., K).

    With ``presence`` (..., C) and ``block_size``, only blocks of categories
    present in the vector contribute (masked policy).
    """
    diff = vectors[..., None, :] - anchors
    sq = diff * diff
    if presence is not None:
        c = presence.shape[-1]
        bs = block_size or vectors.shape[-1] // c
        mask = np.repeat(np.asarray(presence, dtype=np.float64), bs, axis=-1)
        sq = sq * mask[..., None, :]
    return sq.sum(axis=-1)


def wcss(vectors: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = vectors - centroids[labels]
    return float(np.sum(diff * diff))


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _means(x, labels, k, old):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(old)
    np.add.at(sums, labels, x)
    new = old.copy()
    nz = counts > 0
    new[nz] = sums[nz] / counts[nz, None]
    return new, counts


def _lloyd(x, k, rng, max_iter, tol):
    centers = _kmeanspp(x, k, rng)
    labels = np.argmin(squared_distances(x, centers), axis=1)
    history = [wcss(x, centers, labels)]
    repairs: list[int] = []
    reason = "max_iter"
    for it in range(1, max_iter + 1):
        centers, counts = _means(x, labels, k, centers)
        repaired = False
        for j in np.flatnonzero(counts == 0):
            far = np.argmax(np.sum((x - centers[labels]) ** 2, axis=1))
            centers[j] = x[far]
            labels = labels.copy()
            labels[far] = j
            repaired = True
        if repaired:
            repairs.append(it)
            log.debug("kmeans: reseeded empty cluster(s) at iteration %d", it)
        new_labels = np.argmin(squared_distances(x, centers), axis=1)
        history.append(wcss(x, centers, new_labels))
        if not repaired and np.array_equal(new_labels, labels):
            reason = "fixpoint"
            labels = new_labels
            break
        prev = history[-2]
        labels = new_labels
        if not repaired and prev > 0 and (prev - history[-1]) / prev < tol:
            reason = "tol"
            break
    centers, counts = _means(x, labels, k, centers)
    final = wcss(x, centers, labels)
    if final != history[-1]:
        history.append(final)
    return centers, counts, history, repairs, reason


def kmeans(vectors, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-10,
           domain: str = "source", n_init: int = 10) -> AnchorSet:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    Each restart stops at an assignment fixpoint, when the relative WCSS
    decrease drops below ``tol``, or after ``max_iter`` iterations. An empty
    cluster is reseeded to the point farthest from its current centroid; those
    iterations are recorded in ``repair_iterations`` since they may raise
    WCSS. ``wcss_history[t]`` is the objective of the winning restart after
    iteration t (t=0: seeding).
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"expected 2-D array of vectors, got shape {x.shape}", "vectors")
    if K < 1:
        raise ConfigError("must be >= 1", "K")
    if n_init < 1:
        raise ConfigError("must be >= 1", "n_init")
    if x.shape[0] < K:
        raise ConfigError(f"need at least K={K} vectors, got {x.shape[0]}", "K")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(x, K, rng, max_iter, tol)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    centers, counts, history, repairs, reason = best
    return AnchorSet(centers, domain, counts, history, repairs, reason)


def nearest_anchor(v, anchor_set: AnchorSet, presence=None):
    """(index, squared distance) of the closest anchor; lowest index on ties.
    Works on a single vector or a stack of them."""
    values = getattr(v, "values", v)
    d2 = squared_distances(np.asarray(values, dtype=np.float64), anchor_set.anchors, presence)
    idx = np.argmin(d2, axis=-1)
    dist = np.take_along_axis(d2, np.expand_dims(idx, -1), axis=-1)[..., 0]
    if np.ndim(idx) == 0:
        return int(idx), float(dist)
    return idx, dist


def ema_update(anchor_set: AnchorSet, v, alpha: float = 0.999) -> AnchorSet:
    """Move only the nearest anchor: A <- alpha * A + (1 - alpha) * v."""
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"alpha must be in [0, 1), got {alpha}", "alpha")
    values = np.asarray(getattr(v, "values", v), dtype=np.float64)
    k, _ = nearest_anchor(values, anchor_set)
    out = anchor_set.copy()
    out.anchors[k] = alpha * anchor_set.anchors[k] + (1.0 - alpha) * values
    return out


def ema_update_inplace(anchor_set: AnchorSet, v: np.ndarray, alpha: float) -> int:
    """Same arithmetic as :func:`ema_update` without copying; returns the index moved."""
    k, _ = nearest_anchor(v, anchor_set)
    anchor_set.anchors[k] = alpha * anchor_set.anchors[k] + (1.0 - alpha) * v
    return k


def save_anchors(anchor_set: AnchorSet, path) -> None:
    payload = {
        "version": 1, "domain": anchor_set.domain, "K": anchor_set.K,
        "dim": int(anchor_set.anchors.shape[1]),
        "anchors": anchor_set.anchors.tolist(),
        "assignment_counts": None if anchor_set.assignment_counts is None
        else [int(c) for c in anchor_set.assignment_counts],
    }
    Path(path).write_text(json.dumps(payload))


def load_anchors(path) -> AnchorSet:
    try:
        payload = json.loads(Path(path).read_text())
        arr = np.asarray(payload["anchors"], dtype=np.float64).reshape(payload["K"], payload["dim"])
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataFormatError(f"cannot read anchors from {path}: {exc}") from exc
    counts = payload.get("assignment_counts")
    return AnchorSet(arr, payload["domain"], None if counts is None else np.asarray(counts))
