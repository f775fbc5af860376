"""Image-level vectors: per-category masked mean pooling of latent maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LABEL_KINDS = ("ground_truth", "predicted", "pseudo")


@dataclass
class ImageVector:
    """Concatenated per-category mean latents, category order 0..C-1.

    ``values`` has shape (..., C * d_lat) and ``presence`` (..., C); leading
    axes index samples when vectors are handled in bulk.
    """

    values: np.ndarray
    presence: np.ndarray
    label_kind: str = "ground_truth"

    def __len__(self) -> int:
        return self.values.shape[0] if self.values.ndim > 1 else 1

    def block(self, c: int) -> np.ndarray:
        d = self.values.shape[-1] // self.presence.shape[-1]
        return self.values[..., c * d:(c + 1) * d]


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    # negative labels (ignored pixels) give an all-zero row
    return (labels[..., None] == np.arange(n_classes)).astype(np.float64)


def category_pool(latent: np.ndarray, labels: np.ndarray, n_classes: int):
    """Per-category mean of ``latent`` (..., H, W, d) over pixels labelled c.

    Returns (means (..., C, d), counts (..., C)); absent categories get a zero
    mean and count 0.
    """
    labels = np.asarray(labels)
    if latent.shape[:-1] != labels.shape:
        raise ValueError(f"latent grid {latent.shape[:-1]} does not match labels {labels.shape}")
    if labels.size and labels.max() >= n_classes:
        raise ValueError(f"label {labels.max()} outside [0, {n_classes})")
    lead = labels.shape[:-2]
    d = latent.shape[-1]
    onehot = _one_hot(labels, n_classes).reshape(lead + (-1, n_classes))
    lat = latent.reshape(lead + (-1, d))
    sums = np.einsum("...pc,...pd->...cd", onehot, lat)
    counts = onehot.sum(axis=-2)
    means = sums / np.maximum(counts, 1.0)[..., None]
    return means, counts


def image_vector(means: np.ndarray, counts_or_presence: np.ndarray,
                 label_kind: str = "ground_truth") -> ImageVector:
    presence = np.asarray(counts_or_presence) > 0
    values = means.reshape(means.shape[:-2] + (-1,))
    return ImageVector(values, presence, label_kind)


def pool_backward(grad: np.ndarray, labels: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`category_pool` composed with flattening.

    ``grad`` is (..., C * d); the result is (..., H, W, d) where pixel i with
    label c receives block c divided by count_c.
    """
    labels = np.asarray(labels)
    n_classes = counts.shape[-1]
    d = grad.shape[-1] // n_classes
    blocks = grad.reshape(grad.shape[:-1] + (n_classes, d)) / np.maximum(counts, 1.0)[..., None]
    onehot = _one_hot(labels, n_classes)
    return np.einsum("...hwc,...cd->...hwd", onehot, blocks)


def pooled_vectors(latent: np.ndarray, labels: np.ndarray, n_classes: int,
                   label_kind: str = "ground_truth") -> tuple[ImageVector, np.ndarray]:
    """Shortcut: ImageVector plus the counts needed for :func:`pool_backward`."""
    means, counts = category_pool(latent, labels, n_classes)
    return image_vector(means, counts, label_kind), counts


def dump_features(path, ids, domain: str, vectors: ImageVector, scene_ids=None) -> None:
    """Write one CSV row per vector: id, domain, label kind, scene, presence bits, values."""
    values = np.atleast_2d(vectors.values)
    presence = np.atleast_2d(vectors.presence)
    n_classes = presence.shape[1]
    header = (["id", "domain", "label_kind", "scene_id"]
              + [f"present_{c}" for c in range(n_classes)]
              + [f"f{j}" for j in range(values.shape[1])])
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r, sid in enumerate(ids):
            scene = "" if scene_ids is None else int(scene_ids[r])
            w.writerow([int(sid), domain, vectors.label_kind, scene]
                       + [int(b) for b in presence[r]] + [repr(float(x)) for x in values[r]])
