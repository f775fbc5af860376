"""Synthetic multimodal source/target segmentation domains.

A *scene* is one mixture mode: per-category Gaussian means in input space and
an ordered list of categories laid out as vertical bands across the grid.
Target samples see every scene mean through an affine ``Shift``; some scenes
exist only in the target domain.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

DOMAIN_CODES = {"source": 0, "target": 1, "eval": 2}
MAGIC = b"MADASET\x00"
FORMAT_VERSION = 1
HEADER_KEYS = ("version", "domain", "n_classes", "count", "height", "width", "d_in", "seed",
               "has_labels")


@dataclass
class Scene:
    means: np.ndarray  # (C, d_in); rows for unused categories are ignored
    categories: tuple[int, ...]  # band order, left to right
    scale: float = 0.3  # isotropic per-pixel std
    weight: float = 1.0  # relative frequency within a domain
    bands_per_sample: int = 0  # 0: every listed category; k: random k-subset per sample
    jitter: float = 0.0  # std of a per-sample offset shared by all category means

    def to_dict(self) -> dict:
        return {"means": np.asarray(self.means).tolist(), "categories": list(self.categories),
                "scale": self.scale, "weight": self.weight,
                "bands_per_sample": self.bands_per_sample, "jitter": self.jitter}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(np.asarray(d["means"], dtype=np.float64), tuple(d["categories"]),
                   float(d.get("scale", 0.3)), float(d.get("weight", 1.0)),
                   int(d.get("bands_per_sample", 0)), float(d.get("jitter", 0.0)))


@dataclass
class Shift:
    """Affine map on target means: ``scale * R(rotation) @ mu + translation``.

    The rotation acts in the plane of input dims 0 and 1.
    """

    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple[float, ...] | None = None

    def apply(self, means: np.ndarray) -> np.ndarray:
        d = means.shape[-1]
        rot = np.eye(d)
        if d >= 2:
            c, s = np.cos(self.rotation), np.sin(self.rotation)
            rot[:2, :2] = [[c, -s], [s, c]]
        out = self.scale * means @ rot.T
        if self.translation is not None:
            out = out + np.asarray(self.translation, dtype=np.float64)
        return out


@dataclass
class DomainSpec:
    n_classes: int
    scenes: list[Scene]
    shift: Shift = field(default_factory=Shift)
    exclusive_scenes: tuple[int, ...] = ()
    n_source: int = 400
    n_target: int = 400
    n_eval: int = 200
    height: int = 8
    width: int = 8
    d_in: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 1:
            raise ConfigError("must be >= 1", "n_classes")
        if not self.scenes:
            raise ConfigError("at least one scene required", "scenes")
        for name in ("n_source", "n_target", "n_eval"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", name)
        if self.height < 1 or self.width < 1 or self.d_in < 1:
            raise ConfigError("grid dims and d_in must be >= 1", "height/width/d_in")
        for i, sc in enumerate(self.scenes):
            if np.shape(sc.means) != (self.n_classes, self.d_in):
                raise ConfigError(f"scene {i} means shape {np.shape(sc.means)}, expected "
                                  f"{(self.n_classes, self.d_in)}", f"scenes[{i}].means")
            if not sc.categories or any(c < 0 or c >= self.n_classes for c in sc.categories):
                raise ConfigError(f"scene {i} categories must lie in [0, {self.n_classes})",
                                  f"scenes[{i}].categories")
            if len(sc.categories) > self.width:
                raise ConfigError(f"scene {i} has more bands than grid columns",
                                  f"scenes[{i}].categories")
            if not 0 <= sc.bands_per_sample <= len(sc.categories):
                raise ConfigError(f"scene {i} bands_per_sample outside [0, {len(sc.categories)}]",
                                  f"scenes[{i}].bands_per_sample")
            if sc.scale < 0 or sc.weight <= 0 or sc.jitter < 0:
                raise ConfigError(f"scene {i} needs scale >= 0, jitter >= 0 and weight > 0",
                                  f"scenes[{i}]")
        for s in self.exclusive_scenes:
            if s < 0 or s >= len(self.scenes):
                raise ConfigError(f"unknown scene id {s}", "exclusive_scenes")
        if len(set(self.exclusive_scenes)) == len(self.scenes):
            raise ConfigError("every scene is target-exclusive; source would be empty",
                              "exclusive_scenes")
        if self.shift.translation is not None and len(self.shift.translation) != self.d_in:
            raise ConfigError(f"translation must have length {self.d_in}", "shift.translation")

    def scene_ids(self, domain: str) -> list[int]:
        if domain == "source":
            return [i for i in range(len(self.scenes)) if i not in self.exclusive_scenes]
        return list(range(len(self.scenes)))

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "scenes": [s.to_dict() for s in self.scenes],
            "shift": {"rotation": self.shift.rotation, "scale": self.shift.scale,
                      "translation": None if self.shift.translation is None
                      else list(self.shift.translation)},
            "exclusive_scenes": list(self.exclusive_scenes),
            "n_source": self.n_source, "n_target": self.n_target, "n_eval": self.n_eval,
            "height": self.height, "width": self.width, "d_in": self.d_in, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        sh = d.get("shift", {})
        tr = sh.get("translation")
        return cls(
            n_classes=int(d["n_classes"]),
            scenes=[Scene.from_dict(s) for s in d["scenes"]],
            shift=Shift(float(sh.get("rotation", 0.0)), float(sh.get("scale", 1.0)),
                        None if tr is None else tuple(float(t) for t in tr)),
            exclusive_scenes=tuple(int(s) for s in d.get("exclusive_scenes", ())),
            n_source=int(d.get("n_source", 400)), n_target=int(d.get("n_target", 400)),
            n_eval=int(d.get("n_eval", 200)), height=int(d.get("height", 8)),
            width=int(d.get("width", 8)), d_in=int(d.get("d_in", 4)), seed=int(d.get("seed", 0)),
        )


@dataclass
class Sample:
    id: int
    domain: str
    pixels: np.ndarray  # (H, W, d_in)
    labels: np.ndarray | None  # (H, W)
    scene_id: int


@dataclass
class Dataset:
    """Stacked samples of one domain. Row ``i`` is the sample with ``ids[i]``."""

    domain: str
    n_classes: int
    pixels: np.ndarray  # (N, H, W, d_in) float64
    labels: np.ndarray | None  # (N, H, W) int64
    ids: np.ndarray  # (N,) int64
    scene_ids: np.ndarray  # (N,) int64
    seed: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Sample:
        return Sample(int(self.ids[i]), self.domain, self.pixels[i],
                      None if self.labels is None else self.labels[i], int(self.scene_ids[i]))

    @property
    def grid(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape[1:4])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.domain, self.n_classes, self.pixels[rows],
                       None if self.labels is None else self.labels[rows],
                       self.ids[rows], self.scene_ids[rows], self.seed)

    def rows_for_ids(self, ids) -> np.ndarray:
        lookup = {int(v): r for r, v in enumerate(self.ids)}
        return np.array([lookup[int(i)] for i in ids], dtype=np.int64)

    def equals(self, other: "Dataset") -> bool:
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None
            and np.array_equal(self.labels, other.labels))
        return (self.domain == other.domain and self.n_classes == other.n_classes
                and self.seed == other.seed and self.pixels.shape == other.pixels.shape
                and np.array_equal(self.pixels, other.pixels) and same_labels
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.scene_ids, other.scene_ids))


def _stratified_scenes(rng: np.random.Generator, scene_ids: list[int], weights: np.ndarray,
                       n: int) -> np.ndarray:
    # every scene gets its rounded share (at least one when n allows), then shuffle
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    w = weights / weights.sum()
    counts = np.floor(w * n).astype(int)
    if n >= len(scene_ids):
        counts = np.maximum(counts, 1)
    while counts.sum() > n:
        counts[np.argmax(counts)] -= 1
    rem = w * n - counts
    for j in np.argsort(-rem, kind="stable")[: n - counts.sum()]:
        counts[j] += 1
    assign = np.repeat(np.asarray(scene_ids, dtype=np.int64), counts)
    return rng.permutation(assign)


def _band_labels(rng: np.random.Generator, categories: tuple[int, ...], h: int, w: int,
                 k: int = 0):
    if 0 < k < len(categories):
        keep = np.sort(rng.choice(len(categories), size=k, replace=False))
        categories = tuple(categories[j] for j in keep)
    m = len(categories)
    cuts = np.sort(rng.choice(np.arange(1, w), size=m - 1, replace=False)) if m > 1 else []
    edges = np.concatenate([[0], cuts, [w]]).astype(int)
    row = np.empty(w, dtype=np.int64)
    for c, a, b in zip(categories, edges[:-1], edges[1:]):
        row[a:b] = c
    return np.broadcast_to(row, (h, w)).copy()


def _generate_domain(spec: DomainSpec, domain: str, n: int) -> Dataset:
    code = DOMAIN_CODES[domain]
    scene_pool = spec.scene_ids("source" if domain == "source" else "target")
    weights = np.array([spec.scenes[s].weight for s in scene_pool], dtype=np.float64)
    assign = _stratified_scenes(np.random.default_rng([spec.seed, code, 1 << 20]),
                                scene_pool, weights, n)
    h, w, d = spec.height, spec.width, spec.d_in
    pixels = np.empty((n, h, w, d))
    labels = np.empty((n, h, w), dtype=np.int64)
    shifted = {}
    for i in range(n):
        sc = spec.scenes[int(assign[i])]
        means = sc.means
        if domain != "source":
            if int(assign[i]) not in shifted:
                shifted[int(assign[i])] = spec.shift.apply(np.asarray(sc.means, dtype=np.float64))
            means = shifted[int(assign[i])]
        # independent stream per (seed, domain, id) so generation order does not matter
        rng = np.random.default_rng([spec.seed, code, i])
        lab = _band_labels(rng, sc.categories, h, w, sc.bands_per_sample)
        labels[i] = lab
        noise = sc.scale * rng.standard_normal((h, w, d))
        offset = sc.jitter * rng.standard_normal(d) if sc.jitter > 0 else 0.0
        pixels[i] = means[lab] + offset + noise
    return Dataset(domain, spec.n_classes, pixels, labels, np.arange(n, dtype=np.int64),
                   assign.astype(np.int64), spec.seed)


def generate(spec: DomainSpec) -> tuple[Dataset, Dataset]:
    """Source and target datasets for ``spec``. Target labels are the oracle
    annotations; training code only reads those of actively selected ids."""
    spec.validate()
    return _generate_domain(spec, "source", spec.n_source), _generate_domain(spec, "target", spec.n_target)


def generate_eval(spec: DomainSpec) -> Dataset:
    """Held-out target-distribution split drawn from an independent stream."""
    spec.validate()
    return _generate_domain(spec, "eval", spec.n_eval)


# ---------------------------------------------------------------------------
# file format: MAGIC | u32 header length | JSON header | pixels | labels | ids | scene ids


def save(dataset: Dataset, path) -> None:
    n = len(dataset)
    grid = dataset.pixels.shape[1:4]
    header = {
        "version": FORMAT_VERSION, "domain": dataset.domain, "n_classes": dataset.n_classes,
        "count": n, "height": int(grid[0]), "width": int(grid[1]), "d_in": int(grid[2]),
        "seed": dataset.seed, "has_labels": dataset.labels is not None,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(hb)), hb,
             np.ascontiguousarray(dataset.pixels, dtype="<f8").tobytes()]
    if dataset.labels is not None:
        parts.append(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(dataset.ids, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(dataset.scene_ids, dtype="<i8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a dataset file")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC): len(MAGIC) + 4])
    off = len(MAGIC) + 4
    try:
        header = json.loads(raw[off: off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {header.get('version')}")
    off += hlen
    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise DataFormatError(f"{path}: header lacks {', '.join(missing)}")
    n, h, w, d = (int(header[k]) for k in ("count", "height", "width", "d_in"))
    sizes = [n * h * w * d * 8] + ([n * h * w * 8] if header["has_labels"] else []) + [n * 8, n * 8]
    if len(raw) != off + sum(sizes):
        raise DataFormatError(f"{path}: expected {off + sum(sizes)} bytes, found {len(raw)} (truncated?)")

    def take(nbytes, dtype, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=nbytes // 8, offset=off).reshape(shape)
        off += nbytes
        return arr.astype(dtype.lstrip("<"), copy=True)

    pixels = take(sizes[0], "<f8", (n, h, w, d))
    labels = take(sizes[1], "<i8", (n, h, w)) if header["has_labels"] else None
    ids = take(n * 8, "<i8", (n,))
    scene_ids = take(n * 8, "<i8", (n,))
    if labels is not None and n and (labels.min() < 0 or labels.max() >= header["n_classes"]):
        raise DataFormatError(f"{path}: label values outside [0, {header['n_classes']})")
    return Dataset(header["domain"], header["n_classes"], pixels, labels, ids, scene_ids,
                   header["seed"])


def empty_dataset(domain: str, n_classes: int, height: int, width: int, d_in: int) -> Dataset:
    return Dataset(domain, n_classes, np.zeros((0, height, width, d_in)),
                   np.zeros((0, height, width), dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# benchmark presets


def _square(c: int) -> np.ndarray:
    ang = 2 * np.pi * np.arange(c) / c
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def benchmark_spec(
    name: str = "default",
    seed: int = 0,
    n_source: int = 400,
    n_target: int = 400,
    n_eval: int = 200,
    noise: float = 0.25,
    shift_rotation: float = 0.15,
    shift_translation: float = 0.3,
) -> DomainSpec:
    """Desk-scale benchmark: 8x8 grids, d_in=4, C=4, three shared scenes and
    two target-exclusive ones.

    Input dims 2-3 carry the scene position and dims 0-1 a cyclic class
    layout, so a pixel's class depends on its scene. Shared scenes sit on a
    triangle around the origin with layouts 0, 1, 2. Exclusive scene 3 sits
    at the origin (the centroid of the shared scenes) with layout 3 and only
    two categories per image; exclusive scene 4 is a rare scene far outside
    the triangle with a permuted layout.

    ``default`` gives scene 3 a per-image position jitter, so it takes many
    labelled images to learn. ``centroid_trap`` drops the jitter and moves
    scene 4 closer, so a single source centroid never ranks scene 3 highly.
    """
    if name == "default":
        jitter, far = 0.5, (-6.0, 0.0)
    elif name == "centroid_trap":
        jitter, far = 0.0, (-4.0, 0.0)
    else:
        raise ConfigError(f"unknown benchmark {name!r}", "benchmark")
    c, d = 4, 4
    radius, spread = 1.5, 2.5
    dirs = _square(c)
    centers = spread * np.array([[np.cos(a), np.sin(a)] for a in (np.pi / 2, np.pi * 7 / 6, np.pi * 11 / 6)])

    def scene_means(center, layout):
        m = np.zeros((c, d))
        for k in range(c):
            m[k, :2] = radius * dirs[layout[k]]
            m[k, 2:] = center
        return m

    cats = tuple(range(c))
    scenes = [Scene(scene_means(centers[s], [(k + s) % c for k in range(c)]), cats, noise, 1.0)
              for s in range(3)]
    scenes.append(Scene(scene_means((0.0, 0.0), [(k + 3) % c for k in range(c)]), cats, noise, 0.9,
                        bands_per_sample=2, jitter=jitter))
    scenes.append(Scene(scene_means(far, (1, 0, 3, 2)), cats, noise, 0.1))
    return DomainSpec(
        n_classes=c, scenes=scenes,
        shift=Shift(rotation=shift_rotation, scale=1.0,
                    translation=(0.0, 0.0, shift_translation, shift_translation)),
        exclusive_scenes=(3, 4), n_source=n_source, n_target=n_target, n_eval=n_eval,
        height=8, width=8, d_in=d, seed=seed,
    )
