"""Two-stage adaptation pipeline, evaluation, ablation ladder and sweeps."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import nn
from .anchors import AnchorSet, ema_update_inplace, kmeans
from .errors import ConfigError, NonFiniteError
from .features import ImageVector, pooled_vectors
from .losses import SemiBatch, adversarial_warmup_losses, combined_semi_loss, pseudo_labels
from .selection import (STRATEGIES, SelectionResult, scene_composition, score_aada,
                        score_adversarial, score_entropy, score_multi_anchor, select)

log = logging.getLogger(__name__)

# A: active samples, B: soft alignment, C: EMA anchors, D: pseudo-label loss
VARIANTS = {
    "M0": dict(active=False, dis=False, ema=False, pseudo=False),
    "M1": dict(active=True, dis=False, ema=False, pseudo=False),
    "M2": dict(active=True, dis=True, ema=False, pseudo=False),
    "M3": dict(active=True, dis=True, ema=True, pseudo=False),
    "M4": dict(active=True, dis=True, ema=True, pseudo=True),
    "Mu": dict(active=True, dis=False, ema=False, pseudo=False),
}
LADDER = ("M0", "M1", "M2", "M3", "M4", "Mu")


@dataclass
class ExperimentConfig:
    # data
    benchmark: str = "default"
    spec_file: str = ""
    n_source: int = 400
    n_target: int = 400
    n_eval: int = 200
    noise: float = 0.25
    shift_rotation: float = 0.15
    shift_translation: float = 0.3
    # model
    hidden: int = 16
    d_lat: int = 8
    disc_hidden: int = 8
    # anchors / selection
    k_source: int = 10
    v_target: int = 10
    budget: float = 0.05
    strategy: str = "multi_anchor"
    nearest_first: bool = False
    masked_distance: bool = False
    kmeans_max_iter: int = 100
    kmeans_n_init: int = 10
    # warm-up
    warmup_epochs: int = 20
    adv_weight: float = 0.01
    warmup_lr: float = 0.5
    dis_lr: float = 0.5
    # stage 2
    stage2_epochs: int = 50
    step1_fraction: float = 0.2
    base_lr: float = 0.5
    power: float = 0.9
    alpha: float = 0.999
    batch_size: int = 20
    pseudo_threshold: float = 0.0
    pseudo_refresh_epochs: int = 0
    w_seg: float = 1.0
    w_dis: float = 0.001
    w_pseudo: float = 1.0
    # harness
    variant: str = "M4"
    seeds: tuple = (0, 1, 2)
    sweep_variant: str = "M1"
    k_grid: tuple = (1, 5, 10, 20, 50)
    budget_grid: tuple = (0.01, 0.02, 0.05, 0.1, 0.2, 1.0)
    n_jobs: int = 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}", "variant")
        if self.sweep_variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.sweep_variant!r}", "sweep_variant")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}", "strategy")
        if not 0.0 < self.budget <= 1.0:
            raise ConfigError("must be in (0, 1]", "budget")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("must be in [0, 1)", "alpha")
        if not 0.0 <= self.step1_fraction <= 1.0:
            raise ConfigError("must be in [0, 1]", "step1_fraction")
        for name in ("k_source", "v_target", "batch_size", "hidden", "d_lat", "disc_hidden",
                     "kmeans_n_init"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        for name in ("warmup_epochs", "stage2_epochs", "n_source", "n_target", "n_eval"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", name)
        if not self.seeds:
            raise ConfigError("at least one seed required", "seeds")
        for b in self.budget_grid:
            if not 0.0 < b <= 1.0:
                raise ConfigError(f"budget {b} outside (0, 1]", "budget_grid")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def domain_spec(self, seed: int) -> data_mod.DomainSpec:
        if self.spec_file:
            spec = data_mod.DomainSpec.from_dict(json.loads(Path(self.spec_file).read_text()))
            return dataclasses.replace(spec, seed=seed)
        return data_mod.benchmark_spec(self.benchmark, seed=seed, n_source=self.n_source,
                                       n_target=self.n_target, n_eval=self.n_eval,
                                       noise=self.noise, shift_rotation=self.shift_rotation,
                                       shift_translation=self.shift_translation)


# ---------------------------------------------------------------------------
# config files: flat key = value, '#' comments


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else int
            return tuple(kind(s) for s in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {type(default).__name__}", name) from exc


def parse_overrides(pairs, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    fields = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    updates = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}", item)
        key, val = item.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigError("unknown config key", key)
        updates[key] = _coerce(key, val, fields[key])
    out = dataclasses.replace(cfg, **updates)
    out.validate()
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    text = Path(path).read_text()
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value", f"{path}:{lineno}")
        pairs.append(line)
    return parse_overrides(list(pairs) + list(overrides))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# helpers


def _check_finite(value: float, what: str, it: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite {what} at iteration {it}")


def image_vectors(params: nn.ModelParams, pixels: np.ndarray, labels: np.ndarray | None,
                  kind: str = "ground_truth") -> tuple[ImageVector, np.ndarray]:
    """ImageVectors for a stack of grids; ``labels=None`` pools with predicted
    labels. Returns (vectors, probs)."""
    f = nn.forward(params, pixels)
    if labels is None:
        labels = np.argmax(f.probs, axis=-1)
        kind = "predicted"
    vec, _ = pooled_vectors(f.latent, labels, params.n_classes, kind)
    return vec, f.probs


@dataclass
class Metrics:
    per_class_iou: np.ndarray  # nan for classes absent from both prediction and truth
    miou: float
    confusion: np.ndarray  # rows: truth, cols: prediction
    excluded: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"miou": self.miou,
                "per_class_iou": [None if np.isnan(x) else float(x) for x in self.per_class_iou],
                "confusion": self.confusion.tolist(), "excluded": self.excluded}


def metrics_from_labels(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> Metrics:
    t = np.asarray(truth).ravel()
    p = np.asarray(pred).ravel()
    conf = np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    tp = np.diag(conf).astype(np.float64)
    denom = conf.sum(axis=0) + conf.sum(axis=1) - tp
    iou = np.full(n_classes, np.nan)
    ok = denom > 0
    iou[ok] = tp[ok] / denom[ok]
    excluded = [int(c) for c in np.flatnonzero(~ok)]
    if excluded:
        log.info("classes %s absent from prediction and truth; excluded from mIoU", excluded)
    miou = float(np.mean(iou[ok])) if ok.any() else float("nan")
    return Metrics(iou, miou, conf, excluded)


def evaluate(params: nn.ModelParams, dataset: data_mod.Dataset) -> Metrics:
    """Pixel-wise argmax predictions scored by per-class IoU and mIoU."""
    if dataset.labels is None:
        raise ConfigError("evaluation dataset has no labels", "eval")
    f = nn.forward(params, dataset.pixels)
    return metrics_from_labels(dataset.labels, np.argmax(f.probs, axis=-1), dataset.n_classes)


class _Cycler:
    """Endless reshuffled passes over a row index set."""

    def __init__(self, rows: np.ndarray, rng: np.random.Generator):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.rng = rng
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        if self.rows.size == 0:
            return self.rows
        k = min(k, self.rows.size)
        out = []
        while k:
            if self.pos >= self.order.size:
                self.order = self.rng.permutation(self.rows)
                self.pos = 0
            n = min(k, self.order.size - self.pos)
            out.append(self.order[self.pos:self.pos + n])
            self.pos += n
            k -= n
        return np.concatenate(out)


# ---------------------------------------------------------------------------
# warm-up


@dataclass
class WarmupOutput:
    params: nn.ModelParams
    source_vectors: ImageVector
    log: list


def run_warmup(cfg: ExperimentConfig, source: data_mod.Dataset, target: data_mod.Dataset,
               seed: int, params: nn.ModelParams | None = None) -> WarmupOutput:
    """Source-supervised training with output-space adversarial alignment,
    then image vectors of every source sample under the frozen encoder."""
    if params is None:
        params = nn.init_params(source.pixels.shape[-1], cfg.hidden, cfg.d_lat, source.n_classes,
                                cfg.disc_hidden, seed=seed)
    bs = cfg.batch_size
    iters = math.ceil(len(source) / bs) if len(source) else 0
    total = cfg.warmup_epochs * iters
    rng_s = np.random.default_rng([seed, 11])
    tgt = _Cycler(np.arange(len(target)), np.random.default_rng([seed, 12]))
    records = []
    it = 0
    for epoch in range(cfg.warmup_epochs):
        perm = rng_s.permutation(len(source))
        for b in range(iters):
            rows = perm[b * bs:(b + 1) * bs]
            trow = tgt.take(bs)
            res = adversarial_warmup_losses(params, source.pixels[rows], source.labels[rows],
                                            target.pixels[trow], cfg.adv_weight)
            _check_finite(res.report.total, "warm-up loss", it)
            _check_finite(res.dis_loss, "discriminator loss", it)
            lr = nn.poly_lr(it, total, cfg.warmup_lr, cfg.power)
            lr_d = nn.poly_lr(it, total, cfg.dis_lr, cfg.power)
            params = nn.sgd_step(params, res.gen_grads, lr)
            params = nn.sgd_step(params, res.dis_grads, lr_d)
            records.append({"phase": "warmup", "iter": it, "epoch": epoch, "lr": lr,
                            "seg_source": res.report.seg_source,
                            "adversarial": res.report.adversarial,
                            "total": res.report.total, "dis": res.dis_loss})
            it += 1
    vectors, _ = image_vectors(params, source.pixels, source.labels)
    return WarmupOutput(params, vectors, records)


# ---------------------------------------------------------------------------
# stage 1: source anchors and active selection


@dataclass
class Stage1Output:
    source_anchors: AnchorSet | None
    selection: SelectionResult
    labeled_ids: list
    unlabeled_ids: list


def target_scores(params: nn.ModelParams, target: data_mod.Dataset, strategy: str,
                  source_anchors: AnchorSet | None = None, masked: bool = False) -> np.ndarray:
    vec, probs = image_vectors(params, target.pixels, None)
    if strategy == "multi_anchor":
        presence = vec.presence if masked else None
        return score_multi_anchor(vec.values, source_anchors, presence)
    if strategy == "random":
        return np.zeros(len(target))
    e_ent = score_entropy(probs, params.n_classes)
    if strategy == "entropy":
        return e_ent
    e_adv = score_adversarial(nn.forward_discriminator(params, probs))
    if strategy == "adversarial":
        return e_adv
    return score_aada(e_ent, e_adv)


def run_stage1(params: nn.ModelParams, source_vectors: ImageVector, target: data_mod.Dataset,
               cfg: ExperimentConfig, seed: int, strategy: str | None = None,
               k_source: int | None = None, budget: float | None = None) -> Stage1Output:
    """K-means source anchors, target scoring and one-shot budgeted selection."""
    strategy = strategy or cfg.strategy
    k = k_source or cfg.k_source
    budget = cfg.budget if budget is None else budget
    anchors = None
    if strategy == "multi_anchor":
        anchors = kmeans(source_vectors.values, k, seed=seed, max_iter=cfg.kmeans_max_iter,
                         n_init=cfg.kmeans_n_init)
    scores = target_scores(params, target, strategy, anchors, cfg.masked_distance)
    sel = select(target.ids, scores, budget, strategy, seed=seed,
                 descending=not (strategy == "multi_anchor" and cfg.nearest_first))
    chosen = set(sel.selected)
    unlabeled = [int(i) for i in target.ids if int(i) not in chosen]
    return Stage1Output(anchors, sel, list(sel.selected), unlabeled)


# ---------------------------------------------------------------------------
# stage 2: semi-supervised adaptation


@dataclass
class Stage2Output:
    params: nn.ModelParams
    log: list
    target_anchors: AnchorSet | None
    initial_anchors: AnchorSet | None
    step1_params: nn.ModelParams | None = None


def run_stage2(params: nn.ModelParams, source: data_mod.Dataset, target: data_mod.Dataset,
               labeled_ids, cfg: ExperimentConfig, seed: int, variant: str | None = None,
               ) -> Stage2Output:
    """Step 1 fine-tunes on source + labelled target; step 2 freezes pseudo
    labels and K-means target anchors; step 3 trains the variant's combined
    objective with per-sample EMA anchor updates."""
    variant = variant or cfg.variant
    flags = VARIANTS[variant]
    c = source.n_classes
    bs = cfg.batch_size
    labeled_rows = target.rows_for_ids(labeled_ids) if flags["active"] else np.zeros(0, dtype=np.int64)
    mask = np.ones(len(target), dtype=bool)
    mask[labeled_rows] = False
    unlabeled_rows = np.flatnonzero(mask)
    iters = math.ceil(len(source) / bs) if len(source) else 0
    total = cfg.stage2_epochs * iters
    epochs1 = int(round(cfg.step1_fraction * cfg.stage2_epochs))
    needs_target = flags["dis"] or flags["pseudo"]

    rng_s = np.random.default_rng([seed, 21])
    act = _Cycler(labeled_rows, np.random.default_rng([seed, 22]))
    unl = _Cycler(unlabeled_rows, np.random.default_rng([seed, 23]))
    params = params.copy()
    records: list = []
    anchors = initial = None
    pseudo = None
    step1_params = None
    it = 0

    def refresh_targets(p):
        nonlocal pseudo
        f = nn.forward(p, target.pixels)
        pseudo = pseudo_labels(f.probs, cfg.pseudo_threshold or None)
        labels = pseudo.copy()
        labels[labeled_rows] = target.labels[labeled_rows]
        vec, _ = pooled_vectors(f.latent, labels, c)
        return vec

    for epoch in range(cfg.stage2_epochs):
        if epoch == epochs1:
            step1_params = params.copy()
            if needs_target and len(target):
                vec = refresh_targets(params)
                v = min(cfg.v_target, len(target))
                anchors = kmeans(vec.values, v, seed=seed, max_iter=cfg.kmeans_max_iter,
                                 domain="target", n_init=cfg.kmeans_n_init)
                initial = anchors.copy()
        elif (needs_target and epoch > epochs1 and cfg.pseudo_refresh_epochs > 0
              and (epoch - epochs1) % cfg.pseudo_refresh_epochs == 0):
            refresh_targets(params)
        step3 = epoch >= epochs1
        perm = rng_s.permutation(len(source))
        for b in range(iters):
            rows = perm[b * bs:(b + 1) * bs]
            arow = act.take(bs)
            urow = unl.take(bs) if (step3 and needs_target) else np.zeros(0, dtype=np.int64)
            batch = SemiBatch(
                source.pixels[rows], source.labels[rows],
                target.pixels[arow], target.labels[arow],
                target.pixels[urow],
                pseudo[urow] if pseudo is not None else np.zeros((0,) + target.labels.shape[1:], dtype=np.int64),
                target.ids[arow], target.ids[urow],
            )
            res = combined_semi_loss(
                params, batch, anchors if (step3 and flags["dis"]) else None,
                use_dis=step3 and flags["dis"], use_pseudo=step3 and flags["pseudo"],
                w_seg=cfg.w_seg, w_dis=cfg.w_dis, w_pseudo=cfg.w_pseudo)
            _check_finite(res.report.total, "stage-2 loss", it)
            lr = nn.poly_lr(it, total, cfg.base_lr, cfg.power)
            params = nn.sgd_step(params, res.grads, lr)
            drift = 0.0
            if step3 and flags["ema"] and anchors is not None and res.target_vectors is not None:
                for r in np.argsort(res.target_ids, kind="stable"):
                    ema_update_inplace(anchors, res.target_vectors[r], cfg.alpha)
                if not np.all(np.isfinite(anchors.anchors)):
                    raise NonFiniteError(f"non-finite target anchor at iteration {it}")
            if anchors is not None:
                drift = float(np.max(np.linalg.norm(anchors.anchors - initial.anchors, axis=1)))
            rec = {"phase": "step3" if step3 else "step1", "iter": it, "epoch": epoch, "lr": lr,
                   "anchor_drift": drift}
            rec.update(res.report.to_dict())
            records.append(rec)
            it += 1
    if step1_params is None:
        step1_params = params.copy()
    return Stage2Output(params, records, anchors, initial, step1_params)


# ---------------------------------------------------------------------------
# one seed: data, warm-up, selection, adaptation


class SeedRun:
    """Lazily computed, cached artefacts for one seed of one config."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        spec = cfg.domain_spec(seed)
        self.spec = spec
        self.source, self.target = data_mod.generate(spec)
        self.eval = data_mod.generate_eval(spec)
        self._warmup: WarmupOutput | None = None
        self._stage1: dict = {}

    @property
    def warmup(self) -> WarmupOutput:
        if self._warmup is None:
            self._warmup = run_warmup(self.cfg, self.source, self.target, self.seed)
        return self._warmup

    def stage1(self, strategy=None, k_source=None, budget=None) -> Stage1Output:
        key = (strategy or self.cfg.strategy, k_source or self.cfg.k_source,
               self.cfg.budget if budget is None else budget)
        if key not in self._stage1:
            w = self.warmup
            self._stage1[key] = run_stage1(w.params, w.source_vectors, self.target, self.cfg,
                                           self.seed, *key)
        return self._stage1[key]

    def exclusive_capture(self, selected) -> float:
        comp = scene_composition(selected, dict(zip(self.target.ids.tolist(),
                                                    self.target.scene_ids.tolist())),
                                 self.spec.exclusive_scenes)
        return comp["exclusive_share_selected"]

    def run_variant(self, variant: str, strategy=None, k_source=None, budget=None) -> dict:
        """Train and evaluate one variant; returns a result row."""
        row = {"variant": variant, "seed": self.seed}
        if variant == "M0":
            params = self.warmup.params
            row.update(strategy="none", k_source=0, budget=0.0, n_labeled=0, exclusive_share=0.0)
        else:
            if variant == "Mu":
                labeled = [int(i) for i in self.target.ids]
                row.update(strategy="all", k_source=0, budget=1.0)
            else:
                s1 = self.stage1(strategy, k_source, budget)
                labeled = s1.labeled_ids
                row.update(strategy=s1.selection.strategy, k_source=k_source or self.cfg.k_source,
                           budget=s1.selection.budget)
            row["n_labeled"] = len(labeled)
            row["exclusive_share"] = self.exclusive_capture(labeled) if labeled else 0.0
            params = run_stage2(self.warmup.params, self.source, self.target, labeled, self.cfg,
                                self.seed, variant).params
        m = evaluate(params, self.eval)
        row["miou"] = 100.0 * m.miou
        for ci, v in enumerate(m.per_class_iou):
            row[f"iou_{ci}"] = float("nan") if np.isnan(v) else 100.0 * float(v)
        return row


def _ablation_seed(args):
    cfg, seed, variants = args
    run = SeedRun(cfg, seed)
    return [run.run_variant(v) for v in variants]


def _map(fn, jobs, n_jobs: int):
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_ablation(cfg: ExperimentConfig, variants=LADDER) -> list[dict]:
    """One row per (variant, seed) for the M0..M4, Mu ladder."""
    cfg.validate()
    out = _map(_ablation_seed, [(cfg, s, tuple(variants)) for s in cfg.seeds], cfg.n_jobs)
    return [r for rows in out for r in rows]


def _sweep_seed(args):
    cfg, seed, kinds = args
    run = SeedRun(cfg, seed)
    v = cfg.sweep_variant
    rows = []
    if "anchors" in kinds:
        for k in cfg.k_grid:
            r = run.run_variant(v, strategy="multi_anchor", k_source=k)
            r["sweep"] = "anchors"
            rows.append(r)
    if "budget" in kinds:
        for b in cfg.budget_grid:
            r = run.run_variant("Mu") if b >= 1.0 else run.run_variant(v, budget=b)
            r["sweep"] = "budget"
            r["budget"] = b
            rows.append(r)
    if "strategy" in kinds:
        for s in STRATEGIES:
            r = run.run_variant(v, strategy=s)
            r["sweep"] = "strategy"
            rows.append(r)
    return rows


SWEEP_KINDS = ("anchors", "budget", "strategy")


def run_sweeps(cfg: ExperimentConfig, kinds=SWEEP_KINDS) -> dict[str, list[dict]]:
    """Anchor-count curve, budget curve and strategy table (rows per seed)."""
    cfg.validate()
    for k in kinds:
        if k not in SWEEP_KINDS:
            raise ConfigError(f"unknown sweep {k!r}", "sweep")
    out = _map(_sweep_seed, [(cfg, s, tuple(kinds)) for s in cfg.seeds], cfg.n_jobs)
    rows = [r for part in out for r in part]
    return {k: [r for r in rows if r["sweep"] == k] for k in kinds}


def median_by(rows: list[dict], key: str, value: str = "miou") -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.median(v)) for k, v in groups.items()}


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def write_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    cols: list = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def write_jsonl(records: list[dict], path) -> None:
    with open(Path(path), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
