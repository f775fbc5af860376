"""Training objectives and their gradients.

Every loss returns its value together with the gradient at the point where it
attaches to the model (logits, image vectors or discriminator logits), so the
training loop only chains reverse passes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .anchors import AnchorSet
from .features import pool_backward, pooled_vectors

DIST_EPS = 1e-12


@dataclass
class LossReport:
    seg_source: float = 0.0
    seg_active: float = 0.0
    dis_t: float = 0.0
    pseudo: float = 0.0
    adversarial: float = 0.0
    total: float = 0.0
    counts: dict = field(default_factory=dict)
    clamped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def ce_loss(prob: np.ndarray, labels: np.ndarray, logits: np.ndarray | None = None):
    """Pixel-averaged cross-entropy, averaged over the leading sample axes.

    ``prob`` is (..., H, W, C) and ``labels`` (..., H, W). Pixels with a
    negative label contribute nothing but still count in the 1/(HW) factor.
    Returns (loss, gradient at the logits).
    """
    labels = np.asarray(labels)
    c = prob.shape[-1]
    hw = prob.shape[-3] * prob.shape[-2]
    n_maps = int(np.prod(prob.shape[:-3])) if prob.ndim > 3 else 1
    if n_maps == 0:
        return 0.0, np.zeros_like(prob)
    valid = labels >= 0
    onehot = (labels[..., None] == np.arange(c)).astype(np.float64)
    if logits is not None:
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    else:
        logp = np.log(np.maximum(prob, 1e-300))
    loss = -(onehot * logp).sum() / (hw * n_maps)
    grad = (prob - onehot) * valid[..., None] / (hw * n_maps)
    return float(loss), grad


def soft_align_loss(v, anchors, eps: float = DIST_EPS):
    """Harmonic mean of squared distances from ``v`` to every anchor.

    L = V / sum_v 1/d_v^2, dL/dv = (L^2 / V) * sum_v 2 (v - A_v) / d_v^4.
    Squared distances below ``eps`` are clamped (and held constant for the
    gradient). Works on one vector (D,) or a stack (N, D).
    Returns (loss, grad, number of clamped distances).
    """
    values = np.asarray(getattr(v, "values", v), dtype=np.float64)
    a = anchors.anchors if isinstance(anchors, AnchorSet) else np.asarray(anchors, dtype=np.float64)
    k = a.shape[0]
    diff = values[..., None, :] - a
    d2 = (diff * diff).sum(axis=-1)
    small = d2 < eps
    d2c = np.where(small, eps, d2)
    # m * V / sum(m / d^2): every ratio is <= 1, so the bounds survive rounding
    m = d2c.min(axis=-1, keepdims=True)
    loss = m[..., 0] * (k / (m / d2c).sum(axis=-1))
    inv = 1.0 / d2c
    w = np.where(small, 0.0, inv * inv)
    grad = (loss * loss / k)[..., None] * (2.0 * (w[..., None] * diff).sum(axis=-2))
    return loss, grad, int(small.sum())


def pseudo_labels(prob: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Per-pixel argmax (lowest class on ties). With ``threshold``, pixels
    whose top probability is below it become -1 (ignored)."""
    lab = np.argmax(prob, axis=-1)
    if threshold is not None and threshold > 0:
        lab = np.where(prob.max(axis=-1) >= threshold, lab, -1)
    return lab


def pseudo_loss(prob: np.ndarray, pseudo: np.ndarray, logits: np.ndarray | None = None):
    return ce_loss(prob, pseudo, logits)


def bce_with_logits(logit: np.ndarray, target: float):
    """Mean binary cross-entropy and its gradient w.r.t. each logit."""
    logit = np.asarray(logit, dtype=np.float64)
    n = logit.size
    if n == 0:
        return 0.0, np.zeros_like(logit)
    loss = np.logaddexp(0.0, -logit) if target == 1 else np.logaddexp(0.0, logit)
    grad = (nn.sigmoid(logit) - target) / n
    return float(loss.mean()), grad


# ---------------------------------------------------------------------------
# stage-2 combined objective


@dataclass
class SemiBatch:
    source_x: np.ndarray
    source_y: np.ndarray
    active_x: np.ndarray
    active_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_pseudo: np.ndarray
    active_ids: np.ndarray | None = None
    unlabeled_ids: np.ndarray | None = None


@dataclass
class SemiResult:
    report: LossReport
    grads: dict
    target_ids: np.ndarray  # ids of rows in target_vectors (active first, then unlabeled)
    target_vectors: np.ndarray | None  # (n_target_in_batch, C * d_lat)


def combined_semi_loss(params: nn.ModelParams, batch: SemiBatch, anchors: AnchorSet | None = None,
                       use_dis: bool = True, use_pseudo: bool = True, w_seg: float = 1.0,
                       w_dis: float = 1.0, w_pseudo: float = 1.0) -> SemiResult:
    """L_seg + L_dis + L_pseudo for one minibatch.

    L_seg is the source CE plus the labelled-target CE (each averaged over
    its own samples). L_dis is averaged over every target sample in the batch,
    pooled with ground truth for labelled and pseudo labels for unlabelled
    ones. L_pseudo covers unlabelled samples only. Anchors are constants.
    """
    c = params.n_classes
    report = LossReport()
    parts = []
    n_s, n_a, n_u = len(batch.source_x), len(batch.active_x), len(batch.unlabeled_x)
    report.counts = {"source": n_s, "active": n_a, "unlabeled": n_u}

    fs = fa = fu = None
    if n_s:
        fs = nn.forward(params, batch.source_x)
        report.seg_source, g = ce_loss(fs.probs, batch.source_y, fs.logits)
        parts.append(nn.backward(params, fs, dlogits=w_seg * g))
    dlog_a = dlat_a = dlog_u = dlat_u = None
    if n_a:
        fa = nn.forward(params, batch.active_x)
        report.seg_active, g = ce_loss(fa.probs, batch.active_y, fa.logits)
        dlog_a = w_seg * g
    if n_u:
        fu = nn.forward(params, batch.unlabeled_x)
        if use_pseudo:
            report.pseudo, g = pseudo_loss(fu.probs, batch.unlabeled_pseudo, fu.logits)
            dlog_u = w_pseudo * g

    ids_parts, vec_parts = [], []
    n_t = n_a + n_u
    if anchors is not None and n_t:
        terms = []
        if n_a:
            va, ca = pooled_vectors(fa.latent, batch.active_y, c)
            vec_parts.append(va.values)
            ids_parts.append(batch.active_ids if batch.active_ids is not None else np.full(n_a, -1))
            terms.append(("a", va.values, ca, batch.active_y))
        if n_u:
            vu, cu = pooled_vectors(fu.latent, batch.unlabeled_pseudo, c, "pseudo")
            vec_parts.append(vu.values)
            ids_parts.append(batch.unlabeled_ids if batch.unlabeled_ids is not None else np.full(n_u, -1))
            terms.append(("u", vu.values, cu, batch.unlabeled_pseudo))
        if use_dis:
            total = 0.0
            for tag, vals, counts, labels in terms:
                loss, gv, nclamp = soft_align_loss(vals, anchors)
                report.clamped += nclamp
                total += float(loss.sum())
                dlat = pool_backward(w_dis * gv / n_t, labels, counts)
                if tag == "a":
                    dlat_a = dlat
                else:
                    dlat_u = dlat
            report.dis_t = total / n_t
    if fa is not None and (dlog_a is not None or dlat_a is not None):
        parts.append(nn.backward(params, fa, dlogits=dlog_a, dlatent=dlat_a))
    if fu is not None and (dlog_u is not None or dlat_u is not None):
        parts.append(nn.backward(params, fu, dlogits=dlog_u, dlatent=dlat_u))

    report.total = (w_seg * (report.seg_source + report.seg_active)
                    + w_dis * report.dis_t + w_pseudo * report.pseudo)
    grads = nn.add_grads(*parts) if parts else {}
    vectors = np.concatenate(vec_parts) if vec_parts else None
    tids = np.concatenate(ids_parts) if ids_parts else np.zeros(0, dtype=np.int64)
    return SemiResult(report, grads, tids, vectors)


# ---------------------------------------------------------------------------
# warm-up: output-space adversarial alignment


@dataclass
class WarmupResult:
    report: LossReport  # seg_source and adversarial (fooling) terms; total = seg + w * adv
    gen_grads: dict  # encoder + classifier
    dis_loss: float
    dis_grads: dict  # discriminator
    source_probs: np.ndarray
    target_probs: np.ndarray


def discriminator_loss(params: nn.ModelParams, source_probs: np.ndarray, target_probs: np.ndarray):
    """BCE with source=1 / target=0, averaged over all maps. Returns (loss, dis grads)."""
    n_s, n_t = len(source_probs), len(target_probs)
    n = n_s + n_t
    loss = 0.0
    parts = []
    for probs, label, m in ((source_probs, 1.0, n_s), (target_probs, 0.0, n_t)):
        if m == 0:
            continue
        logit, cache = nn.discriminator_logit(params, probs)
        l, g = bce_with_logits(logit, label)
        loss += l * m / n
        g_dis, _ = nn.discriminator_backward(params, cache, g * m / n)
        parts.append(g_dis)
    return loss, nn.add_grads(*parts)


def adversarial_warmup_losses(params: nn.ModelParams, source_x, source_y, target_x,
                              adv_weight: float = 0.01) -> WarmupResult:
    """Generator side: source CE + adv_weight * BCE(D(target), source label).
    Discriminator side: BCE on detached source/target maps."""
    report = LossReport()
    fs = nn.forward(params, source_x)
    report.seg_source, g = ce_loss(fs.probs, source_y, fs.logits)
    report.counts = {"source": len(source_x), "target": len(target_x)}
    parts = [nn.backward(params, fs, dlogits=g)]
    target_probs = np.zeros((0,) + fs.probs.shape[1:])
    if len(target_x):
        ft = nn.forward(params, target_x)
        target_probs = ft.probs
        if adv_weight != 0.0:
            logit, cache = nn.discriminator_logit(params, ft.probs)
            report.adversarial, g_logit = bce_with_logits(logit, 1.0)
            _, g_summary = nn.discriminator_backward(params, cache, g_logit)
            dlogits = nn.prob_summary_backward(ft.probs, g_summary)
            parts.append(nn.backward(params, ft, dlogits=adv_weight * dlogits))
    report.total = report.seg_source + adv_weight * report.adversarial
    gen = {k: v for k, v in nn.add_grads(*parts).items() if not k.startswith("dis")}
    dis_loss, dis_grads = discriminator_loss(params, fs.probs, target_probs)
    return WarmupResult(report, gen, dis_loss, dis_grads, fs.probs, target_probs)
