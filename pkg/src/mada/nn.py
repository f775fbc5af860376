"""Per-pixel encoder, 1x1 classifier head and domain discriminator.

Everything is plain numpy in float64 with hand-written reverse passes. Arrays
carry arbitrary leading batch/grid axes; the last axis is always features.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, NonFiniteError

CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """Named dense arrays: ``enc{i}.W/b``, ``cls.W/b``, ``dis{i}.W/b``.

    Weight matrices are stored (fan_in, fan_out) so a layer is ``x @ W + b``.
    """

    arrays: dict[str, np.ndarray]
    latent_tanh: bool = True  # tanh after the last encoder layer too

    def _layers(self, prefix: str) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        i = 0
        while f"{prefix}{i}.W" in self.arrays:
            out.append((self.arrays[f"{prefix}{i}.W"], self.arrays[f"{prefix}{i}.b"]))
            i += 1
        return out

    @property
    def encoder_layers(self):
        return self._layers("enc")

    @property
    def discriminator_layers(self):
        return self._layers("dis")

    @property
    def classifier(self):
        return self.arrays["cls.W"], self.arrays["cls.b"]

    @property
    def d_in(self) -> int:
        return self.arrays["enc0.W"].shape[0]

    @property
    def d_lat(self) -> int:
        return self.arrays["cls.W"].shape[0]

    @property
    def n_classes(self) -> int:
        return self.arrays["cls.W"].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.latent_tanh)

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: np.zeros_like(v) for k, v in self.arrays.items()}, self.latent_tanh)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def equal(self, other: "ModelParams") -> bool:
        if self.arrays.keys() != other.arrays.keys() or self.latent_tanh != other.latent_tanh:
            return False
        return all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items())


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int):
    w = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


def init_params(
    d_in: int,
    hidden: int,
    d_lat: int,
    n_classes: int,
    disc_hidden: int = 8,
    seed: int = 0,
    latent_tanh: bool = True,
) -> ModelParams:
    """Random model: encoder d_in -> hidden -> d_lat, classifier d_lat -> C,
    discriminator (C + 1) -> disc_hidden -> 1."""
    for name, val in [("d_in", d_in), ("hidden", hidden), ("d_lat", d_lat),
                      ("n_classes", n_classes), ("disc_hidden", disc_hidden)]:
        if val < 1:
            raise ConfigError(f"must be >= 1, got {val}", name)
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    arrays["enc0.W"], arrays["enc0.b"] = _dense(rng, d_in, hidden)
    arrays["enc1.W"], arrays["enc1.b"] = _dense(rng, hidden, d_lat)
    arrays["cls.W"], arrays["cls.b"] = _dense(rng, d_lat, n_classes)
    arrays["dis0.W"], arrays["dis0.b"] = _dense(rng, n_classes + 1, disc_hidden)
    arrays["dis1.W"], arrays["dis1.b"] = _dense(rng, disc_hidden, 1)
    return ModelParams(arrays, latent_tanh)


# ---------------------------------------------------------------------------
# generic tanh MLP (tanh between layers, linear output)


@dataclass
class MLPCache:
    input_shape: tuple
    activations: list  # activations[i] is the input to layer i, flattened 2-D
    out_tanh: bool = False


def _mlp_forward(layers, x: np.ndarray, out_tanh: bool = False):
    lead = x.shape[:-1]
    h = x.reshape(-1, x.shape[-1])
    acts = [h]
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        h = np.tanh(z) if (i < len(layers) - 1 or out_tanh) else z
        acts.append(h)
    out = h.reshape(lead + (h.shape[-1],))
    return out, MLPCache(x.shape, acts, out_tanh)


def _mlp_backward(layers, cache: MLPCache, dout: np.ndarray, prefix: str):
    n_out = layers[-1][0].shape[1]
    expected = cache.input_shape[:-1] + (n_out,)
    if dout.shape != expected:
        raise ValueError(f"upstream gradient shape {dout.shape} does not match cached forward {expected}")
    dh = dout.reshape(-1, n_out)
    grads = {}
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if i < len(layers) - 1 or cache.out_tanh:
            dz = dh * (1.0 - cache.activations[i + 1] ** 2)
        else:
            dz = dh
        grads[f"{prefix}{i}.W"] = cache.activations[i].T @ dz
        grads[f"{prefix}{i}.b"] = dz.sum(axis=0)
        dh = dz @ w.T
    return grads, dh.reshape(cache.input_shape)


# ---------------------------------------------------------------------------
# encoder


def encoder_forward(params: ModelParams, x) -> tuple[np.ndarray, MLPCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1 or x.shape[-1] != params.d_in:
        raise ConfigError(f"expected trailing dim {params.d_in}, got shape {x.shape}", "d_in")
    return _mlp_forward(params.encoder_layers, x, params.latent_tanh)


def forward_encoder(params: ModelParams, sample) -> np.ndarray:
    """LatentMap for a Sample (or a raw pixel grid)."""
    pixels = getattr(sample, "pixels", sample)
    return encoder_forward(params, pixels)[0]


def encoder_backward(params: ModelParams, cache: MLPCache, dlatent: np.ndarray) -> dict:
    grads, _ = _mlp_backward(params.encoder_layers, cache, dlatent, "enc")
    return grads


# ---------------------------------------------------------------------------
# classifier


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classifier_logits(params: ModelParams, latent: np.ndarray) -> np.ndarray:
    w, b = params.classifier
    if latent.shape[-1] != w.shape[0]:
        raise ConfigError(f"latent dim {latent.shape[-1]} != classifier rows {w.shape[0]}", "d_lat")
    return latent @ w + b


def forward_classifier(params: ModelParams, latent: np.ndarray) -> np.ndarray:
    """ProbMap: per-pixel softmax of the linear head."""
    return softmax(classifier_logits(params, latent))


def classifier_backward(params: ModelParams, latent: np.ndarray, dlogits: np.ndarray):
    """Returns (grads for cls.W/cls.b, gradient on the latent map)."""
    w, _ = params.classifier
    if dlogits.shape != latent.shape[:-1] + (w.shape[1],):
        raise ValueError(f"dlogits shape {dlogits.shape} does not match latent {latent.shape}")
    lat2 = latent.reshape(-1, w.shape[0])
    g2 = dlogits.reshape(-1, w.shape[1])
    grads = {"cls.W": lat2.T @ g2, "cls.b": g2.sum(axis=0)}
    return grads, dlogits @ w.T


@dataclass
class ForwardCache:
    enc: MLPCache
    latent: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def forward(params: ModelParams, x) -> ForwardCache:
    """Encoder + classifier, keeping everything needed by :func:`backward`."""
    latent, enc = encoder_forward(params, x)
    logits = classifier_logits(params, latent)
    return ForwardCache(enc, latent, logits, softmax(logits))


def backward(params: ModelParams, cache: ForwardCache, dlogits=None, dlatent=None) -> dict:
    """Parameter gradients for encoder and classifier.

    ``dlogits`` is the upstream gradient at the classifier logits, ``dlatent``
    any extra gradient arriving directly at the latent map (e.g. from pooled
    image-level losses). Either may be None.
    """
    grads: dict[str, np.ndarray] = {}
    total_dlat = np.zeros_like(cache.latent)
    if dlogits is not None:
        if dlogits.shape != cache.logits.shape:
            raise ValueError(f"dlogits shape {dlogits.shape} does not match cached logits {cache.logits.shape}")
        g, dl = classifier_backward(params, cache.latent, dlogits)
        grads.update(g)
        total_dlat += dl
    else:
        w, b = params.classifier
        grads["cls.W"] = np.zeros_like(w)
        grads["cls.b"] = np.zeros_like(b)
    if dlatent is not None:
        if dlatent.shape != cache.latent.shape:
            raise ValueError(f"dlatent shape {dlatent.shape} does not match cached latent {cache.latent.shape}")
        total_dlat += dlatent
    grads.update(encoder_backward(params, cache.enc, total_dlat))
    return grads


# ---------------------------------------------------------------------------
# discriminator on a ProbMap summary


def _safe_plogp(p: np.ndarray) -> np.ndarray:
    return p * np.log(np.where(p > 0, p, 1.0))


def prob_summary(probs: np.ndarray) -> np.ndarray:
    """(..., H, W, C) -> (..., C + 1): mean class distribution and mean
    per-pixel entropy normalised by log C."""
    c = probs.shape[-1]
    flat = probs.reshape(probs.shape[:-3] + (-1, c))
    mean_p = flat.mean(axis=-2)
    ent = -_safe_plogp(flat).sum(axis=-1)
    scale = 1.0 / np.log(c) if c > 1 else 0.0
    return np.concatenate([mean_p, scale * ent.mean(axis=-1, keepdims=True)], axis=-1)


def prob_summary_backward(probs: np.ndarray, dsummary: np.ndarray) -> np.ndarray:
    """Gradient at the logits that produced ``probs`` given d(summary)."""
    c = probs.shape[-1]
    n_pix = probs.shape[-3] * probs.shape[-2]
    g_mean = dsummary[..., :c][..., None, None, :] / n_pix
    g_ent = dsummary[..., c][..., None, None, None] / n_pix
    if c > 1:
        g_ent = g_ent / np.log(c)
    else:
        g_ent = g_ent * 0.0
    # through softmax: dz_j = p_j (g_j - sum_k g_k p_k)
    d = probs * (g_mean - (g_mean * probs).sum(axis=-1, keepdims=True))
    plogp = _safe_plogp(probs)
    ent = -plogp.sum(axis=-1, keepdims=True)
    d = d + g_ent * (-(plogp + probs * ent))
    return d


def discriminator_logit(params: ModelParams, probs: np.ndarray):
    """Returns (logit per map, cache)."""
    summary = prob_summary(probs)
    out, cache = _mlp_forward(params.discriminator_layers, summary)
    return out[..., 0], cache


def forward_discriminator(params: ModelParams, probs: np.ndarray) -> np.ndarray:
    """Probability that each ProbMap comes from the source domain."""
    logit, _ = discriminator_logit(params, probs)
    return np.clip(sigmoid(logit), 1e-15, 1.0 - 1e-15)


def discriminator_backward(params: ModelParams, cache: MLPCache, dlogit: np.ndarray):
    """Returns (dis.* grads, gradient on the summary vector)."""
    return _mlp_backward(params.discriminator_layers, cache, dlogit[..., None], "dis")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# optimisation


def sgd_step(params: ModelParams, grads: dict, lr: float) -> ModelParams:
    """Plain SGD; keys missing from ``grads`` are left untouched."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteError(f"non-finite gradient in {', '.join(sorted(bad))} (lr={lr})")
    new = dict(params.arrays)
    for k, g in grads.items():
        if k not in new:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != new[k].shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, parameter {new[k].shape}")
        new[k] = new[k] - lr * g
        if not np.all(np.isfinite(new[k])):
            raise NonFiniteError(f"parameter {k} became non-finite (lr={lr})")
    return ModelParams(new, params.latent_tanh)


def poly_lr(step: int, total_steps: int, base_lr: float, power: float = 0.9) -> float:
    if total_steps <= 0:
        return base_lr
    frac = min(max(step, 0), total_steps) / total_steps
    return base_lr * (1.0 - frac) ** power


def add_grads(*parts: dict) -> dict:
    out: dict[str, np.ndarray] = {}
    for p in parts:
        for k, v in p.items():
            out[k] = out[k] + v if k in out else v.copy()
    return out


def scale_grads(grads: dict, factor: float) -> dict:
    return {k: factor * v for k, v in grads.items()}


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: ModelParams, path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "latent_tanh": params.latent_tanh,
            "arrays": {k: list(v.shape) for k, v in params.arrays.items()}}
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **params.arrays)
    Path(path).write_bytes(buf.getvalue())


def load_params(path) -> ModelParams:
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k: np.array(z[k]) for k in meta["arrays"]}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {meta.get('version')}")
    for k, shape in meta["arrays"].items():
        if list(arrays[k].shape) != shape:
            raise DataFormatError(f"array {k} has shape {arrays[k].shape}, header says {shape}")
    return ModelParams(arrays, bool(meta.get("latent_tanh", True)))
