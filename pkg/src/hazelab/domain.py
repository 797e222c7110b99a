"""Gradient-reversal domain adaptation on a small image classifier.

A feature extractor feeds two branches: a task head trained on labeled
source images only, and a domain classifier that sees source and target
features through a gradient reversal layer (GRL). The GRL is the identity on
the forward pass and multiplies the incoming gradient by ``-lambda`` on the
backward pass, so one backward pass trains the domain classifier to separate
the domains while pushing the features to confuse it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .classical import dcp_dehaze
from .haze import DEPTH_KINDS, gen_depth, random_haze_params, synthesize_haze, transmission_from_depth
from .metrics import psnr

PROB_CLAMP = 1e-7
RES_KEYS = ("conv_a.weight", "conv_a.bias", "conv_b.weight", "conv_b.bias")
HEAD_KEYS = ("head.weight", "head.bias")
DOMAIN_KEYS = ("dom1.weight", "dom1.bias", "dom2.weight", "dom2.bias")


def grl_forward(x):
    return x


def grl_backward(upstream, lam: float):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return -lam * np.asarray(upstream)


def domain_bce(p, y):
    """Mean binary cross-entropy over the batch and its gradient w.r.t. ``p``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]``; the gradient is taken at the
    clamped value.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    n = p.size
    value = -float(np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))) / n
    grad = (p - y) / (p * (1 - p)) / n
    return value, grad


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class ToyModel:
    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    def copy(self) -> "ToyModel":
        return ToyModel({k: v.copy() for k, v in self.params.items()})

    @property
    def n_classes(self) -> int:
        return self.params["head.weight"].shape[0]


def init_toy(seed: int = 0, n_classes: int = 2) -> ToyModel:
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

    return ToyModel({
        "conv_a.weight": he((8, 3, 3, 3), 27),
        "conv_a.bias": np.zeros(8),
        "conv_b.weight": he((8, 8, 3, 3), 72),
        "conv_b.bias": np.zeros(8),
        "head.weight": he((n_classes, 8), 8),
        "head.bias": np.zeros(n_classes),
        "dom1.weight": he((16, 8), 8),
        "dom1.bias": np.zeros(16),
        "dom2.weight": he((1, 16), 16),
        "dom2.bias": np.zeros(1),
    })


def _features(model: ToyModel, images: np.ndarray):
    p = model.params
    x = np.ascontiguousarray(np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2))
    a, ca = layers.conv2d_forward(x, p["conv_a.weight"], p["conv_a.bias"])
    a = layers.relu(a)
    pa = layers.mean_pool2(a)
    b, cb = layers.conv2d_forward(pa, p["conv_b.weight"], p["conv_b.bias"])
    b = layers.relu(b)
    pb = layers.mean_pool2(b)
    f = pb.mean(axis=(2, 3))
    return f, (ca, a, pa, cb, b, pb)


def _features_backward(model: ToyModel, cache, df):
    ca, a, pa, cb, b, pb = cache
    hw = pb.shape[2] * pb.shape[3]
    dpb = np.broadcast_to(df[:, :, None, None] / hw, pb.shape)
    db = layers.relu_backward(layers.mean_pool2_backward(dpb, b.shape), b)
    dpa, gwb, gbb = layers.conv2d_backward(db, cb)
    da = layers.relu_backward(layers.mean_pool2_backward(dpa, a.shape), a)
    _, gwa, gba = layers.conv2d_backward(da, ca)
    return {"conv_a.weight": gwa, "conv_a.bias": gba, "conv_b.weight": gwb, "conv_b.bias": gbb}


def _domain_forward(model: ToyModel, f):
    p = model.params
    h_pre = f @ p["dom1.weight"].T + p["dom1.bias"]
    h = layers.relu(h_pre)
    z = (h @ p["dom2.weight"].T + p["dom2.bias"])[:, 0]
    return _sigmoid(z), h


def predict(model: ToyModel, images) -> np.ndarray:
    f, _ = _features(model, images)
    p = model.params
    return np.argmax(f @ p["head.weight"].T + p["head.bias"], axis=1)


def domain_predict(model: ToyModel, images) -> np.ndarray:
    f, _ = _features(model, images)
    return _domain_forward(model, f)[0]


@dataclass
class DomainBatch:
    source: np.ndarray
    labels: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if len(self.labels) != len(self.source):
            raise ValueError("every source example needs a class label")


def gradients(model: ToyModel, batch: DomainBatch, lam: float, reversal: str = "grl",
              terms: tuple[str, ...] = ("task", "domain")):
    """Loss values and parameter gradients for one batch.

    ``reversal="identity"`` replaces the GRL by a plain identity layer;
    ``terms`` restricts which loss terms contribute gradients.
    """
    p = model.params
    ns = len(batch.source)
    parts = [np.asarray(batch.source, dtype=np.float64)] if ns else []
    if len(batch.target):
        parts.append(np.asarray(batch.target, dtype=np.float64))
    images = np.concatenate(parts, axis=0)
    f, cache = _features(model, images)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    df = np.zeros_like(f)

    task_loss = 0.0
    if ns:
        logits = f[:ns] @ p["head.weight"].T + p["head.bias"]
        probs = _softmax(logits)
        labels = np.asarray(batch.labels, dtype=np.int64)
        task_loss = -float(np.mean(np.log(np.maximum(probs[np.arange(ns), labels], 1e-300))))
        if "task" in terms:
            dlogits = probs.copy()
            dlogits[np.arange(ns), labels] -= 1.0
            dlogits /= ns
            grads["head.weight"] = dlogits.T @ f[:ns]
            grads["head.bias"] = dlogits.sum(axis=0)
            df[:ns] += dlogits @ p["head.weight"]

    y = np.concatenate([np.zeros(ns), np.ones(len(images) - ns)])
    prob, h = _domain_forward(model, grl_forward(f))
    domain_loss, dprob = domain_bce(prob, y)
    if "domain" in terms:
        inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
        dz = (dprob * prob * (1.0 - prob) * inside)[:, None]
        grads["dom2.weight"] = dz.T @ h
        grads["dom2.bias"] = dz.sum(axis=0)
        dh = layers.relu_backward(dz @ p["dom2.weight"], h)
        grads["dom1.weight"] = dh.T @ f
        grads["dom1.bias"] = dh.sum(axis=0)
        df_dom = dh @ p["dom1.weight"]
        df += grl_backward(df_dom, lam) if reversal == "grl" else df_dom

    grads.update(_features_backward(model, cache, df))
    return task_loss, domain_loss, grads


def joint_step(model: ToyModel, batch: DomainBatch, lam: float = 0.1, lr: float = 0.5, freeze=()):
    """One plain gradient-descent step on the joint objective.

    ``freeze`` lists parameter names left untouched. Returns
    ``(model, task_loss, domain_loss)``; the model is updated in place.
    """
    if len(batch.source) == 0:
        raise ValueError("batch has no source examples")
    task_loss, domain_loss, grads = gradients(model, batch, lam)
    for k, g in grads.items():
        if k not in freeze:
            model.params[k] = model.params[k] - lr * g
    return model, task_loss, domain_loss


# ---------------------------------------------------------------------------
# toy domains


def render_shape(label: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Bright outline of a circle (label 0) or square (label 1) on a dark background."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bg = rng.uniform(0.0, 0.3, 3)
    fg = rng.uniform(0.6, 1.0, 3)
    r = rng.uniform(0.2, 0.32) * size
    cx, cy = rng.uniform(r + 1, size - r - 1, 2)
    if label == 0:
        dist = np.hypot(xx - cx, yy - cy)
    else:
        r *= 0.886  # equal area to the circle
        dist = np.maximum(np.abs(xx - cx), np.abs(yy - cy))
    mask = np.abs(dist - r) <= 1.0
    img = np.where(mask[:, :, None], fg, bg)
    return np.clip(img + rng.normal(0.0, 0.02, img.shape), 0.0, 1.0)


@dataclass
class ToyDomains:
    source: np.ndarray
    source_labels: np.ndarray
    clean_target: np.ndarray
    target_labels: np.ndarray
    target1: np.ndarray
    target2: np.ndarray
    haze: list = field(default_factory=list)

    def target(self, variant: int) -> np.ndarray:
        if variant not in (1, 2):
            raise ValueError("target variant must be 1 or 2")
        return self.target1 if variant == 1 else self.target2


def make_toy_domains(seed: int, n_per_domain: int = 64, size: int = 32) -> ToyDomains:
    """Labeled clean source renders and hazy / dehazed target renders."""
    rng = np.random.default_rng(seed)

    def renders(n):
        labels = rng.integers(0, 2, n)
        return np.stack([render_shape(int(c), rng, size) for c in labels]), labels

    source, source_labels = renders(n_per_domain)
    clean_t, target_labels = renders(n_per_domain)
    hazy, params = [], []
    for img in clean_t:
        s = int(rng.integers(2**31))
        hp = random_haze_params(s)
        kind = DEPTH_KINDS[int(rng.integers(len(DEPTH_KINDS)))]
        t = transmission_from_depth(gen_depth(kind, size, size, s + 1), hp.beta)
        hazy.append(synthesize_haze(img, t, hp.A))
        params.append(hp)
    hazy = np.stack(hazy)
    dehazed = np.stack([dcp_dehaze(h) for h in hazy])
    return ToyDomains(source, source_labels, clean_t, target_labels, hazy, dehazed, params)


def mean_psnr(images, references) -> float:
    return float(np.mean([psnr(a, b) for a, b in zip(images, references)]))


# ---------------------------------------------------------------------------
# experiment


def train_toy(model: ToyModel, data: ToyDomains, lam: float, iters: int, lr: float, seed: int,
              target_variant: int = 1, batch: int = 4):
    """Plain-GD training; the batch sequence depends only on ``seed``."""
    rng = np.random.default_rng(seed)
    target = data.target(target_variant)
    history = []
    for _ in range(iters):
        si = rng.integers(0, len(data.source), batch)
        ti = rng.integers(0, len(target), batch)
        b = DomainBatch(data.source[si], data.source_labels[si], target[ti])
        model, task_loss, domain_loss = joint_step(model, b, lam, lr)
        history.append((task_loss, domain_loss))
    return model, history


def accuracy(model: ToyModel, images, labels) -> float:
    return float(np.mean(predict(model, images) == np.asarray(labels)))


def domain_accuracy(model: ToyModel, source, target) -> float:
    p = domain_predict(model, np.concatenate([source, target]))
    y = np.concatenate([np.zeros(len(source)), np.ones(len(target))])
    return float(np.mean((p > 0.5) == (y > 0.5)))


def run_adaptation_experiment(seed: int, lam: float = 0.1, iters: int = 2000, target_variant: int = 1,
                              n_per_domain: int = 64, n_test: int = 64, lr: float = 0.5,
                              batch: int = 4) -> dict:
    """Train a lambda=0 baseline and a lambda>0 model from the same start and batches."""
    train_data = make_toy_domains(seed, n_per_domain)
    test_data = make_toy_domains(seed + 7919, n_test)
    start = init_toy(seed)
    baseline, _ = train_toy(start.copy(), train_data, 0.0, iters, lr, seed, target_variant, batch)
    adapted, _ = train_toy(start.copy(), train_data, lam, iters, lr, seed, target_variant, batch)
    test_target = test_data.target(target_variant)
    return {
        "seed": seed,
        "lambda": lam,
        "iters": iters,
        "target_variant": target_variant,
        "baseline_target_acc": accuracy(baseline, test_target, test_data.target_labels),
        "adapted_target_acc": accuracy(adapted, test_target, test_data.target_labels),
        "baseline_source_acc": accuracy(baseline, test_data.source, test_data.source_labels),
        "adapted_source_acc": accuracy(adapted, test_data.source, test_data.source_labels),
        "domain_acc_final": domain_accuracy(adapted, test_data.source, test_target),
    }
