"""AOD-style end-to-end dehazing network and its momentum-SGD trainer.

The network estimates a per-pixel map ``K`` from the hazy input ``I`` and
outputs ``J = K * I - K + b``. Five convolutions (1x1, 3x3, 5x5, 7x7, 3x3)
with ReLU activations and concatenated skip inputs produce ``K``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import layers
from .haze import Pair
from .image import as_image
from .losses import LOSS_NAMES, get_loss
from .metrics import SsimConfig, psnr, ssim

MAGIC = b"AODN"
FORMAT_VERSION = 1
OFFSET_B = 1.0

# (name, in_channels, out_channels, kernel_size)
LAYERS = (
    ("conv1", 3, 3, 1),
    ("conv2", 3, 3, 3),
    ("conv3", 6, 3, 5),
    ("conv4", 6, 3, 7),
    ("conv5", 12, 3, 3),
)


class AodNet:
    """Parameter container; ``params`` maps ``conv<i>.weight``/``.bias`` to arrays."""

    def __init__(self, params: dict[str, np.ndarray] | None = None, b: float = OFFSET_B):
        self.b = b
        if params is None:
            params = {}
            for name, cin, cout, k in LAYERS:
                params[f"{name}.weight"] = np.zeros((cout, cin, k, k))
                params[f"{name}.bias"] = np.zeros(cout)
        for name, cin, cout, k in LAYERS:
            if params[f"{name}.weight"].shape != (cout, cin, k, k) or params[f"{name}.bias"].shape != (cout,):
                raise ValueError(f"bad parameter shape for {name}")
        self.params = params

    def copy(self) -> "AodNet":
        return AodNet({k: v.copy() for k, v in self.params.items()}, self.b)

    def param_names(self) -> list[str]:
        return [f"{name}.{kind}" for name, *_ in LAYERS for kind in ("weight", "bias")]


def init(seed: int = 0, std: float = 0.01) -> AodNet:
    rng = np.random.default_rng(seed)
    params = {}
    for name, cin, cout, k in LAYERS:
        params[f"{name}.weight"] = rng.normal(0.0, std, (cout, cin, k, k))
        params[f"{name}.bias"] = np.zeros(cout)
    return AodNet(params)


def _to_batch(hazy) -> np.ndarray:
    x = np.asarray(hazy, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ValueError(f"expected 3-channel input, got shape {x.shape}")
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def _from_batch(x: np.ndarray) -> np.ndarray:
    return x.transpose(0, 2, 3, 1)


def _forward(net: AodNet, x: np.ndarray):
    p = net.params
    caches = {}
    acts = {}

    def conv(name, inp):
        out, caches[name] = layers.conv2d_forward(inp, p[f"{name}.weight"], p[f"{name}.bias"])
        acts[name] = layers.relu(out)
        return acts[name]

    c1 = conv("conv1", x)
    c2 = conv("conv2", c1)
    c3 = conv("conv3", np.concatenate([c1, c2], axis=1))
    c4 = conv("conv4", np.concatenate([c2, c3], axis=1))
    k = conv("conv5", np.concatenate([c1, c2, c3, c4], axis=1))
    j = k * x - k + net.b
    return k, j, (x, caches, acts)


def forward(net: AodNet, hazy, clamp: bool = True):
    """Return ``(K, J)`` in image layout; a batch of images gives batched outputs.

    ``clamp=False`` keeps the affine output unclamped, as used for training.
    """
    single = np.asarray(hazy).ndim == 3
    k, j, _ = _forward(net, _to_batch(hazy))
    if clamp:
        j = np.clip(j, 0.0, 1.0)
    k, j = _from_batch(k), _from_batch(j)
    return (k[0], j[0]) if single else (k, j)


def _backward(net: AodNet, cache, dj: np.ndarray) -> dict[str, np.ndarray]:
    x, caches, acts = cache
    grads = {}

    def conv_back(name, dout):
        dout = layers.relu_backward(dout, acts[name])
        dx, grads[f"{name}.weight"], grads[f"{name}.bias"] = layers.conv2d_backward(dout, caches[name])
        return dx

    dk = dj * (x - 1.0)
    d5 = conv_back("conv5", dk)
    dc1, dc2, dc3, dc4 = np.split(d5, 4, axis=1)
    d4 = conv_back("conv4", dc4)
    dc2 = dc2 + d4[:, :3]
    dc3 = dc3 + d4[:, 3:]
    d3 = conv_back("conv3", dc3)
    dc1 = dc1 + d3[:, :3]
    dc2 = dc2 + d3[:, 3:]
    dc1 = dc1 + conv_back("conv2", dc2)
    conv_back("conv1", dc1)
    return {name: grads[name] for name in net.param_names()}


def backward(net: AodNet, hazy, dloss_dj) -> dict[str, np.ndarray]:
    """Parameter gradients given the loss gradient w.r.t. the unclamped output ``J``."""
    x = _to_batch(hazy)
    _, _, cache = _forward(net, x)
    return _backward(net, cache, _to_batch(dloss_dj))



def param_grad_check(net: AodNet, hazy, clean, loss_fn, n_samples: int = 64, seed: int = 0,
                     epsilon: float = 1e-5) -> float:
    """Max relative error of ``backward`` against central differences on sampled parameters."""
    x = _to_batch(hazy)
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim == 3:
        clean = clean[None]

    def value(n):
        return batch_loss(n, _from_batch(x), clean, loss_fn)[0]

    grads = batch_loss(net, _from_batch(x), clean, loss_fn)[1]
    index = [(k, i) for k in net.param_names() for i in range(net.params[k].size)]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(index), size=min(n_samples, len(index)), replace=False)
    worst = 0.0
    for p in picks:
        k, i = index[p]
        plus, minus = net.copy(), net.copy()
        plus.params[k].flat[i] += epsilon
        minus.params[k].flat[i] -= epsilon
        numeric = (value(plus) - value(minus)) / (2 * epsilon)
        analytic = grads[k].flat[i]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return worst

# ---------------------------------------------------------------------------
# optimisation


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    grad_clip_norm: float = 0.1
    batch_size: int = 8
    epochs: int = 14
    seed: int = 0
    crop_size: int = 32
    loss: str = "l2"

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.crop_size < 1:
            raise ValueError("batch_size, crop_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0 or self.grad_clip_norm <= 0:
            raise ValueError("optimizer settings must be non-negative (clip norm positive)")

    def finetune(self) -> "TrainConfig":
        return dataclasses.replace(self, learning_rate=0.002, batch_size=16)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


def sgd_step(net: AodNet, grads: dict, cfg: TrainConfig, velocity: dict | None = None):
    """One momentum step with weight decay and global-norm clipping.

    Returns ``(net, velocity, clipped_norm)``; ``net`` is updated in place.
    """
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    g = {k: grads[k] + cfg.weight_decay * net.params[k] for k in net.params}
    norm = math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
    if norm > cfg.grad_clip_norm:
        scale = cfg.grad_clip_norm / norm
        g = {k: v * scale for k, v in g.items()}
        norm = cfg.grad_clip_norm
    for k in net.params:
        velocity[k] = cfg.momentum * velocity[k] + g[k]
        net.params[k] = net.params[k] - cfg.learning_rate * velocity[k]
    return net, velocity, norm


def batch_loss(net: AodNet, hazy: np.ndarray, clean: np.ndarray, loss_fn):
    """Mean loss over a batch and the matching parameter gradients."""
    x = _to_batch(hazy)
    _, j, cache = _forward(net, x)
    j_img = _from_batch(j)
    dj = np.empty_like(j_img)
    total = 0.0
    n = len(j_img)
    for i in range(n):
        lv = loss_fn(j_img[i], clean[i])
        total += lv.value
        dj[i] = lv.grad / n
    return total / n, _backward(net, cache, _to_batch(dj))


@dataclass
class TrainResult:
    net: AodNet
    history: list[float]
    velocity: dict
    clip_norms: list[float]


def train(net: AodNet, dataset: Sequence[Pair], cfg: TrainConfig, velocity: dict | None = None) -> TrainResult:
    if not dataset:
        raise ValueError("empty dataset")
    for pair in dataset:
        h, w = pair.hazy.shape[:2]
        if cfg.crop_size > min(h, w):
            raise ValueError(f"crop {cfg.crop_size} larger than {w}x{h} image {pair.name!r}")
    loss_fn = get_loss(cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    history, norms = [], []
    c = cfg.crop_size
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), cfg.batch_size):
            hazy, clean = [], []
            for idx in order[start:start + cfg.batch_size]:
                pair = dataset[idx]
                h, w = pair.hazy.shape[:2]
                y0, x0 = int(rng.integers(h - c + 1)), int(rng.integers(w - c + 1))
                hazy.append(pair.hazy[y0:y0 + c, x0:x0 + c])
                clean.append(pair.clean[y0:y0 + c, x0:x0 + c])
            value, grads = batch_loss(net, np.stack(hazy), np.stack(clean), loss_fn)
            net, velocity, norm = sgd_step(net, grads, cfg, velocity)
            history.append(value)
            norms.append(norm)
    return TrainResult(net, history, velocity, norms)


def dehaze(net: AodNet, hazy) -> np.ndarray:
    return forward(net, as_image(hazy))[1]


def evaluate(net: AodNet, dataset: Sequence[Pair], ssim_cfg: SsimConfig = SsimConfig()) -> list[dict]:
    """Per-image PSNR/SSIM rows followed by aggregate mean rows.

    Each row also carries the hazy-input baseline (``psnr_hazy``,
    ``ssim_hazy``). Aggregates are ``all`` plus one row per subset tag.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rows = []
    for pair in dataset:
        j = dehaze(net, pair.hazy)
        rows.append({
            "image": pair.name,
            "subset": pair.subset,
            "psnr": psnr(j, pair.clean),
            "ssim": ssim(j, pair.clean, ssim_cfg),
            "psnr_hazy": psnr(pair.hazy, pair.clean),
            "ssim_hazy": ssim(pair.hazy, pair.clean, ssim_cfg),
        })
    groups = {"all": rows}
    for tag in sorted({r["subset"] for r in rows if r["subset"]}):
        groups[tag] = [r for r in rows if r["subset"] == tag]
    aggregates = []
    for tag, members in groups.items():
        agg = {"image": f"mean:{tag}", "subset": tag}
        for key in ("psnr", "ssim", "psnr_hazy", "ssim_hazy"):
            agg[key] = float(np.mean([r[key] for r in members]))
        aggregates.append(agg)
    return rows + aggregates


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: AodNet, path) -> None:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(LAYERS))]
    for _, cin, cout, k in LAYERS:
        parts.append(struct.pack("<III", cout, cin, k))
    for name in net.param_names():
        parts.append(np.asarray(net.params[name], dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path) -> AodNet:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not an AODN checkpoint")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION or n != len(LAYERS):
        raise ValueError(f"{path}: unsupported checkpoint version {version} / {n} layers")
    pos = 12
    for _, cin, cout, k in LAYERS:
        if struct.unpack_from("<III", buf, pos) != (cout, cin, k):
            raise ValueError(f"{path}: layer dimensions do not match the architecture")
        pos += 12
    params = {}
    net = AodNet()
    for name in net.param_names():
        shape = net.params[name].shape
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
        params[name] = arr.astype(np.float64).reshape(shape)
        pos += 4 * count
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return AodNet(params)
