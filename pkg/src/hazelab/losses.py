"""Training losses with exact analytic gradients w.r.t. the prediction.

Every loss normalizes by ``N``, the total number of samples (pixels times
channels) of the crop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .image import as_image, check_same_shape
from .metrics import MsSsimConfig, MsSsimTerms, SsimConfig, SsimTerms, _Window

LOSS_NAMES = ("l1", "l2", "ssim", "msssim", "msssim_l1", "msssim_l2")


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class MixedLossConfig:
    alpha: float = 0.1
    ms_cfg: MsSsimConfig = field(default_factory=MsSsimConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def weight_sigma(self) -> float:
        return self.ms_cfg.sigmas[-1]


def _pair(pred, target):
    pred, target = as_image(pred), as_image(target)
    check_same_shape(pred, target)
    return pred, target


def l1_loss(pred, target) -> LossValue:
    x, y = _pair(pred, target)
    d = x - y
    return LossValue(float(np.abs(d).mean()), np.sign(d) / d.size)


def l2_loss(pred, target) -> LossValue:
    x, y = _pair(pred, target)
    d = x - y
    return LossValue(float((d * d).mean()), 2.0 * d / d.size)


def ssim_loss(pred, target, cfg: SsimConfig = SsimConfig()) -> LossValue:
    x, y = _pair(pred, target)
    t = SsimTerms(x, y, cfg.sigma_g, cfg.c1, cfg.c2)
    n = x.size
    value = 1.0 - float((t.l * t.cs).mean())
    grad = t.backward(-t.cs / n, -t.l / n)
    return LossValue(value, grad)


def ms_ssim_loss(pred, target, cfg: MsSsimConfig = MsSsimConfig()) -> LossValue:
    x, y = _pair(pred, target)
    terms = MsSsimTerms(x, y, cfg)
    n = x.size
    value = 1.0 - float(terms.value_map.mean())
    return LossValue(value, terms.backward(np.full(x.shape, -1.0 / n)))


def smoothed_error(pred, target, sigma: float, kind: str) -> LossValue:
    """Mean of the pixelwise error map after Gaussian smoothing at ``sigma``."""
    x, y = _pair(pred, target)
    d = x - y
    if kind == "l2":
        err, derr = d * d, 2.0 * d
    elif kind == "l1":
        err, derr = np.abs(d), np.sign(d)
    else:
        raise ValueError(f"unknown error kind {kind!r}")
    win = _Window(x.shape, sigma)
    value = float(win(err).mean())
    grad = win.adjoint(np.full(x.shape, 1.0 / x.size)) * derr
    return LossValue(value, grad)


def _mixed(pred, target, cfg: MixedLossConfig, kind: str) -> LossValue:
    ms = ms_ssim_loss(pred, target, cfg.ms_cfg)
    sm = smoothed_error(pred, target, cfg.weight_sigma, kind)
    a = cfg.alpha
    return LossValue(a * ms.value + (1 - a) * sm.value, a * ms.grad + (1 - a) * sm.grad)


def ms_ssim_l2_loss(pred, target, cfg: MixedLossConfig = MixedLossConfig(alpha=0.1)) -> LossValue:
    return _mixed(pred, target, cfg, "l2")


def ms_ssim_l1_loss(pred, target, cfg: MixedLossConfig = MixedLossConfig(alpha=0.025)) -> LossValue:
    return _mixed(pred, target, cfg, "l1")


def get_loss(name: str, ssim_cfg: SsimConfig | None = None, ms_cfg: MsSsimConfig | None = None,
             alpha: float | None = None) -> Callable[[np.ndarray, np.ndarray], LossValue]:
    """Resolve a loss selector string to a ``(pred, target) -> LossValue`` callable."""
    ms_cfg = ms_cfg or MsSsimConfig()
    if name == "l1":
        return l1_loss
    if name == "l2":
        return l2_loss
    if name == "ssim":
        cfg = ssim_cfg or SsimConfig()
        return lambda x, y: ssim_loss(x, y, cfg)
    if name == "msssim":
        return lambda x, y: ms_ssim_loss(x, y, ms_cfg)
    if name == "msssim_l2":
        mixed = MixedLossConfig(0.1 if alpha is None else alpha, ms_cfg)
        return lambda x, y: ms_ssim_l2_loss(x, y, mixed)
    if name == "msssim_l1":
        mixed = MixedLossConfig(0.025 if alpha is None else alpha, ms_cfg)
        return lambda x, y: ms_ssim_l1_loss(x, y, mixed)
    raise ValueError(f"unknown loss {name!r}; expected one of {', '.join(LOSS_NAMES)}")


def finite_diff_check(loss: Callable | str, pred, target, epsilon: float = 1e-4, n_samples: int = 32,
                      seed: int = 0, grad: np.ndarray | None = None, skip_below: float = 0.0) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``grad`` overrides the analytic gradient (useful for harness self-tests).
    Coordinates with ``|pred - target| <= skip_below`` are not sampled, which
    keeps the l1 kink out of the comparison.
    """
    fn = get_loss(loss) if isinstance(loss, str) else loss
    x, y = _pair(pred, target)
    if grad is None:
        grad = fn(x, y).grad
    rng = np.random.default_rng(seed)
    candidates = np.flatnonzero(np.abs(x - y).ravel() > skip_below)
    if candidates.size == 0:
        raise ValueError("no eligible coordinates to check")
    picks = rng.choice(candidates, size=min(n_samples, candidates.size), replace=False)
    worst = 0.0
    flat = x.ravel()
    for p in picks:
        xp = flat.copy()
        xm = flat.copy()
        xp[p] += epsilon
        xm[p] -= epsilon
        numeric = (fn(xp.reshape(x.shape), y).value - fn(xm.reshape(x.shape), y).value) / (2 * epsilon)
        analytic = grad.ravel()[p]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
