"""Full-reference quality metrics: PSNR, SSIM and multi-scale SSIM.

SSIM statistics come from Gaussian windows applied at full resolution with
reflect-101 boundaries. Colour images are scored per channel and averaged.
MS-SSIM here fuses several Gaussian widths at one resolution instead of
downsampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import as_image, check_same_shape, filter_matrix, gaussian_kernel, separable_filter


@dataclass(frozen=True)
class SsimConfig:
    sigma_g: float = 5.0
    c1: float = 0.01
    c2: float = 0.03

    def __post_init__(self):
        if not (self.sigma_g > 0 and self.c1 > 0 and self.c2 > 0):
            raise ValueError("sigma_g, c1 and c2 must be positive")


@dataclass(frozen=True)
class MsSsimConfig:
    sigmas: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    alpha: float = 1.0
    betas: tuple[float, ...] | None = None
    c1: float = 0.01
    c2: float = 0.03

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if not s or any(v <= 0 for v in s) or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError(f"sigmas must be positive and strictly increasing: {self.sigmas}")
        object.__setattr__(self, "sigmas", s)
        if self.betas is None:
            object.__setattr__(self, "betas", (1.0,) * len(s))
        elif len(self.betas) != len(s):
            raise ValueError("need one beta exponent per sigma")

    def single(self, j: int) -> SsimConfig:
        return SsimConfig(self.sigmas[j], self.c1, self.c2)


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    check_same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


class _Window:
    """Gaussian window operator and its adjoint for one image size."""

    def __init__(self, shape, sigma: float):
        w = gaussian_kernel(sigma).weights
        self.weights = w
        self.mh = filter_matrix(shape[0], w)
        self.mw = filter_matrix(shape[1], w)

    def __call__(self, z):
        return separable_filter(z, self.weights)

    def adjoint(self, z):
        out = np.tensordot(self.mh.T, z, axes=(1, 0))
        out = np.tensordot(self.mw.T, out, axes=(1, 1))
        return np.swapaxes(out, 0, 1)


class SsimTerms:
    """Per-pixel luminance and contrast-structure factors at one window width."""

    def __init__(self, x, y, sigma, c1, c2):
        self.x, self.y = x, y
        self.win = win = _Window(x.shape, sigma)
        self.mx, self.my = win(x), win(y)
        sxx = win(x * x) - self.mx ** 2
        syy = win(y * y) - self.my ** 2
        self.sxy = win(x * y) - self.mx * self.my
        self.b1 = self.mx ** 2 + self.my ** 2 + c1
        self.b2 = sxx + syy + c2
        self.l = (2 * self.mx * self.my + c1) / self.b1
        self.cs = (2 * self.sxy + c2) / self.b2

    def backward(self, d_l, d_cs):
        """Gradient w.r.t. ``x`` given upstream derivatives for ``l`` and ``cs`` maps."""
        mx, my = self.mx, self.my
        g_mu = np.zeros_like(mx)
        if d_l is not None:
            g_mu += d_l * 2.0 * (my - self.l * mx) / self.b1
        if d_cs is None:
            return self.win.adjoint(g_mu)
        g_mu += d_cs * 2.0 * (mx * self.cs - my) / self.b2
        g_xx = -d_cs * self.cs / self.b2
        g_xy = d_cs * 2.0 / self.b2
        win = self.win
        return win.adjoint(g_mu) + 2.0 * self.x * win.adjoint(g_xx) + self.y * win.adjoint(g_xy)


def _pair(x, y):
    x, y = as_image(x), as_image(y)
    check_same_shape(x, y)
    return x, y


def ssim_map(x, y, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """SSIM map averaged across channels, shape ``(H, W, 1)``."""
    x, y = _pair(x, y)
    t = SsimTerms(x, y, cfg.sigma_g, cfg.c1, cfg.c2)
    return (t.l * t.cs).mean(axis=2, keepdims=True)


def ssim(x, y, cfg: SsimConfig = SsimConfig()) -> float:
    return float(ssim_map(x, y, cfg).mean())


class MsSsimTerms:
    """All scales of the fused MS-SSIM value with clamped factors."""

    def __init__(self, x, y, cfg: MsSsimConfig):
        self.cfg = cfg
        self.scales = [SsimTerms(x, y, s, cfg.c1, cfg.c2) for s in cfg.sigmas]
        self.factors = [np.maximum(self.scales[-1].l, 0.0)] + [np.maximum(t.cs, 0.0) for t in self.scales]
        self.exponents = [cfg.alpha] + list(cfg.betas)
        self.powered = [f ** e for f, e in zip(self.factors, self.exponents)]
        self.value_map = np.prod(self.powered, axis=0)

    def backward(self, upstream):
        """Gradient w.r.t. ``x`` of ``sum(upstream * value_map)``."""
        derivs = []
        n = len(self.factors)
        for i in range(n):
            others = np.ones_like(self.value_map)
            for k in range(n):
                if k != i:
                    others = others * self.powered[k]
            f, e = self.factors[i], self.exponents[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                dpow = np.where(f > 0, e * f ** (e - 1.0), 0.0)
            derivs.append(upstream * others * dpow)
        grad = self.scales[-1].backward(derivs[0], None)
        for t, d in zip(self.scales, derivs[1:]):
            grad = grad + t.backward(None, d)
        return grad


def ms_ssim(x, y, cfg: MsSsimConfig = MsSsimConfig()) -> float:
    x, y = _pair(x, y)
    return float(MsSsimTerms(x, y, cfg).value_map.mean())
