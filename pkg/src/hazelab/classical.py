"""Prior-based and contrast-based dehazing: dark channel prior, CLAHE, cascades."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .haze import airlight, invert_haze
from .image import as_image, guided_filter, min_filter, to_luminance

T_FLOOR = 0.01


@dataclass(frozen=True)
class DcpConfig:
    patch_radius: int = 7
    omega: float = 0.95
    top_fraction: float = 0.001
    t_min: float = 0.1
    guided_radius: int = 30
    guided_eps: float = 1e-3

    def __post_init__(self):
        if self.patch_radius < 0 or self.guided_radius < 0:
            raise ValueError("radii must be non-negative")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError("top_fraction must lie in (0, 1]")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError("t_min must lie in (0, 1)")
        if not self.guided_eps > 0:
            raise ValueError("guided_eps must be positive")


@dataclass(frozen=True)
class ClaheConfig:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("need at least one tile per axis")
        if self.clip_limit < 1:
            raise ValueError("clip_limit must be >= 1")
        if self.bins < 2:
            raise ValueError("need at least two bins")


def dark_channel(img, patch_radius: int = 7) -> np.ndarray:
    img = as_image(img)
    return min_filter(img.min(axis=2, keepdims=True), patch_radius)


def estimate_atmospheric_light(img, dark, top_fraction: float = 0.001) -> np.ndarray:
    img = as_image(img)
    dark = np.asarray(dark, dtype=np.float64).reshape(-1)
    n = dark.size
    if n == 0:
        raise ValueError("empty image")
    k = min(n, max(1, math.ceil(top_fraction * n)))
    # stable sort on the negated values keeps row-major order among ties
    candidates = np.argsort(-dark, kind="stable")[:k]
    lum = to_luminance(img).reshape(-1)
    cand_lum = lum[candidates]
    best = candidates[cand_lum == cand_lum.max()].min()
    return img.reshape(-1, img.shape[2])[best].copy()


def estimate_transmission(img, A, omega: float = 0.95, patch_radius: int = 7) -> np.ndarray:
    img = as_image(img)
    a = np.maximum(airlight(A, img.shape[2]), 1e-6)
    t = 1.0 - omega * dark_channel(img / a, patch_radius)
    return np.clip(t, T_FLOOR, 1.0)


def refine_transmission(t_raw, guide, cfg: DcpConfig = DcpConfig()) -> np.ndarray:
    t_raw = as_image(t_raw)
    h, w = t_raw.shape[:2]
    radius = min(cfg.guided_radius, min(h, w) - 1)
    if radius <= 0:
        return np.clip(t_raw, T_FLOOR, 1.0)
    t = guided_filter(to_luminance(guide), t_raw, radius, cfg.guided_eps)
    return np.clip(t, T_FLOOR, 1.0)


def dcp_dehaze(img, cfg: DcpConfig = DcpConfig()) -> np.ndarray:
    img = as_image(img)
    dark = dark_channel(img, cfg.patch_radius)
    A = estimate_atmospheric_light(img, dark, cfg.top_fraction)
    t = estimate_transmission(img, A, cfg.omega, cfg.patch_radius)
    t = refine_transmission(t, img, cfg)
    return invert_haze(img, t, A, cfg.t_min)


# ---------------------------------------------------------------------------
# CLAHE


def _tile_mapping(values: np.ndarray, cfg: ClaheConfig) -> np.ndarray | None:
    """Lookup table (one entry per bin), or None for a flat tile (identity)."""
    hist = np.bincount(values, minlength=cfg.bins).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        return None
    limit = cfg.clip_limit * values.size / cfg.bins
    excess = np.maximum(hist - limit, 0.0).sum()
    hist = np.minimum(hist, limit) + excess / cfg.bins
    return np.cumsum(hist) / hist.sum()


def _bin_index(y: np.ndarray, bins: int) -> np.ndarray:
    return np.clip(np.floor(y * bins), 0, bins - 1).astype(np.int64)


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.round(np.linspace(0, n, tiles + 1)).astype(np.int64)


def _interp_weights(n: int, edges: np.ndarray):
    """Lower tile index and blend weight toward the next tile, per coordinate."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    tiles = len(centers)
    if tiles == 1:
        return np.zeros(n, dtype=np.int64), np.zeros(n)
    lo = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, tiles - 2)
    frac = np.clip((pos - centers[lo]) / (centers[lo + 1] - centers[lo]), 0.0, 1.0)
    return lo, frac


def equalize_luminance(y: np.ndarray, cfg: ClaheConfig) -> np.ndarray:
    h, w = y.shape
    if cfg.tiles_x > w or cfg.tiles_y > h:
        raise ValueError(f"{cfg.tiles_x}x{cfg.tiles_y} tiles do not fit a {w}x{h} image")
    binned = _bin_index(y, cfg.bins)
    ey, ex = _tile_edges(h, cfg.tiles_y), _tile_edges(w, cfg.tiles_x)
    maps = np.zeros((cfg.tiles_y, cfg.tiles_x, cfg.bins))
    flat = np.zeros((cfg.tiles_y, cfg.tiles_x), dtype=bool)
    for i in range(cfg.tiles_y):
        for j in range(cfg.tiles_x):
            m = _tile_mapping(binned[ey[i]:ey[i + 1], ex[j]:ex[j + 1]].ravel(), cfg)
            if m is None:
                flat[i, j] = True
            else:
                maps[i, j] = m
    ry, fy = _interp_weights(h, ey)
    rx, fx = _interp_weights(w, ex)
    ry1 = np.minimum(ry + 1, cfg.tiles_y - 1)
    rx1 = np.minimum(rx + 1, cfg.tiles_x - 1)
    fy, fx = fy[:, None], fx[None, :]

    def look(ti, tj):
        ti, tj = ti[:, None], tj[None, :]
        return np.where(flat[ti, tj], y, maps[ti, tj, binned])

    top = (1 - fx) * look(ry, rx) + fx * look(ry, rx1)
    bottom = (1 - fx) * look(ry1, rx) + fx * look(ry1, rx1)
    return (1 - fy) * top + fy * bottom


def clahe(img, cfg: ClaheConfig = ClaheConfig()) -> np.ndarray:
    """Contrast-limited adaptive equalization of luminance with chroma kept by ratio."""
    img = as_image(img)
    y = to_luminance(img)[:, :, 0]
    new_y = equalize_luminance(y, cfg)
    if img.shape[2] == 1:
        return np.clip(new_y[:, :, None], 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(y > 0, new_y / y, 0.0)
    out = np.where((y > 0)[:, :, None], img * ratio[:, :, None], new_y[:, :, None])
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# cascades

Stage = Callable[[np.ndarray], np.ndarray]


def cascade(img, stages: Sequence[Stage | str]) -> np.ndarray:
    """Apply stages left to right; strings name ``dcp`` or ``clahe`` with defaults."""
    out = as_image(img)
    for stage in stages:
        if isinstance(stage, str):
            stage = {"dcp": dcp_dehaze, "clahe": clahe}[stage]
        out = stage(out)
    return out
