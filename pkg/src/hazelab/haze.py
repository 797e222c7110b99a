"""Atmospheric scattering model: haze synthesis, inversion and synthetic scenes.

A hazy observation blends scene radiance with airlight,
``I = J * t + A * (1 - t)`` with ``t = exp(-beta * d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import as_image, check_same_shape, gaussian_blur, quantize

D_MAX = 3.0
DEPTH_KINDS = ("ramp", "radial", "blob-noise")


@dataclass(frozen=True)
class HazeParams:
    A: tuple[float, float, float]
    beta: float
    t_min: float = 0.1

    def __post_init__(self):
        if not all(0.0 <= a <= 1.0 for a in self.A):
            raise ValueError(f"atmospheric light out of [0, 1]: {self.A}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")


def airlight(A, channels: int) -> np.ndarray:
    """Broadcast a scalar or per-channel atmospheric light to ``channels`` values."""
    a = np.atleast_1d(np.asarray(A, dtype=np.float64))
    if a.size == 1:
        return np.full(channels, a[0])
    if a.size != channels:
        raise ValueError(f"atmospheric light has {a.size} values for {channels} channels")
    return a


def _as_map(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return m[:, :, 0] if m.ndim == 3 else m


def transmission_from_depth(depth: np.ndarray, beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return np.exp(-beta * _as_map(depth))


def synthesize_haze(clean: np.ndarray, t: np.ndarray, A) -> np.ndarray:
    clean = as_image(clean)
    t = _as_map(t)
    check_same_shape(clean[:, :, 0], t)
    a = airlight(A, clean.shape[2])
    t3 = t[:, :, None]
    return clean * t3 + a * (1.0 - t3)


def invert_haze(hazy: np.ndarray, t: np.ndarray, A, t_min: float = 0.1) -> np.ndarray:
    if not 0.0 < t_min < 1.0:
        raise ValueError(f"t_min must lie in (0, 1), got {t_min}")
    hazy = as_image(hazy)
    t = _as_map(t)
    check_same_shape(hazy[:, :, 0], t)
    a = airlight(A, hazy.shape[2])
    t3 = t[:, :, None]
    out = (hazy - a * (1.0 - t3)) / np.maximum(t3, t_min)
    return np.clip(out, 0.0, 1.0)


def gen_depth(kind: str, width: int, height: int, seed: int = 0) -> np.ndarray:
    """Synthetic ``(height, width)`` depth map scaled to ``[0, D_MAX]``."""
    if width <= 0 or height <= 0:
        raise ValueError("depth map dimensions must be positive")
    if kind == "ramp":
        x = np.arange(width, dtype=np.float64) / max(width - 1, 1)
        return np.tile(x * D_MAX, (height, 1))
    if kind == "radial":
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        r = np.hypot(xx - (width - 1) / 2.0, yy - (height - 1) / 2.0)
        rmax = r.max()
        return D_MAX * r / rmax if rmax > 0 else np.zeros_like(r)
    if kind in ("blob-noise", "blob"):
        rng = np.random.default_rng(seed)
        noise = rng.random((height, width))
        d = gaussian_blur(noise, max(width, height) / 8.0)
        lo, hi = d.min(), d.max()
        return D_MAX * (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
    raise ValueError(f"unknown depth kind {kind!r}; expected one of {DEPTH_KINDS}")


def random_haze_params(seed: int, a_range=(0.7, 1.0), beta_range=(0.5, 2.0), t_min: float = 0.1) -> HazeParams:
    rng = np.random.default_rng(seed)
    a = float(rng.uniform(*a_range))
    beta = float(rng.uniform(*beta_range))
    return HazeParams(A=(a, a, a), beta=beta, t_min=t_min)


def map_to_pgm_bytes(m: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Debug-dump quantization: ``t * 255`` for transmission, ``d / D_MAX * 255`` for depth."""
    return quantize(_as_map(m) / scale)


# ---------------------------------------------------------------------------
# synthetic scenes and datasets


def _random_color(rng: np.random.Generator) -> np.ndarray:
    # saturated colours keep the dark channel of clean scenes low
    c = rng.uniform(0.25, 1.0, 3)
    c[rng.integers(3)] = rng.uniform(0.0, 0.12)
    return c


def gen_scene(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Colourful haze-free test scene: gradient backdrop, shapes and texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u = xx / max(width - 1, 1)
    v = yy / max(height - 1, 1)
    c0, c1 = _random_color(rng), _random_color(rng)
    w = (u + v)[:, :, None] / 2.0
    img = (1 - w) * c0 + w * c1
    for _ in range(int(rng.integers(3, 7))):
        color = _random_color(rng)
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        size = rng.uniform(0.1, 0.35) * min(width, height)
        if rng.random() < 0.5:
            mask = np.hypot(xx - cx, yy - cy) < size
        else:
            mask = (np.abs(xx - cx) < size) & (np.abs(yy - cy) < size * rng.uniform(0.5, 1.5))
        img[mask] = color
    texture = gaussian_blur(rng.normal(0.0, 0.04, (height, width, 1)), 1.0)
    return np.clip(img + texture, 0.0, 1.0)


@dataclass
class Pair:
    hazy: np.ndarray
    clean: np.ndarray
    name: str = ""
    subset: str | None = None
    params: HazeParams | None = None
    meta: dict = field(default_factory=dict)


def make_pairs(
    n: int,
    size: int = 64,
    seed: int = 0,
    depth_kind: str | None = None,
    A: float | None = None,
    beta: float | None = None,
) -> list[Pair]:
    """Seeded hazy/clean pairs; unset haze parameters are drawn per image."""
    pairs = []
    rng = np.random.default_rng(seed)
    for i in range(n):
        s = int(rng.integers(2**31))
        clean = gen_scene(size, size, s)
        kind = depth_kind or DEPTH_KINDS[int(rng.integers(len(DEPTH_KINDS)))]
        p = random_haze_params(s + 1)
        if A is not None or beta is not None:
            a = p.A[0] if A is None else A
            p = HazeParams(A=(a, a, a), beta=p.beta if beta is None else beta, t_min=p.t_min)
        t = transmission_from_depth(gen_depth(kind, size, size, s + 2), p.beta)
        hazy = synthesize_haze(clean, t, p.A)
        pairs.append(Pair(hazy, clean, f"img{i:04d}", params=p, meta={"depth": kind, "seed": s + 2, "t": t}))
    return pairs
