"""Image carrier, file I/O and the filter primitives everything else builds on.

Images are float64 numpy arrays of shape ``(height, width, channels)`` with
``channels`` equal to 1 or 3 and samples in [0, 1]. All filters use the
reflect-101 boundary (``dcb|abcd|cba``).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageError(Exception):
    """Base class for image I/O failures."""


class UnreadableImageError(ImageError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptHeaderError(ImageError):
    pass


def as_image(data) -> np.ndarray:
    """Coerce ``data`` to a validated ``(H, W, C)`` float64 image."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxWx1 or HxWx3, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image has zero width or height")
    return arr


def check_same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")


# ---------------------------------------------------------------------------
# file I/O


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] samples to bytes with round-half-up."""
    return np.clip(np.floor(np.asarray(img) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def _parse_netpbm(buf: bytes, path) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise CorruptHeaderError(f"{path}: bad netpbm magic {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise CorruptHeaderError(f"{path}: malformed header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise CorruptHeaderError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} (only 255 supported)")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    raster = buf[pos:pos + size]
    if len(raster) != size:
        raise CorruptHeaderError(f"{path}: raster truncated ({len(raster)} of {size} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    """Read a PNG, binary PPM (P6) or PGM (P5) file into a [0, 1] image."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in (".png", ".ppm", ".pgm"):
        raise UnsupportedFormatError(f"{path}: unsupported extension {ext!r}")
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise UnreadableImageError(f"{path}: {exc}") from exc
    if ext != ".png":
        return _parse_netpbm(buf, path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.format != "PNG":
                raise UnsupportedFormatError(f"{path}: not a PNG file")
            if im.mode in ("1", "LA"):
                im = im.convert("L")
            elif im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageError:
        raise
    except Exception as exc:  # PIL raises a zoo of types for broken files
        raise CorruptHeaderError(f"{path}: cannot decode PNG ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as 8-bit PNG, PPM or PGM (chosen by extension).

    The file is written to a temporary sibling and renamed into place.
    """
    img = as_image(img)
    path = Path(path)
    ext = path.suffix.lower()
    q = quantize(img)
    tmp = path.with_name(f".{path.name}.tmp")
    if ext == ".png":
        pil = PILImage.fromarray(q[:, :, 0], mode="L") if q.shape[2] == 1 else PILImage.fromarray(q, mode="RGB")
        try:
            pil.save(tmp, format="PNG")
        except OSError as exc:
            raise UnreadableImageError(f"{path}: cannot write ({exc})") from exc
    elif ext in (".ppm", ".pgm"):
        if ext == ".pgm" and q.shape[2] == 3:
            q = quantize(to_luminance(img))
        if ext == ".ppm" and q.shape[2] == 1:
            q = np.repeat(q, 3, axis=2)
        magic = b"P6" if ext == ".ppm" else b"P5"
        header = magic + b"\n%d %d\n255\n" % (q.shape[1], q.shape[0])
        try:
            tmp.write_bytes(header + q.tobytes())
        except OSError as exc:
            raise UnreadableImageError(f"{path}: cannot write ({exc})") from exc
    else:
        raise UnsupportedFormatError(f"{path}: unsupported extension {ext!r}")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# kernels and filters


@dataclass(frozen=True)
class Kernel:
    """Smoothing kernel; 1-D ``weights`` mean a separable kernel."""

    radius: int
    weights: np.ndarray

    @property
    def separable(self) -> bool:
        return self.weights.ndim == 1


def gaussian_kernel(sigma: float) -> Kernel:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return Kernel(radius, w / w.sum())


def reflect_index(n: int, radius: int) -> np.ndarray:
    """Source indices of a reflect-101 padded axis of length ``n + 2*radius``.

    Works for any radius, including ones larger than the axis.
    """
    idx = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx > n - 1, period - idx, idx)


def _pad(img: np.ndarray, ry: int, rx: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[reflect_index(h, ry)][:, reflect_index(w, rx)]


@lru_cache(maxsize=128)
def _filter_matrix_cached(n: int, weights: tuple) -> np.ndarray:
    w = np.asarray(weights)
    radius = (len(w) - 1) // 2
    src = reflect_index(n, radius)
    m = np.zeros((n, n))
    rows = np.arange(n)
    for k, wk in enumerate(w):
        np.add.at(m, (rows, src[rows + k]), wk)
    m.setflags(write=False)
    return m


def filter_matrix(n: int, weights: np.ndarray) -> np.ndarray:
    """Dense ``n x n`` operator of a 1-D correlation with reflect-101 boundary.

    ``(M @ x)[i] == sum_k weights[k] * x[reflect(i + k - r)]``. Its transpose
    is the exact adjoint, which the SSIM-family gradients rely on.
    """
    return _filter_matrix_cached(int(n), tuple(float(v) for v in np.asarray(weights)))


def separable_filter(img: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Apply the same 1-D kernel along rows and columns of an ``(H, W, ...)`` array."""
    mh = filter_matrix(img.shape[0], weights)
    mw = filter_matrix(img.shape[1], weights)
    out = np.tensordot(mh, img, axes=(1, 0))
    out = np.tensordot(mw, out, axes=(1, 1))
    return np.swapaxes(out, 0, 1)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return separable_filter(img, gaussian_kernel(sigma).weights)


def convolve(img: np.ndarray, k: Kernel) -> np.ndarray:
    """Per-channel 2-D filtering with reflect-101 boundary.

    Kernels here are symmetric, so correlation and convolution coincide; for a
    2-D kernel the weights are applied flipped, as true convolution.
    """
    img = as_image(img)
    if k.separable:
        return separable_filter(img, k.weights)
    r = k.radius
    padded = _pad(img, r, r)
    win = np.lib.stride_tricks.sliding_window_view(padded, (2 * r + 1, 2 * r + 1), axis=(0, 1))
    return np.einsum("hwcij,ij->hwc", win, k.weights[::-1, ::-1])


def box_filter(img: np.ndarray, radius: int) -> np.ndarray:
    """Window mean over ``(2r+1)^2`` pixels using running sums."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius >= min(h, w):
        raise ValueError(f"box radius {radius} too large for {w}x{h} image")
    if radius == 0:
        return img.copy()
    d = 2 * radius + 1
    padded = _pad(img, radius, radius)
    c = np.cumsum(padded, axis=0)
    c = np.concatenate([np.zeros((1,) + c.shape[1:]), c], axis=0)
    rows = c[d:] - c[:-d]
    c = np.cumsum(rows, axis=1)
    c = np.concatenate([np.zeros((c.shape[0], 1) + c.shape[2:]), c], axis=1)
    return (c[:, d:] - c[:, :-d]) / (d * d)


def min_filter(img: np.ndarray, radius: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0:
        return img.copy()
    d = 2 * radius + 1
    h, w = img.shape[:2]
    out = img[reflect_index(h, radius)]
    out = np.lib.stride_tricks.sliding_window_view(out, d, axis=0).min(axis=-1)
    out = out[:, reflect_index(w, radius)]
    return np.lib.stride_tricks.sliding_window_view(out, d, axis=1).min(axis=-1)


def to_luminance(img: np.ndarray) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return img.copy()
    return (img @ LUMA_WEIGHTS)[:, :, None]


def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Edge-preserving smoothing of single-channel ``src`` steered by ``guide``.

    Colour guides are reduced to luminance first.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    g = to_luminance(guide)[:, :, 0]
    p = as_image(src)
    if p.shape[2] != 1:
        raise ValueError("guided_filter input must be single-channel")
    p = p[:, :, 0]
    check_same_shape(g, p)
    mean_g = box_filter(g, radius)
    mean_p = box_filter(p, radius)
    cov = box_filter(g * p, radius) - mean_g * mean_p
    var = box_filter(g * g, radius) - mean_g * mean_g
    a = cov / (var + eps)
    b = mean_p - a * mean_g
    return (box_filter(a, radius) * g + box_filter(b, radius))[:, :, None]
