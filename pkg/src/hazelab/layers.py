"""Numpy layer primitives with hand-written backward passes.

Activations are ``(batch, channels, height, width)`` arrays.
"""

from __future__ import annotations

import numpy as np

from .image import reflect_index


def _pad_indices(h: int, w: int, p: int):
    return reflect_index(h, p), reflect_index(w, p)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Same-size 2-D correlation with reflect-101 padding.

    Returns the output and a cache for :func:`conv2d_backward`.
    """
    k = weight.shape[-1]
    p = (k - 1) // 2
    _, _, h, w = x.shape
    ih, iw = _pad_indices(h, w, p)
    xp = x[:, :, ih][:, :, :, iw]
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.einsum("bchwij,ocij->bohw", cols, weight, optimize=True)
    out += bias[None, :, None, None]
    return out, (x.shape, cols, weight, ih, iw)


def conv2d_backward(dout: np.ndarray, cache):
    """Gradients ``(dx, dweight, dbias)`` of a :func:`conv2d_forward` call."""
    shape, cols, weight, ih, iw = cache
    b, c, h, w = shape
    k = weight.shape[-1]
    dweight = np.einsum("bchwij,bohw->ocij", cols, dout, optimize=True)
    dbias = dout.sum(axis=(0, 2, 3))
    # full correlation of the zero-padded upstream with the flipped kernel
    dpad = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    win = np.lib.stride_tricks.sliding_window_view(dpad, (k, k), axis=(2, 3))
    dxp = np.einsum("bohwij,ocij->bchw", win, weight[:, :, ::-1, ::-1], optimize=True)
    # fold the padded gradient back onto the source pixels
    rows = np.zeros((b, c, h, w + k - 1))
    np.add.at(rows, (slice(None), slice(None), ih), dxp)
    dx = np.zeros(shape)
    np.add.at(dx, (slice(None), slice(None), slice(None), iw), rows)
    return dx, dweight, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * (out > 0)


def mean_pool2(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x[:, :, : h // 2 * 2, : w // 2 * 2].reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def mean_pool2_backward(dout: np.ndarray, in_shape) -> np.ndarray:
    b, c, h, w = in_shape
    dx = np.zeros(in_shape)
    up = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) / 4.0
    dx[:, :, : up.shape[2], : up.shape[3]] = up
    return dx
