"""Batched NCHW layer kernels with explicit forward/backward pairs.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.  Reductions run in a fixed order
so repeated calls are bit-identical.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride=1, pad=0):
    """x: (N, C, H, W), w: (F, C, k, k), b: (F,) -> (N, F, Ho, Wo)."""
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, F)
    out += b
    return out.transpose(0, 3, 1, 2), (x.shape, windows, w, stride, pad)


def conv2d_backward(dout, cache):
    x_shape, windows, w, stride, pad = cache
    n, c, h, wd = x_shape
    k = w.shape[2]
    ho, wo = dout.shape[2], dout.shape[3]
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j]
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0.0).astype(x.dtype, copy=False), mask


def relu_backward(dout, mask):
    return np.where(mask, dout, 0.0).astype(dout.dtype, copy=False)


def maxpool2_forward(x):
    """Non-overlapping 2x2 max pool; a trailing odd row/column is dropped.

    Ties route the gradient to the first maximal element in row-major order.
    """
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2_backward(dout, cache):
    x_shape, arg = cache
    n, c, h, w = x_shape
    ho, wo = dout.shape[2], dout.shape[3]
    onehot = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(onehot, arg[..., None], dout[..., None], axis=-1)
    blocks = onehot.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, : 2 * ho, : 2 * wo] = blocks.reshape(n, c, 2 * ho, 2 * wo)
    return dx


def avgpool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def avgpool_backward(dout, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to((dout / (h * w))[:, :, None, None], x_shape).copy()


def linear_forward(x, w, b):
    """x: (N, in), w: (out, in), b: (out,)."""
    return x @ w.T + b, x


def linear_backward(dout, x, w):
    return dout @ w, dout.T @ x, dout.sum(axis=0)
