"""Pure-numpy implementations of the hot kernels.

These are the reference fallback for :mod:`smac._kernels_cy`. Both modules
expose the same four functions with identical semantics.
"""

import numpy as np


def im2col(x, k, stride, dilation, pad, out_h, out_w):
    """Unfold ``x`` (N, C, H, W) into columns of shape (N, C*k*k, out_h*out_w)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, out_h, out_w), dtype=np.float64)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for ki in range(k):
        r0 = ki * dilation
        for kj in range(k):
            c0 = kj * dilation
            cols[:, :, ki, kj] = xp[:, :, r0:r0 + h_span:stride, c0:c0 + w_span:stride]
    return cols.reshape(n, c * k * k, out_h * out_w)


def col2im(cols, shape, k, stride, dilation, pad, out_h, out_w):
    """Adjoint of :func:`im2col`: scatter-add columns back into an (N, C, H, W) array."""
    n, c, h, w = shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    cols = cols.reshape(n, c, k, k, out_h, out_w)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for ki in range(k):
        r0 = ki * dilation
        for kj in range(k):
            c0 = kj * dilation
            xp[:, :, r0:r0 + h_span:stride, c0:c0 + w_span:stride] += cols[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])


def maxpool_forward(x, k, stride):
    """Floor-mode max pooling.

    Returns the pooled values and, for every output cell, the flat (row-major,
    within H*W) index of the selected input. Ties go to the lowest index.
    """
    n, c, h, w = x.shape
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    windows = np.empty((k * k, n, c, out_h, out_w), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            windows[ki * k + kj] = x[:, :, ki:ki + stride * (out_h - 1) + 1:stride,
                                     kj:kj + stride * (out_w - 1) + 1:stride]
    # np.argmax returns the first maximum; window order is raster order, so
    # the first hit is also the lowest flat input index.
    best = np.argmax(windows, axis=0)
    out = np.take_along_axis(windows, best[None], axis=0)[0]
    rows = np.arange(out_h)[:, None] * stride + best // k
    cols = np.arange(out_w)[None, :] * stride + best % k
    return out, (rows * w + cols).astype(np.int64)


def maxpool_backward(grad_out, argidx, shape):
    """Route ``grad_out`` to the argmax positions recorded by the forward pass."""
    n, c, h, w = shape
    flat = np.zeros((n * c, h * w), dtype=np.float64)
    g = grad_out.reshape(n * c, -1)
    idx = argidx.reshape(n * c, -1)
    offsets = (np.arange(n * c) * (h * w))[:, None]
    np.add.at(flat.reshape(-1), (idx + offsets).reshape(-1), g.reshape(-1))
    return flat.reshape(n, c, h, w)
