"""Differentiable operations on :class:`~smac.tensor.Tensor`.

Image-like tensors use (N, C, H, W) layout. Functions that take a single
feature map also accept (C, H, W) and return the same rank.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np

from smac import kernels
from smac.errors import DimensionError
from smac.tensor import Tensor, make_node

Scalar = Union[int, float]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, s: Union[Scalar, Tensor]) -> Tensor:
    """Multiply by a scalar, or by a tensor broadcastable onto ``x``.

    The tensor form covers per-item weights such as shape (N, 1, 1, 1).
    """
    x = as_tensor(x)
    if not isinstance(s, Tensor):
        s = float(s)
        return make_node(x.data * s, (x,), lambda g: (g * s,), "scale")
    try:
        out = x.data * s.data
    except ValueError as exc:
        raise DimensionError(f"scale: cannot broadcast {s.shape} onto {x.shape}") from exc
    if out.shape != x.shape:
        raise DimensionError(f"scale: factor {s.shape} would enlarge {x.shape}")
    xd, sd, sshape = x.data, s.data, s.shape
    return make_node(out, (x, s), lambda g: (g * sd, _reduce_to(g * xd, sshape)), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_node(y, (x,), lambda g: (g * y,), "exp")


def reciprocal(x: Tensor) -> Tensor:
    y = 1.0 / x.data
    return make_node(y, (x,), lambda g: (-g * y * y,), "reciprocal")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "sigmoid": sigmoid,
    "exp": exp,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: add, sub, mul, scale, relu, sigmoid (and exp)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ------------------------------------------------------------ shape handling

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return make_node(y, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(x.data.transpose(axes))
    return make_node(y, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        y = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in xs]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return make_node(y, xs, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def to_positions(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H*W, C): one row per spatial position."""
    n, c, h, w = x.shape
    return transpose(reshape(x, (n, c, h * w)), (0, 2, 1))


def from_positions(y: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`to_positions`."""
    n, hw, c = y.shape
    if hw != h * w:
        raise DimensionError(f"from_positions: {hw} rows cannot form {h}x{w}")
    return reshape(transpose(y, (0, 2, 1)), (n, c, h, w))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_node(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, np.asarray(g).item()),), "sum")


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


# -------------------------------------------------------------------- linear

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` is (m, k) or (..., m, k); ``b`` is (k, n) or has the same leading
    axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    shared_b = b.ndim == 2 and a.ndim > 2

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared_b:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_node(ad @ bd, (a, b), vjp, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Fully connected layer: x (N, in) with weight (out, in) and bias (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        y = y + bias.data
        parents.append(bias)

    def vjp(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_node(y, parents, vjp, "linear")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    if x.shape[-1] < 1:
        raise DimensionError(f"softmax_rows: empty rows in {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (x,), vjp, "softmax")


# ---------------------------------------------------------------- spatial ops

def _batched(x: Tensor):
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, dilation: int = 1) -> Tensor:
    """Cross-correlation with "same" padding, so H' = ceil(H / stride)."""
    x, squeeze = _batched(x)
    n, cin, h, w = x.shape
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d: weight must be (Cout, Cin, k, k), got {weight.shape}")
    cout, wcin, k, _ = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input {x.shape} has {cin} channels, weight {weight.shape} expects {wcin}")
    if k % 2 != 1:
        raise DimensionError(f"conv2d: kernel size must be odd, got {k}")
    if stride < 1 or dilation < 1:
        raise ValueError("conv2d: stride and dilation must be >= 1")
    pad = dilation * (k - 1) // 2
    out_h = (h + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    out_w = (w + 2 * pad - dilation * (k - 1) - 1) // stride + 1
    xd = x.data
    if k == 1 and stride == 1:
        cols = xd.reshape(n, cin, h * w)
    else:
        cols = kernels.im2col(xd, k, stride, dilation, pad, out_h, out_w)
    wmat = weight.data.reshape(cout, -1)
    y = np.matmul(wmat, cols)
    if bias is not None:
        y += bias.data[None, :, None]
    y = y.reshape(n, cout, out_h, out_w)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def vjp(g):
        g2 = g.reshape(n, cout, out_h * out_w)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gcols = np.matmul(wmat.T, g2)
        if k == 1 and stride == 1:
            gx = gcols.reshape(n, cin, h, w)
        else:
            gx = kernels.col2im(gcols, (n, cin, h, w), k, stride, dilation, pad, out_h, out_w)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=(0, 2)))
        return tuple(grads)

    return _unbatch(make_node(y, parents, vjp, "conv2d"), squeeze)


def max_pool2d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    """Floor-mode max pooling; gradient ties go to the lowest flat index."""
    stride = stride or kernel
    x, squeeze = _batched(x)
    shape = x.shape
    if kernel > shape[2] or kernel > shape[3]:
        raise DimensionError(f"max_pool2d: kernel {kernel} larger than input {shape}")
    y, idx = kernels.maxpool_forward(x.data, kernel, stride)
    node = make_node(y, (x,), lambda g: (kernels.maxpool_backward(g, idx, shape),), "max_pool")
    return _unbatch(node, squeeze)


def avg_pool2d(x: Tensor, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    stride = stride or kernel
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise DimensionError(f"avg_pool2d: kernel {kernel} larger than input {x.shape}")
    out_h = (h - kernel) // stride + 1
    out_w = (w - kernel) // stride + 1
    inv = 1.0 / (kernel * kernel)
    cols = kernels.im2col(x.data, kernel, stride, 1, 0, out_h, out_w)
    cols = cols.reshape(n, c, kernel * kernel, out_h * out_w)
    y = cols.mean(axis=2).reshape(n, c, out_h, out_w)

    def vjp(g):
        gc = np.repeat(g.reshape(n, c, 1, out_h * out_w) * inv, kernel * kernel, axis=2)
        return (kernels.col2im(gc.reshape(n, -1, out_h * out_w), (n, c, h, w),
                               kernel, stride, 1, 0, out_h, out_w),)

    return _unbatch(make_node(y, (x,), vjp, "avg_pool"), squeeze)


def global_avg_pool(x: Tensor) -> Tensor:
    """Collapse H x W to 1 x 1 by averaging."""
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    y = x.data.mean(axis=(2, 3), keepdims=True)
    node = make_node(y, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),), "global_avg_pool")
    return _unbatch(node, squeeze)


def pool(x: Tensor, kind: str, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    if kind == "max":
        return max_pool2d(x, kernel, stride)
    if kind == "avg":
        return avg_pool2d(x, kernel, stride)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ValueError(f"unknown pool kind {kind!r}")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation weights (n_out, n_in), align_corners=False convention."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"upsample_bilinear: bad output size {out_h}x{out_w}")
    x, squeeze = _batched(x)
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return _unbatch(x, squeeze)
    rh = bilinear_matrix(h, out_h)
    rw = bilinear_matrix(w, out_w)
    y = rh @ x.data @ rw.T
    node = make_node(y, (x,), lambda g: (rh.T @ g @ rw,), "upsample")
    return _unbatch(node, squeeze)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, train: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W) or (N,) for 2-D input.

    In train mode the running statistics are updated in place.
    """
    if x.shape[0] == 0:
        raise DimensionError("batchnorm: empty batch")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    if train:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        count = xd.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * count / (count - 1) if count > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    y = gd * xhat + beta.data.reshape(bshape)
    count = xd.size // c

    def vjp(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if train:
            gxhat = g * gd
            gx = (inv_std.reshape(bshape) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            gx = g * (gd * inv_std.reshape(bshape))
        return gx, ggamma, gbeta

    return make_node(y, (x, gamma, beta), vjp, "batchnorm")


# --------------------------------------------------------------------- losses

def bce(pred: Tensor, target: np.ndarray, clamp: float = 1e-7) -> Tensor:
    """Pixel-averaged binary cross-entropy of probabilities, log inputs clamped."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(f"bce: prediction {pred.shape} vs target {target.shape}")
    p = pred.data
    pc = np.clip(p, clamp, 1.0 - clamp)
    loss = -np.mean(target * np.log(pc) + (1.0 - target) * np.log(1.0 - pc))
    inside = (p > clamp) & (p < 1.0 - clamp)
    n = p.size

    def vjp(g):
        d = -(target / pc - (1.0 - target) / (1.0 - pc)) / n
        return (np.asarray(g).item() * d * inside,)

    return make_node(np.array(loss), (pred,), vjp, "bce")
