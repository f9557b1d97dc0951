"""Non-local, mutual and contrast attention, plus the selective-attention head.

Feature maps are (N, C, H, W) (a single (C, H, W) map is also accepted).
Internally each map is flattened to (N, HW, C) so that row ``i`` is the
feature vector at spatial position ``i``; the embeddings are then plain
matrix products with (C, C') weights, i.e. 1x1 convolutions without bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from smac import ops
from smac.errors import DimensionError
from smac.tensor import Parameter, Tensor

Alpha = Union[float, Tensor]


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str = "") -> Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name=name)


def zeros_param(shape, name: str = "") -> Parameter:
    return Parameter(np.zeros(shape), name=name)


# ------------------------------------------------------------------ parameters

@dataclass
class NlParams:
    w_theta: Parameter
    w_phi: Parameter
    w_g: Parameter
    w_z: Parameter

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, inner: Optional[int] = None,
               zero_residual: bool = True) -> "NlParams":
        inner = inner or max(channels // 2, 1)
        w_z = (zeros_param((inner, channels)) if zero_residual
               else uniform_init(rng, (inner, channels), inner))
        return cls(
            w_theta=uniform_init(rng, (channels, inner), channels),
            w_phi=uniform_init(rng, (channels, inner), channels),
            w_g=uniform_init(rng, (channels, inner), channels),
            w_z=w_z,
        )

    @property
    def channels(self) -> int:
        return self.w_theta.shape[0]


@dataclass
class MacParams:
    """Both modalities' NL embeddings plus the contrast projections.

    The temperature is stored as ``t_raw`` and used as ``exp(t_raw)`` so it
    stays positive under unconstrained updates.
    """

    rgb: NlParams
    depth: NlParams
    w_c_r: Parameter
    w_c_d: Parameter
    t_raw: Parameter = field(default_factory=lambda: zeros_param((1,)))

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, inner: Optional[int] = None,
               zero_residual: bool = True) -> "MacParams":
        inner = inner or max(channels // 2, 1)
        rgb = NlParams.create(channels, rng, inner, zero_residual)
        depth = NlParams.create(channels, rng, inner, zero_residual)
        if zero_residual:
            w_c_r, w_c_d = zeros_param((inner, channels)), zeros_param((inner, channels))
        else:
            w_c_r = uniform_init(rng, (inner, channels), inner)
            w_c_d = uniform_init(rng, (inner, channels), inner)
        return cls(rgb, depth, w_c_r, w_c_d, zeros_param((1,)))

    def temperature(self) -> Tensor:
        return ops.exp(self.t_raw)


@dataclass
class ConvParams:
    weight: Parameter
    bias: Optional[Parameter]
    stride: int = 1
    dilation: int = 1

    @classmethod
    def create(cls, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1,
               dilation: int = 1, bias: bool = True) -> "ConvParams":
        fan_in = cin * k * k
        b = uniform_init(rng, (cout,), fan_in) if bias else None
        return cls(uniform_init(rng, (cout, cin, k, k), fan_in), b, stride, dilation)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.dilation)


@dataclass
class BNParams:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def create(cls, channels: int) -> "BNParams":
        return cls(Parameter(np.ones(channels)), Parameter(np.zeros(channels)),
                   np.zeros(channels), np.ones(channels))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, train)


@dataclass
class FCParams:
    weight: Parameter  # (out, in)
    bias: Parameter

    @classmethod
    def create(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "FCParams":
        return cls(uniform_init(rng, (n_out, n_in), n_in), uniform_init(rng, (n_out,), n_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


@dataclass
class SelectiveHeadParams:
    """Weights of the image-level selective attention head.

    BN+ReLU follow ``est_conv1``, ``down_conv1`` and ``down_conv2``;
    ``est_conv2`` is linear. None of the convs has a bias: each one is
    followed, directly or after the subtraction, by a batch norm that cancels
    any per-channel constant.
    """

    est_conv1: ConvParams
    est_bn1: BNParams
    est_conv2: ConvParams
    down_conv1: ConvParams
    down_bn1: BNParams
    down_conv2: ConvParams
    down_bn2: BNParams
    fc1: FCParams
    fc2: FCParams

    @classmethod
    def create(cls, channels: int, height: int, width: int, rng: np.random.Generator,
               down_channels=(256, 128), fc_hidden: int = 256) -> "SelectiveHeadParams":
        _check_head_size(height, width)
        d1, d2 = down_channels
        flat = d2 * _half(_half(height)) * _half(_half(width))
        return cls(
            est_conv1=ConvParams.create(channels, channels, 1, rng, bias=False),
            est_bn1=BNParams.create(channels),
            est_conv2=ConvParams.create(channels, channels, 1, rng, bias=False),
            down_conv1=ConvParams.create(channels, d1, 1, rng, stride=2, bias=False),
            down_bn1=BNParams.create(d1),
            down_conv2=ConvParams.create(d1, d2, 1, rng, stride=2, bias=False),
            down_bn2=BNParams.create(d2),
            fc1=FCParams.create(flat, fc_hidden, rng),
            fc2=FCParams.create(fc_hidden, 1, rng),
        )


@dataclass
class AttentionMaps:
    """Row-stochastic (N, HW, HW') attention matrices kept for inspection."""

    A_r: Optional[Tensor] = None
    A_d: Optional[Tensor] = None
    C_r: Optional[Tensor] = None
    C_d: Optional[Tensor] = None


# --------------------------------------------------------------------- helpers

def _half(n: int) -> int:
    return (n + 1) // 2


def _check_head_size(h: int, w: int) -> None:
    if h < 4 or w < 4:
        raise DimensionError(f"selective head needs at least 4x4 features, got {h}x{w}")


def _as_batch(x: Tensor):
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {x.shape}")


def _restore(x: Tensor, squeeze: bool) -> Tensor:
    return ops.reshape(x, x.shape[1:]) if squeeze else x


def _check_pair(x_r: Tensor, x_d: Tensor) -> None:
    if x_r.shape != x_d.shape:
        raise DimensionError(f"modalities differ in shape: rgb {x_r.shape} vs depth {x_d.shape}")


def _alpha_factor(alpha: Alpha) -> Union[float, Tensor]:
    """Per-item alpha (N,) becomes (N, 1, 1) to scale (N, HW, C) tensors."""
    if isinstance(alpha, Tensor):
        return ops.reshape(alpha, (alpha.shape[0], 1, 1))
    return float(alpha)


def embed(pos: Tensor, p: NlParams):
    """Query, key and value embeddings of position rows (N, HW, C)."""
    return pos @ p.w_theta, pos @ p.w_phi, pos @ p.w_g


def affinity(theta: Tensor, phi: Tensor) -> Tensor:
    """Dot-product affinity theta @ phi^T, shape (N, HW, HW')."""
    return ops.matmul(theta, ops.swap_last(phi))


def _pool_positions(pos: Tensor, h: int, w: int) -> Tensor:
    """2x max-pool an (N, HW, C') embedding over its spatial grid."""
    pooled = ops.max_pool2d(ops.from_positions(pos, h, w), 2, 2)
    return ops.to_positions(pooled)


# ----------------------------------------------------------------------- blocks

def contrast_attention(f: Tensor, temperature: Union[float, Tensor]) -> Tensor:
    """softmax(-f / T) along rows: attends to the least similar keys."""
    if isinstance(temperature, Tensor):
        if np.any(temperature.data <= 0):
            raise ValueError("temperature must be positive")
        neg_inv = ops.scale(ops.reciprocal(ops.reshape(temperature, (1,) * f.ndim)), -1.0)
        return ops.softmax_rows(ops.scale(f, neg_inv))
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return ops.softmax_rows(ops.scale(f, -1.0 / temperature))


def nl_block(x: Tensor, p: NlParams, return_attention: bool = False):
    """Z = X + softmax(theta phi^T) g W_z."""
    x4, squeeze = _as_batch(x)
    _, c, h, w = x4.shape
    if c != p.channels:
        raise DimensionError(f"nl_block: input has {c} channels, params expect {p.channels}")
    theta, phi, g = embed(ops.to_positions(x4), p)
    attn = ops.softmax_rows(affinity(theta, phi))
    y = ops.matmul(attn, g)
    z = _restore(ops.add(x4, ops.from_positions(y @ p.w_z, h, w)), squeeze)
    return (z, attn) if return_attention else z


def mutual_attention(x_r: Tensor, x_d: Tensor, p: MacParams):
    """Each modality's values aggregated with the other modality's attention.

    Returns ``(Y_r, Y_d, maps)`` where Y_* are (N, C', H, W) attentive
    features before the output projection.
    """
    _check_pair(x_r, x_d)
    xr, squeeze = _as_batch(x_r)
    xd, _ = _as_batch(x_d)
    _, _, h, w = xr.shape
    th_r, ph_r, g_r = embed(ops.to_positions(xr), p.rgb)
    th_d, ph_d, g_d = embed(ops.to_positions(xd), p.depth)
    a_r = ops.softmax_rows(affinity(th_r, ph_r))
    a_d = ops.softmax_rows(affinity(th_d, ph_d))
    y_r = ops.from_positions(ops.matmul(a_d, g_r), h, w)
    y_d = ops.from_positions(ops.matmul(a_r, g_d), h, w)
    return _restore(y_r, squeeze), _restore(y_d, squeeze), AttentionMaps(A_r=a_r, A_d=a_d)


def mac_block(x_r: Tensor, x_d: Tensor, p: MacParams, alpha: Optional[Alpha] = None,
              return_maps: bool = False):
    """Unified mutual attention and contrast.

    Z_r = X_r + A_d g_r W_z_r - C_d g_r W_c_r, and symmetrically for Z_d.
    With ``alpha`` given, the RGB-side update is scaled by it (the depth side
    is never scaled).
    """
    _check_pair(x_r, x_d)
    xr, squeeze = _as_batch(x_r)
    xd, _ = _as_batch(x_d)
    _, _, h, w = xr.shape
    th_r, ph_r, g_r = embed(ops.to_positions(xr), p.rgb)
    th_d, ph_d, g_d = embed(ops.to_positions(xd), p.depth)
    f_r = affinity(th_r, ph_r)
    f_d = affinity(th_d, ph_d)
    t = p.temperature()
    a_r, a_d = ops.softmax_rows(f_r), ops.softmax_rows(f_d)
    c_r, c_d = contrast_attention(f_r, t), contrast_attention(f_d, t)

    delta_r = ops.sub(ops.matmul(a_d, g_r) @ p.rgb.w_z, ops.matmul(c_d, g_r) @ p.w_c_r)
    delta_d = ops.sub(ops.matmul(a_r, g_d) @ p.depth.w_z, ops.matmul(c_r, g_d) @ p.w_c_d)
    if alpha is not None:
        delta_r = ops.scale(delta_r, _alpha_factor(alpha))
    z_r = _restore(ops.add(xr, ops.from_positions(delta_r, h, w)), squeeze)
    z_d = _restore(ops.add(xd, ops.from_positions(delta_d, h, w)), squeeze)
    if return_maps:
        return z_r, z_d, AttentionMaps(a_r, a_d, c_r, c_d)
    return z_r, z_d


def selective_alpha(x_r: Tensor, x_d: Tensor, s: SelectiveHeadParams, train: bool = False) -> Tensor:
    """One weight in (0, 1) per image, from how badly RGB features predict depth ones.

    Returns shape (N,).
    """
    _check_pair(x_r, x_d)
    xr, _ = _as_batch(x_r)
    xd, _ = _as_batch(x_d)
    n, _, h, w = xr.shape
    _check_head_size(h, w)
    est = ops.relu(s.est_bn1(s.est_conv1(xr), train))
    est = s.est_conv2(est)
    err = ops.sub(xd, est)
    e = ops.relu(s.down_bn1(s.down_conv1(err), train))
    e = ops.relu(s.down_bn2(s.down_conv2(e), train))
    flat = ops.reshape(e, (n, -1))
    if flat.shape[1] != s.fc1.weight.shape[1]:
        raise DimensionError(
            f"selective head built for {s.fc1.weight.shape[1]} features, got {flat.shape[1]}")
    hidden = ops.relu(s.fc1(flat))
    logit = s.fc2(hidden)
    return ops.reshape(ops.sigmoid(logit), (n,))


def smac_block(x_r: Tensor, x_d: Tensor, p: MacParams, s: SelectiveHeadParams,
               train: bool = False, alpha: Optional[Alpha] = None, return_maps: bool = False):
    """MAC block whose RGB-side update is gated by the selective attention.

    ``alpha`` overrides the head (useful for ablations). Returns
    ``(Z_r, Z_d, alpha)`` (plus maps if requested).
    """
    if alpha is None:
        alpha = selective_alpha(x_r, x_d, s, train)
    out = mac_block(x_r, x_d, p, alpha=alpha, return_maps=return_maps)
    return (*out[:2], alpha, *out[2:])


def sma_block(x_r: Tensor, x_d: Tensor, rgb: NlParams, depth: NlParams, alpha: Alpha,
              downsample_kv: bool = False, return_maps: bool = False):
    """Selective mutual attention without contrast.

    With ``downsample_kv`` the key and value embeddings are 2x max-pooled, so
    the attention matrices are (HW, HW/4).
    """
    _check_pair(x_r, x_d)
    xr, squeeze = _as_batch(x_r)
    xd, _ = _as_batch(x_d)
    _, _, h, w = xr.shape
    if downsample_kv and (h % 2 or w % 2):
        raise DimensionError(f"sma_block: key/value pooling needs even size, got {h}x{w}")
    th_r, ph_r, g_r = embed(ops.to_positions(xr), rgb)
    th_d, ph_d, g_d = embed(ops.to_positions(xd), depth)
    if downsample_kv:
        ph_r, g_r = _pool_positions(ph_r, h, w), _pool_positions(g_r, h, w)
        ph_d, g_d = _pool_positions(ph_d, h, w), _pool_positions(g_d, h, w)
    a_r = ops.softmax_rows(affinity(th_r, ph_r))
    a_d = ops.softmax_rows(affinity(th_d, ph_d))
    delta_r = ops.scale(ops.matmul(a_d, g_r) @ rgb.w_z, _alpha_factor(alpha))
    delta_d = ops.matmul(a_r, g_d) @ depth.w_z
    z_r = _restore(ops.add(xr, ops.from_positions(delta_r, h, w)), squeeze)
    z_d = _restore(ops.add(xd, ops.from_positions(delta_d, h, w)), squeeze)
    if return_maps:
        return z_r, z_d, AttentionMaps(A_r=a_r, A_d=a_d)
    return z_r, z_d
