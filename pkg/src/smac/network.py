"""The two-stream RGB-D saliency network.

Each stream is a small VGG-like encoder with output stride 8, a DenseASPP
module, and five decoders. The streams meet in a selective mutual attention
and contrast block on top of the encoders, in SMA modules inside the first
three decoders, and in alpha-weighted concat-residual fusions in the last two.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from smac import ops
from smac.attention import (
    Alpha,
    BNParams,
    ConvParams,
    MacParams,
    NlParams,
    SelectiveHeadParams,
    nl_block,
    selective_alpha,
    sma_block,
    smac_block,
)
from smac.errors import ConfigError, DataError
from smac.resample import resize_nearest
from smac.tensor import Parameter, Tensor

LOSS_WEIGHTS = (0.5, 0.5, 0.8, 0.8, 1.0)


@dataclass
class NetworkConfig:
    stage_channels: Tuple[int, ...] = (16, 32, 32, 48, 48)
    fc_channels: int = 64
    fc6_dilation: int = 4
    aspp_compress: int = 48
    aspp_branch_channels: int = 24
    aspp_dilations: Tuple[int, ...] = (2, 4, 8)
    sma_decoders: int = 3
    loss_weights: Tuple[float, ...] = LOSS_WEIGHTS
    input_size: int = 64
    head_down_channels: Tuple[int, ...] = (256, 128)
    head_fc_hidden: int = 256

    @classmethod
    def full(cls) -> "NetworkConfig":
        """Full-width VGG-16 layout at 256x256 input."""
        return cls(stage_channels=(64, 128, 256, 512, 512), fc_channels=1024, fc6_dilation=12,
                   aspp_compress=512, aspp_branch_channels=176, input_size=256)

    def validate(self) -> None:
        if len(self.stage_channels) != 5 or min(self.stage_channels) < 1:
            raise ConfigError(f"stage_channels needs 5 positive widths, got {self.stage_channels}")
        if len(self.loss_weights) != 5:
            raise ConfigError(f"loss_weights needs 5 entries, got {self.loss_weights}")
        if self.input_size % 8:
            raise ConfigError(f"input_size must be divisible by 8, got {self.input_size}")
        if self.input_size // 8 < 4:
            raise ConfigError("input_size must be at least 32 so the top features are 4x4")
        if not 0 <= self.sma_decoders <= 5:
            raise ConfigError(f"sma_decoders must be in 0..5, got {self.sma_decoders}")
        if len(self.head_down_channels) != 2:
            raise ConfigError("head_down_channels needs two widths")

    @property
    def decoder_channels(self) -> List[int]:
        """Output width of decoder d = width of the next skip feature."""
        c = self.stage_channels
        return [c[3], c[2], c[1], c[0], c[0]]

    @property
    def decoder_sizes(self) -> List[int]:
        s = self.input_size
        return [s // 8, s // 8, s // 4, s // 2, s]


# ------------------------------------------------------------------ parameters

@dataclass
class ConvBN:
    conv: ConvParams
    bn: BNParams

    @classmethod
    def create(cls, cin, cout, k, rng, dilation=1) -> "ConvBN":
        return cls(ConvParams.create(cin, cout, k, rng, dilation=dilation, bias=False),
                   BNParams.create(cout))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.relu(self.bn(self.conv(x), train))


@dataclass
class EncoderParams:
    stages: List[List[ConvBN]]
    fc6: ConvBN
    fc7: ConvBN

    @classmethod
    def create(cls, cfg: NetworkConfig, rng) -> "EncoderParams":
        stages, cin = [], 3
        for i, c in enumerate(cfg.stage_channels):
            dil = 2 if i >= 3 else 1
            stages.append([ConvBN.create(cin, c, 3, rng, dil), ConvBN.create(c, c, 3, rng, dil)])
            cin = c
        fc6 = ConvBN.create(cin, cfg.fc_channels, 3, rng, cfg.fc6_dilation)
        fc7 = ConvBN.create(cfg.fc_channels, cfg.fc_channels, 1, rng)
        return cls(stages, fc6, fc7)


@dataclass
class AsppParams:
    compress: ConvBN
    branches: List[ConvBN]
    project: ConvBN

    @classmethod
    def create(cls, cfg: NetworkConfig, rng) -> "AsppParams":
        c, b = cfg.aspp_compress, cfg.aspp_branch_channels
        branches = [ConvBN.create(c + i * b, b, 3, rng, d) for i, d in enumerate(cfg.aspp_dilations)]
        total = 2 * c + len(cfg.aspp_dilations) * b
        return cls(ConvBN.create(cfg.fc_channels, c, 1, rng), branches,
                   ConvBN.create(total, c, 1, rng))


@dataclass
class DecoderParams:
    conv1: ConvBN
    conv2: ConvBN
    head: ConvParams

    @classmethod
    def create(cls, cin: int, cout: int, rng) -> "DecoderParams":
        return cls(ConvBN.create(cin, cout, 3, rng), ConvBN.create(cout, cout, 3, rng),
                   ConvParams.create(cout, 1, 3, rng))


@dataclass
class SmaFusion:
    rgb: NlParams
    depth: NlParams


@dataclass
class TwoStreamState:
    config: NetworkConfig
    rgb_encoder: EncoderParams
    depth_encoder: EncoderParams
    aspp_r: AsppParams
    aspp_d: AsppParams
    smac: MacParams
    selective: SelectiveHeadParams
    post_nl_r: NlParams
    post_nl_d: NlParams
    decoders_r: List[DecoderParams]
    decoders_d: List[DecoderParams]
    fusions: List[Union[SmaFusion, ConvParams]] = field(default_factory=list)

    @classmethod
    def create(cls, cfg: NetworkConfig, seed: int = 0) -> "TwoStreamState":
        cfg.validate()
        rng = np.random.default_rng(seed)
        top = cfg.input_size // 8
        c = cfg.aspp_compress
        dec_out = cfg.decoder_channels
        skips = list(reversed(cfg.stage_channels))
        dec_in = [skips[0] + c] + [skips[i] + dec_out[i - 1] for i in range(1, 5)]

        def decoders():
            return [DecoderParams.create(dec_in[i], dec_out[i], rng) for i in range(5)]

        fusions = []
        for i in range(5):
            if i < cfg.sma_decoders:
                fusions.append(SmaFusion(NlParams.create(dec_out[i], rng),
                                         NlParams.create(dec_out[i], rng)))
            else:
                fusions.append(ConvParams.create(2 * dec_out[i], dec_out[i], 3, rng))
        return cls(
            config=cfg,
            rgb_encoder=EncoderParams.create(cfg, rng),
            depth_encoder=EncoderParams.create(cfg, rng),
            aspp_r=AsppParams.create(cfg, rng),
            aspp_d=AsppParams.create(cfg, rng),
            smac=MacParams.create(c, rng),
            selective=SelectiveHeadParams.create(c, top, top, rng, cfg.head_down_channels,
                                                 cfg.head_fc_hidden),
            post_nl_r=NlParams.create(c, rng),
            post_nl_d=NlParams.create(c, rng),
            decoders_r=decoders(),
            decoders_d=decoders(),
            fusions=fusions,
        )


def _walk(obj, prefix: str) -> Iterator[Tuple[str, object]]:
    if isinstance(obj, Parameter):
        yield prefix, obj
    elif isinstance(obj, np.ndarray):
        yield prefix, obj
    elif isinstance(obj, NetworkConfig):
        return
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from _walk(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from _walk(item, f"{prefix}.{i}")


def named_parameters(obj, prefix: str = "") -> List[Tuple[str, Parameter]]:
    return [(n, p) for n, p in _walk(obj, prefix) if isinstance(p, Parameter)]


def named_buffers(obj, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
    """BN running statistics (plain arrays, not trained by SGD)."""
    return [(n, b) for n, b in _walk(obj, prefix) if not isinstance(b, Parameter)]


def parameters(obj) -> List[Parameter]:
    return [p for _, p in named_parameters(obj)]


# --------------------------------------------------------------------- forward

def encoder_forward(image: Tensor, enc: EncoderParams, train: bool = False):
    """Return the five skip features (strides 1, 2, 4, 8, 8) and the fc7 feature."""
    x = image
    if x.shape[-1] % 8 or x.shape[-2] % 8:
        raise ConfigError(f"input spatial size must be divisible by 8, got {x.shape[-2:]}")
    skips = []
    for i, stage in enumerate(enc.stages):
        if 1 <= i <= 3:
            x = ops.max_pool2d(x, 2, 2)
        for layer in stage:
            x = layer(x, train)
        skips.append(x)
    top = enc.fc7(enc.fc6(x, train), train)
    return skips, top


def dense_aspp(x: Tensor, p: AsppParams, train: bool = False) -> Tensor:
    base = p.compress(x, train)
    feats = [base]
    for branch in p.branches:
        feats.append(branch(ops.concat(feats, axis=1), train))
    h, w = base.shape[-2:]
    glob = ops.upsample_bilinear(ops.global_avg_pool(base), h, w)
    return p.project(ops.concat(feats + [glob], axis=1), train)


def fusion_stage(top_r: Tensor, top_d: Tensor, state: TwoStreamState, train: bool = False,
                 alpha: Optional[Alpha] = None):
    """SMAC block, then one NL block per stream. Returns (Z_r, Z_d, alpha)."""
    z_r, z_d, a = smac_block(top_r, top_d, state.smac, state.selective, train, alpha=alpha)
    return nl_block(z_r, state.post_nl_r), nl_block(z_d, state.post_nl_d), a


def _alpha_map(alpha: Alpha) -> Union[float, Tensor]:
    if isinstance(alpha, Tensor):
        return ops.reshape(alpha, (alpha.shape[0], 1, 1, 1))
    return float(alpha)


def decoder_step(prev_r: Tensor, prev_d: Tensor, skip_r: Tensor, skip_d: Tensor, idx: int,
                 alpha: Alpha, state: TwoStreamState, train: bool = False):
    """One decoder level for both streams plus their cross-modal fusion.

    ``idx`` is 1-based. Levels up to ``config.sma_decoders`` fuse with SMA
    (pooled keys/values at level 3); later levels add an alpha-weighted
    conv residual of the concatenated streams to the RGB stream only.
    """
    if not 1 <= idx <= 5:
        raise ConfigError(f"decoder index must be in 1..5, got {idx}")
    outs = []
    for prev, skip, dec in ((prev_r, skip_r, state.decoders_r[idx - 1]),
                            (prev_d, skip_d, state.decoders_d[idx - 1])):
        h, w = skip.shape[-2:]
        if prev.shape[-2:] != (h, w):
            prev = ops.upsample_bilinear(prev, h, w)
        x = ops.concat([skip, prev], axis=1)
        if x.shape[1] != dec.conv1.conv.weight.shape[1]:
            raise ConfigError(f"decoder {idx}: got {x.shape[1]} input channels, "
                              f"expected {dec.conv1.conv.weight.shape[1]}")
        outs.append(dec.conv2(dec.conv1(x, train), train))
    d_r, d_d = outs
    fusion = state.fusions[idx - 1]
    if isinstance(fusion, SmaFusion):
        return sma_block(d_r, d_d, fusion.rgb, fusion.depth, alpha, downsample_kv=(idx == 3))
    residual = fusion(ops.concat([d_r, d_d], axis=1))
    return ops.add(d_r, ops.scale(residual, _alpha_map(alpha))), d_d


def predict(x: Tensor, head: ConvParams) -> Tensor:
    """1-channel 3x3 conv followed by a sigmoid."""
    return ops.sigmoid(head(x))


@dataclass
class ForwardResult:
    preds_r: List[Tensor]
    preds_d: List[Tensor]
    alpha: Alpha
    final: Tensor


def forward(state: TwoStreamState, rgb: Tensor, depth: Tensor, train: bool = False,
            alpha: Optional[Alpha] = None) -> ForwardResult:
    """Run both streams. Inputs are (N, 3, S, S); ``alpha`` overrides the head."""
    skips_r, top_r = encoder_forward(rgb, state.rgb_encoder, train)
    skips_d, top_d = encoder_forward(depth, state.depth_encoder, train)
    a_r = dense_aspp(top_r, state.aspp_r, train)
    a_d = dense_aspp(top_d, state.aspp_d, train)
    cur_r, cur_d, a = fusion_stage(a_r, a_d, state, train, alpha)
    preds_r, preds_d = [], []
    for idx in range(1, 6):
        skip = 5 - idx
        cur_r, cur_d = decoder_step(cur_r, cur_d, skips_r[skip], skips_d[skip], idx, a, state, train)
        preds_r.append(predict(cur_r, state.decoders_r[idx - 1].head))
        preds_d.append(predict(cur_d, state.decoders_d[idx - 1].head))
    size = rgb.shape[-2:]
    final = ops.upsample_bilinear(preds_r[-1], *size)
    return ForwardResult(preds_r, preds_d, a, final)


# ------------------------------------------------------------------------ loss

def deep_supervised_loss(preds_r: List[Tensor], preds_d: List[Tensor], gt: np.ndarray,
                         weights=LOSS_WEIGHTS) -> Tensor:
    """Weighted BCE over every decoder prediction of both streams.

    ``gt`` is (N, 1, S, S) with values in {0, 1}; it is downscaled with
    nearest-neighbour sampling to each prediction's size.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if not np.all((gt == 0) | (gt == 1)):
        raise DataError("ground truth must be binary {0, 1}")
    total = None
    for preds in (preds_r, preds_d):
        for wgt, pred in zip(weights, preds):
            target = resize_nearest(gt, *pred.shape[-2:])
            term = ops.scale(ops.bce(pred, target), wgt)
            total = term if total is None else ops.add(total, term)
    return total


def fusion_attention(state: TwoStreamState, rgb: Tensor, depth: Tensor):
    """Eval-mode attention and contrast maps of the top fusion block.

    Returns (AttentionMaps, alpha, (h, w)) where (h, w) is the grid size the
    map rows index.
    """
    _, top_r = encoder_forward(rgb, state.rgb_encoder, False)
    _, top_d = encoder_forward(depth, state.depth_encoder, False)
    a_r = dense_aspp(top_r, state.aspp_r, False)
    a_d = dense_aspp(top_d, state.aspp_d, False)
    _, _, alpha, maps = smac_block(a_r, a_d, state.smac, state.selective, False, return_maps=True)
    return maps, alpha, tuple(a_r.shape[-2:])
