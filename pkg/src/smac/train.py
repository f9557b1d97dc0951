"""Data pipeline and SGD-with-momentum training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from smac.checkpoint import save_checkpoint
from smac.errors import ConfigError, DataError, NumericError
from smac.imageio import Sample, load_dataset
from smac.network import (
    NetworkConfig,
    TwoStreamState,
    deep_supervised_loss,
    forward,
    named_parameters,
)
from smac.resample import resize_bilinear, resize_nearest_hw
from smac.tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

LOSS_FILE = "loss.csv"
CHECKPOINT_FILE = "checkpoint.bin"


@dataclass
class TrainConfig:
    lr0: float = 0.01
    weight_decay: float = 0.0005
    momentum: float = 0.9
    batch_size: int = 4
    total_iters: int = 500
    decay_points: Tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 0.1
    crop_from: float = 9 / 8
    hflip_prob: float = 0.5
    seed: int = 0
    invert_depth: bool = False

    @classmethod
    def full(cls) -> "TrainConfig":
        return cls(batch_size=12, total_iters=40000)

    def validate(self) -> None:
        if self.total_iters < 1:
            raise ConfigError(f"total_iters must be positive, got {self.total_iters}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        pts = list(self.decay_points)
        if any(not 0 < p < 1 for p in pts) or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigError(f"decay_points must be strictly increasing in (0, 1), got {pts}")
        if self.crop_from < 1:
            raise ConfigError(f"crop_from must be >= 1, got {self.crop_from}")
        if not 0 <= self.hflip_prob <= 1:
            raise ConfigError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        if self.lr0 < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("lr0 and weight_decay must be >= 0 and momentum in [0, 1)")


# ------------------------------------------------------------------ pipeline

def normalize_depth(depth: np.ndarray, invert: bool = False) -> np.ndarray:
    """Optionally flip (255 - d), then min-max rescale to [0, 255].

    A constant map becomes 128 everywhere.
    """
    d = np.asarray(depth, dtype=np.float64)
    if invert:
        d = 255.0 - d
    lo, hi = d.min(), d.max()
    if hi - lo <= 0:
        return np.full_like(d, 128.0)
    return (d - lo) * (255.0 / (hi - lo))


def preprocess(sample: Sample, size: int, invert_depth: bool = False):
    """Turn a sample into network inputs.

    Returns rgb (3, S, S) and depth (3, S, S) with per-image channel means
    removed, and gt (1, S, S) in {0, 1} (or None when the sample has no gt).
    """
    sample.check()
    rgb = np.asarray(sample.rgb, dtype=np.float64)
    depth = np.asarray(sample.depth, dtype=np.float64)
    if rgb.shape[:2] != (size, size):
        rgb = resize_bilinear(rgb, size, size)
        depth = resize_bilinear(depth, size, size)
    depth = normalize_depth(depth, invert_depth)
    rgb_t = np.transpose(rgb, (2, 0, 1))
    depth_t = np.repeat(depth[None], 3, axis=0)
    rgb_t = rgb_t - rgb_t.mean(axis=(1, 2), keepdims=True)
    depth_t = depth_t - depth_t.mean(axis=(1, 2), keepdims=True)
    gt_t = None
    if sample.gt is not None:
        gt = sample.gt
        if gt.shape != (size, size):
            gt = resize_nearest_hw(gt, size, size)
        gt_t = (np.asarray(gt) >= 128).astype(np.float64)[None]
    return np.ascontiguousarray(rgb_t), np.ascontiguousarray(depth_t), gt_t


def augment(sample: Sample, rng: np.random.Generator, size: int, crop_from: float = 9 / 8,
            hflip_prob: float = 0.5, flip: Optional[bool] = None) -> Sample:
    """Resize to crop_from * size, take a random size x size crop, maybe flip.

    The same crop and flip apply to all three planes. ``flip`` forces the
    flip decision; the random draw still happens so the stream stays aligned.
    """
    big = int(round(crop_from * size))
    rgb = resize_bilinear(sample.rgb, big, big)
    depth = resize_bilinear(sample.depth, big, big)
    gt = resize_nearest_hw(sample.gt, big, big) if sample.gt is not None else None
    top = int(rng.integers(0, big - size + 1))
    left = int(rng.integers(0, big - size + 1))
    coin = rng.random() < hflip_prob
    if flip is not None:
        coin = flip
    rows = slice(top, top + size)
    cols = slice(left, left + size)
    rgb, depth = rgb[rows, cols], depth[rows, cols]
    gt = gt[rows, cols] if gt is not None else None
    if coin:
        rgb, depth = rgb[:, ::-1], depth[:, ::-1]
        gt = gt[:, ::-1] if gt is not None else None
    return Sample(sample.stem, np.ascontiguousarray(rgb), np.ascontiguousarray(depth),
                  None if gt is None else np.ascontiguousarray(gt))


def hflip(sample: Sample) -> Sample:
    gt = None if sample.gt is None else sample.gt[:, ::-1].copy()
    return Sample(sample.stem, sample.rgb[:, ::-1].copy(), sample.depth[:, ::-1].copy(), gt)


# ----------------------------------------------------------------- optimizer

def lr_schedule(it: int, cfg: TrainConfig) -> float:
    """Piecewise constant: multiply by decay_factor at each decay point."""
    if not 0 <= it < cfg.total_iters:
        raise ValueError(f"iteration {it} outside [0, {cfg.total_iters})")
    drops = sum(1 for p in cfg.decay_points if it >= int(round(p * cfg.total_iters)))
    return cfg.lr0 * cfg.decay_factor ** drops


def sgd_step(params: Sequence, cfg: TrainConfig, it: int) -> float:
    """One momentum step over ``params`` (Parameters or (name, Parameter) pairs).

    v = momentum * v + grad + weight_decay * value; value -= lr * v. Grads
    are zeroed afterwards. Returns the learning rate used.
    """
    named = [(p if isinstance(p, tuple) else (p.name or f"param{i}", p))
             for i, p in enumerate(params)]
    for name, p in named:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {name} at iteration {it}")
    lr = lr_schedule(it, cfg)
    for _, p in named:
        buf = p.momentum_buf
        buf *= cfg.momentum
        buf += p.grad
        if cfg.weight_decay:
            buf += cfg.weight_decay * p.data
        p.data -= lr * buf
        p.zero_grad()
    return lr


# ---------------------------------------------------------------------- loop

@dataclass
class TrainResult:
    state: TwoStreamState
    losses: List[float]
    loss_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None


def make_batch(samples: Sequence[Sample], rng: np.random.Generator, net_cfg: NetworkConfig,
               cfg: TrainConfig):
    rgbs, depths, gts = [], [], []
    for s in samples:
        aug = augment(s, rng, net_cfg.input_size, cfg.crop_from, cfg.hflip_prob)
        r, d, g = preprocess(aug, net_cfg.input_size, cfg.invert_depth)
        rgbs.append(r)
        depths.append(d)
        gts.append(g)
    return np.stack(rgbs), np.stack(depths), np.stack(gts)


def train_loop(dataset, net_cfg: NetworkConfig, cfg: TrainConfig, out_dir=None,
               state: Optional[TwoStreamState] = None) -> TrainResult:
    """Train on a dataset directory (or a list of samples).

    Writes ``loss.csv`` (``iter,loss`` rows) and ``checkpoint.bin`` plus its
    manifest into ``out_dir`` when one is given.
    """
    cfg.validate()
    net_cfg.validate()
    samples = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    if not samples:
        raise DataError("training set is empty")
    for s in samples:
        if s.gt is None:
            raise DataError(f"{s.stem}: training sample has no ground truth")
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = TwoStreamState.create(net_cfg, cfg.seed)
    params = named_parameters(state)
    order: List[int] = []
    losses: List[float] = []
    for it in range(cfg.total_iters):
        picked = []
        while len(picked) < cfg.batch_size:
            if not order:
                order = list(rng.permutation(len(samples)))
            picked.append(samples[order.pop(0)])
        rgb, depth, gt = make_batch(picked, rng, net_cfg, cfg)
        out = forward(state, Tensor(rgb), Tensor(depth), train=True)
        loss = deep_supervised_loss(out.preds_r, out.preds_d, gt, net_cfg.loss_weights)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss at iteration {it}")
        backward(loss)
        lr = sgd_step(params, cfg, it)
        losses.append(value)
        if it % 25 == 0 or it == cfg.total_iters - 1:
            log.info("iter %d loss %.6f lr %g", it, value, lr)
    result = TrainResult(state, losses)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.loss_path = out / LOSS_FILE
        result.loss_path.write_text("".join(f"{i},{v:.17g}\n" for i, v in enumerate(losses)))
        result.checkpoint_path = out / CHECKPOINT_FILE
        save_checkpoint(state, result.checkpoint_path)
    return result


def predict_map(state: TwoStreamState, sample: Sample, invert_depth: bool = False) -> np.ndarray:
    """Eval-mode saliency map in [0, 1] at the sample's original size."""
    size = state.config.input_size
    rgb, depth, _ = preprocess(Sample(sample.stem, sample.rgb, sample.depth), size, invert_depth)
    with no_grad():
        out = forward(state, Tensor(rgb[None]), Tensor(depth[None]), train=False)
    pred = out.final.data[0, 0]
    h, w = sample.rgb.shape[:2]
    return np.clip(resize_bilinear(pred, h, w), 0.0, 1.0)
