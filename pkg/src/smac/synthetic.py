"""Procedural RGB-D scenes with known saliency masks, for fixtures and demos."""

import numpy as np

from smac.imageio import Sample


def ellipse_mask(h: int, w: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0


def make_scene(rng: np.random.Generator, size: int = 64, stem: str = "scene") -> Sample:
    """One textured background with a single elliptical object.

    The object differs from the background in colour and sits nearer the
    camera, so the depth map holds smaller values inside it.
    """
    h = w = size
    cy = rng.uniform(0.35, 0.65) * h
    cx = rng.uniform(0.35, 0.65) * w
    ry = rng.uniform(0.15, 0.3) * h
    rx = rng.uniform(0.15, 0.3) * w
    mask = ellipse_mask(h, w, cy, cx, ry, rx)

    yy, xx = np.mgrid[0:h, 0:w] / size
    bg_color = rng.uniform(40, 140, size=3)
    fg_color = rng.uniform(120, 230, size=3)
    texture = 25 * np.sin(2 * np.pi * (yy * rng.uniform(2, 5) + xx * rng.uniform(2, 5)))
    rgb = np.where(mask[..., None], fg_color, bg_color + texture[..., None])
    rgb = rgb + rng.normal(0, 6, size=rgb.shape)

    ramp = 150 + 80 * yy
    depth = np.where(mask, 60 + 10 * xx, ramp) + rng.normal(0, 3, size=(h, w))

    to_u8 = lambda a: np.clip(np.rint(a), 0, 255).astype(np.uint8)  # noqa: E731
    return Sample(stem, to_u8(rgb), to_u8(depth), (mask * 255).astype(np.uint8))


def make_dataset(n: int, seed: int = 0, size: int = 64):
    rng = np.random.default_rng(seed)
    return [make_scene(rng, size, f"img{i:03d}") for i in range(n)]
