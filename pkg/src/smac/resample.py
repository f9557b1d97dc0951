"""Plain-array resizing shared by the data pipeline, metrics and statistics."""

import numpy as np

from smac.ops import bilinear_matrix


def resize_bilinear(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize over the first two axes of an (H, W) or (H, W, C) array.

    Uses the half-pixel (align_corners=False) convention. Returns float64.
    """
    a = np.asarray(arr, dtype=np.float64)
    H, W = a.shape[:2]
    if (H, W) == (h, w):
        return a.copy()
    rh = bilinear_matrix(H, h)
    rw = bilinear_matrix(W, w)
    out = np.tensordot(rh, a, axes=(1, 0))
    out = np.tensordot(rw, out, axes=(1, 1))
    return np.swapaxes(out, 0, 1)


def resize_nearest(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize over the last two axes (pixel-centre sampling)."""
    H, W = arr.shape[-2:]
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
    return arr[..., rows[:, None], cols[None, :]]


def resize_nearest_hw(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize over the first two axes."""
    H, W = arr.shape[:2]
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
    return arr[rows[:, None], cols[None, :]]
