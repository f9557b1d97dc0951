"""Dataset profile: global and interior contrast, center bias, object size,
and a simplified depth-quality score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from smac.errors import DataError
from smac.imageio import Sample
from smac.resample import resize_bilinear

COLOR_BINS = 8 ** 3
DEPTH_BINS = 256
AAM_SIZE = 256


# ----------------------------------------------------------------- histograms

def color_bin_index(rgb: np.ndarray) -> np.ndarray:
    """Joint 8x8x8 RGB bin of each pixel (value // 32 per channel)."""
    q = np.asarray(rgb).astype(np.int64) // 32
    return q[..., 0] * 64 + q[..., 1] * 8 + q[..., 2]


def _bins(plane: np.ndarray) -> Tuple[np.ndarray, int]:
    plane = np.asarray(plane)
    if plane.ndim == 3:
        return color_bin_index(plane), COLOR_BINS
    return plane.astype(np.int64), DEPTH_BINS


def histogram(plane: np.ndarray, mask: np.ndarray, normalized: bool = True) -> np.ndarray:
    idx, n = _bins(plane)
    h = np.bincount(idx[mask], minlength=n).astype(np.float64)
    if normalized and h.sum() > 0:
        h /= h.sum()
    return h


def chi2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """0.5 * sum (a - b)^2 / (a + b) over bins where a + b > 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = a + b
    keep = s > 0
    return float(0.5 * np.sum((a[keep] - b[keep]) ** 2 / s[keep]))


def entropy(hist: np.ndarray) -> float:
    """Shannon entropy in nats of a histogram (normalized internally)."""
    h = np.asarray(hist, dtype=np.float64)
    total = h.sum()
    if total <= 0:
        return math.nan
    p = h[h > 0] / total
    return float(-np.sum(p * np.log(p)))


def _mask(gt: np.ndarray) -> np.ndarray:
    g = np.asarray(gt)
    return g if g.dtype == np.bool_ else g >= 128


def chi2_contrast(plane: np.ndarray, fg_mask: np.ndarray, normalized: bool = True) -> float:
    """Foreground vs background histogram distance.

    ``plane`` is (H, W, 3) for colour (512 joint bins) or (H, W) for depth
    (256 bins). NaN when either region is empty.
    """
    m = _mask(fg_mask)
    if not m.any() or m.all():
        return math.nan
    return chi2_distance(histogram(plane, m, normalized), histogram(plane, ~m, normalized))


def interior_contrast(plane: np.ndarray, fg_mask: np.ndarray) -> float:
    """Entropy of the foreground histogram; NaN for an empty foreground."""
    m = _mask(fg_mask)
    if not m.any():
        return math.nan
    return entropy(histogram(plane, m))


# ---------------------------------------------------------------- center bias

@dataclass
class GaussianFit:
    amplitude: float
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rms: float
    iterations: int
    converged: bool

    @property
    def cbi(self) -> float:
        return (self.sigma_x + self.sigma_y) / 2


def _gaussian(params: np.ndarray, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    a, mx, my, sx, sy = params
    return a * np.exp(-(xx - mx) ** 2 / (2 * sx * sx) - (yy - my) ** 2 / (2 * sy * sy))


def _jacobian(params: np.ndarray, xx: np.ndarray, yy: np.ndarray, model: np.ndarray) -> np.ndarray:
    a, mx, my, sx, sy = params
    dx = xx - mx
    dy = yy - my
    base = model / a if a != 0 else np.exp(-dx ** 2 / (2 * sx * sx) - dy ** 2 / (2 * sy * sy))
    cols = [base, model * dx / sx ** 2, model * dy / sy ** 2,
            model * dx ** 2 / sx ** 3, model * dy ** 2 / sy ** 3]
    return np.stack([c.ravel() for c in cols], axis=1)


def fit_gaussian(surface: np.ndarray, max_iter: int = 200, tol: float = 1e-14) -> GaussianFit:
    """Least-squares fit of an axis-aligned 2-D Gaussian by Gauss-Newton.

    Starts from mu at the map centre, sigma = 64 and amplitude = max. Each
    step is halved until the squared error drops; the best iterate is kept.
    """
    z = np.asarray(surface, dtype=np.float64)
    h, w = z.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    params = np.array([z.max(), (w - 1) / 2, (h - 1) / 2, 64.0, 64.0])
    resid = (_gaussian(params, xx, yy) - z).ravel()
    cost = float(resid @ resid)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        model = _gaussian(params, xx, yy)
        jac = _jacobian(params, xx, yy, model)
        step = np.linalg.lstsq(jac, -resid, rcond=None)[0]
        t = 1.0
        improved = False
        for _ in range(40):
            cand = params + t * step
            if cand[3] > 0 and cand[4] > 0:
                r = (_gaussian(cand, xx, yy) - z).ravel()
                c = float(r @ r)
                if c < cost:
                    improved = True
                    break
            t *= 0.5
        if not improved:
            converged = True
            break
        gain = cost - c
        params, resid, cost = cand, r, c
        if gain <= tol * max(cost, 1e-300) or np.max(np.abs(t * step)) < 1e-12:
            converged = True
            break
    rms = math.sqrt(cost / z.size)
    return GaussianFit(float(params[0]), float(params[1]), float(params[2]), float(abs(params[3])),
                       float(abs(params[4])), rms, it, converged)


def average_annotation_map(masks: Sequence[np.ndarray], size: int = AAM_SIZE) -> np.ndarray:
    """Mean of the gt masks resized to size x size, scaled to peak 1."""
    if not masks:
        raise DataError("center bias needs at least one mask")
    acc = np.zeros((size, size))
    for m in masks:
        acc += resize_bilinear(_mask(m).astype(np.float64), size, size)
    acc /= len(masks)
    peak = acc.max()
    if peak <= 0:
        raise DataError("every mask is empty; the annotation map has no peak")
    return acc / peak


@dataclass
class CenterBias:
    aam: np.ndarray
    fit: GaussianFit

    @property
    def mu_offset_x(self) -> float:
        return self.fit.mu_x - (self.aam.shape[1] - 1) / 2

    @property
    def mu_offset_y(self) -> float:
        return self.fit.mu_y - (self.aam.shape[0] - 1) / 2

    @property
    def cbi(self) -> float:
        return self.fit.cbi


def center_bias(masks: Sequence[np.ndarray]) -> CenterBias:
    aam = average_annotation_map(masks)
    return CenterBias(aam, fit_gaussian(aam))


# ---------------------------------------------------------------- object size

def object_size(gt: np.ndarray) -> float:
    """Foreground area fraction."""
    m = _mask(gt)
    return float(m.sum() / m.size) if m.size else math.nan


# --------------------------------------------------------------- depth quality

def gray(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])


def sobel_edges(plane: np.ndarray, edge_threshold: float) -> np.ndarray:
    """Pixels whose Sobel magnitude exceeds edge_threshold * max magnitude."""
    p = np.asarray(plane, dtype=np.float64)
    mag = np.hypot(ndimage.sobel(p, axis=0), ndimage.sobel(p, axis=1))
    peak = mag.max()
    if peak <= 0:
        return np.zeros(p.shape, dtype=bool)
    return mag > edge_threshold * peak


def edge_mismatch_rate(depth_edges: np.ndarray, texture_edges: np.ndarray,
                       match_radius: int = 2) -> Optional[float]:
    """Fraction of depth-edge pixels with no texture edge within the
    Chebyshev radius. None when there are no depth edges.
    """
    d = np.asarray(depth_edges, dtype=bool)
    if not d.any():
        return None
    size = 2 * match_radius + 1
    near = ndimage.binary_dilation(np.asarray(texture_edges, dtype=bool),
                                   structure=np.ones((size, size), dtype=bool))
    return float((d & ~near).sum() / d.sum())


def depth_quality(rgb: np.ndarray, depth: np.ndarray, edge_threshold: float = 0.25,
                  match_radius: int = 2) -> Tuple[float, bool]:
    """Return (1 - mismatch rate, degenerate). Degenerate means no depth edges."""
    rgb = np.asarray(rgb)
    plane = gray(rgb) if rgb.ndim == 3 else rgb
    if plane.shape != np.asarray(depth).shape:
        raise DataError(f"rgb {plane.shape} and depth {np.asarray(depth).shape} differ in size")
    bpr = edge_mismatch_rate(sobel_edges(depth, edge_threshold),
                             sobel_edges(plane, edge_threshold), match_radius)
    if bpr is None:
        return 1.0, True
    return 1.0 - bpr, False


# --------------------------------------------------------------------- report

def _nanmean(vals: List[float]) -> float:
    v = [x for x in vals if not math.isnan(x)]
    return float(np.mean(v)) if v else math.nan


@dataclass
class StatsReport:
    dataset: str
    n_images: int
    rgc: float
    dgc: float
    ric: float
    dic: float
    cbi: float
    mu_offset_x: float
    mu_offset_y: float
    sigma_x: float
    sigma_y: float
    os: float
    dq: float
    undefined_contrast: int = 0
    degenerate_dq: int = 0
    fit_converged: bool = True
    aam: Optional[np.ndarray] = field(default=None, repr=False)

    def table(self) -> str:
        cols = ["dataset", "n_images", "RGC", "DGC", "RIC", "DIC", "CBI", "mu_dx", "mu_dy",
                "sigma_x", "sigma_y", "OS", "DQ"]
        vals = [self.rgc, self.dgc, self.ric, self.dic, self.cbi, self.mu_offset_x,
                self.mu_offset_y, self.sigma_x, self.sigma_y, self.os, self.dq]
        row = [self.dataset, str(self.n_images)] + [f"{v:.4f}" for v in vals]
        notes = (f"# undefined_contrast={self.undefined_contrast} degenerate_dq={self.degenerate_dq}"
                 f" fit_converged={str(self.fit_converged).lower()}")
        return ", ".join(cols) + "\n" + ", ".join(row) + "\n" + notes + "\n"


def dataset_stats(samples: Sequence[Sample], dataset: str = "dataset", normalized: bool = True,
                  edge_threshold: float = 0.25, match_radius: int = 2) -> StatsReport:
    if not samples:
        raise DataError("dataset is empty")
    rgc, dgc, ric, dic, sizes, dqs = [], [], [], [], [], []
    undefined = degenerate = 0
    for s in samples:
        if s.gt is None:
            raise DataError(f"{s.stem}: statistics need a ground truth mask")
        m = _mask(s.gt)
        vals = [chi2_contrast(s.rgb, m, normalized), chi2_contrast(s.depth, m, normalized),
                interior_contrast(s.rgb, m), interior_contrast(s.depth, m)]
        if any(math.isnan(v) for v in vals):
            undefined += 1
        for bucket, v in zip((rgc, dgc, ric, dic), vals):
            bucket.append(v)
        sizes.append(object_size(m))
        dq, degen = depth_quality(s.rgb, s.depth, edge_threshold, match_radius)
        degenerate += int(degen)
        dqs.append(dq)
    cb = center_bias([s.gt for s in samples])
    return StatsReport(dataset, len(samples), _nanmean(rgc), _nanmean(dgc), _nanmean(ric),
                       _nanmean(dic), cb.cbi, cb.mu_offset_x, cb.mu_offset_y, cb.fit.sigma_x,
                       cb.fit.sigma_y, float(np.mean(sizes)), float(np.mean(dqs)), undefined,
                       degenerate, cb.fit.converged, cb.aam)
