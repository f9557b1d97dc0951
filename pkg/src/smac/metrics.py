"""Saliency evaluation: MAE, max F-measure, S-measure and E-measure.

Predictions are real maps in [0, 1]; ground truths are binary. Threshold
sweeps binarize with ``pred >= t / 255`` for t = 1..255.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from smac.errors import DataError
from smac.resample import resize_bilinear

EPS = np.finfo(np.float64).eps
BETA2 = 0.3
THRESHOLDS = np.arange(1, 256) / 255.0


def _pair(pred, gt):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise DataError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    if g.dtype == np.bool_:
        return p, g
    return p, np.asarray(g, dtype=np.float64) >= 0.5


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


def f_measure(precision: float, recall: float, beta2: float = BETA2) -> float:
    if precision == 0 and recall == 0:
        return 0.0
    return (1 + beta2) * precision * recall / (beta2 * precision + recall)


def max_f_measure(pred, gt, beta2: float = BETA2) -> float:
    """Best F over the 255 thresholds; NaN when gt has no positive pixel."""
    p, g = _pair(pred, gt)
    n_fg = int(g.sum())
    if n_fg == 0:
        return math.nan
    all_sorted = np.sort(p.ravel())
    fg_sorted = np.sort(p[g])
    n_pred = all_sorted.size - np.searchsorted(all_sorted, THRESHOLDS, side="left")
    tp = fg_sorted.size - np.searchsorted(fg_sorted, THRESHOLDS, side="left")
    best = 0.0
    for n, t in zip(n_pred, tp):
        if n == 0 or t == 0:
            continue
        best = max(best, f_measure(t / n, t / n_fg, beta2))
    return float(best)


# ------------------------------------------------------------------ S-measure

def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    fg = _object_score(p[g])
    bg = _object_score(1.0 - p[~g])
    return u * fg + (1 - u) * bg


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    sx = ((p - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def _centroid(g: np.ndarray):
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return math.floor(w / 2 + 0.5), math.floor(h / 2 + 0.5)
    cols = np.arange(1, w + 1)
    rows = np.arange(1, h + 1)
    x = math.floor((g.sum(axis=0) * cols).sum() / total + 0.5)
    y = math.floor((g.sum(axis=1) * rows).sum() / total + 0.5)
    return x, y


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    x, y = _centroid(g)
    gf = g.astype(np.float64)
    score = 0.0
    for rs in (slice(0, y), slice(y, h)):
        for cs in (slice(0, x), slice(x, w)):
            block_g = gf[rs, cs]
            if block_g.size == 0:
                continue
            score += block_g.size / (h * w) * _ssim(p[rs, cs], block_g)
    return score


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: object- and region-level similarity, clamped at 0.

    An all-background gt scores 1 - mean(pred); all-foreground scores mean(pred).
    """
    p, g = _pair(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1.0 - p.mean())
    if y == 1:
        return float(p.mean())
    q = alpha * _s_object(p, g) + (1 - alpha) * _s_region(p, g)
    return float(max(q, 0.0))


# ------------------------------------------------------------------ E-measure

def enhanced_alignment(binary: np.ndarray, g: np.ndarray) -> float:
    """E for one binary prediction against a binary gt."""
    fm = binary.astype(np.float64)
    gf = g.astype(np.float64)
    if g.sum() == 0:
        enhanced = 1.0 - fm
    elif (~g).sum() == 0:
        enhanced = fm
    else:
        a_fm = fm - fm.mean()
        a_gt = gf - gf.mean()
        xi = 2.0 * a_gt * a_fm / (a_gt * a_gt + a_fm * a_fm + EPS)
        enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure(pred, gt) -> float:
    """Max enhanced-alignment score over the 255 binarization thresholds."""
    p, g = _pair(pred, gt)
    best = 0.0
    prev = None
    for t in THRESHOLDS:
        b = p >= t
        if prev is not None and np.array_equal(b, prev):
            continue
        prev = b
        best = max(best, enhanced_alignment(b, g))
    return best


# --------------------------------------------------------------------- report

@dataclass
class ImageScores:
    stem: str
    s_measure: float
    max_f: float
    e_measure: float
    mae: float


@dataclass
class MetricsReport:
    dataset: str
    images: List[ImageScores] = field(default_factory=list)

    @property
    def n_images(self) -> int:
        return len(self.images)

    def _mean(self, attr: str) -> float:
        vals = [getattr(s, attr) for s in self.images if not math.isnan(getattr(s, attr))]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def means(self) -> Dict[str, float]:
        return {"Sm": self._mean("s_measure"), "maxF": self._mean("max_f"),
                "E": self._mean("e_measure"), "MAE": self._mean("mae")}

    @property
    def undefined_max_f(self) -> int:
        return sum(1 for s in self.images if math.isnan(s.max_f))

    def table(self) -> str:
        m = self.means
        return ("dataset, n_images, Sm, maxF, E, MAE\n"
                f"{self.dataset}, {self.n_images}, {m['Sm']:.6f}, {m['maxF']:.6f}, "
                f"{m['E']:.6f}, {m['MAE']:.6f}\n")

    def detail(self) -> str:
        lines = ["stem, Sm, maxF, E, MAE"]
        for s in self.images:
            lines.append(f"{s.stem}, {s.s_measure:.6f}, {s.max_f:.6f}, {s.e_measure:.6f}, {s.mae:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_pair(pred, gt, stem: str = "") -> ImageScores:
    """Score one prediction, resizing it bilinearly to the gt size if needed."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt)
    if p.ndim != 2 or g.ndim != 2:
        raise DataError(f"{stem}: expected 2-D maps, got {p.shape} and {g.shape}")
    if p.shape != g.shape:
        p = np.clip(resize_bilinear(p, *g.shape), 0.0, 1.0)
    return ImageScores(stem, s_measure(p, g), max_f_measure(p, g), e_measure(p, g), mae(p, g))


def evaluate(preds: Dict[str, np.ndarray], gts: Dict[str, np.ndarray], dataset: str = "dataset",
             stems: Optional[List[str]] = None) -> MetricsReport:
    """Per-image scores over matching stems; means are over images."""
    stems = sorted(gts) if stems is None else stems
    report = MetricsReport(dataset)
    for stem in stems:
        if stem not in preds:
            raise DataError(f"no prediction for {stem!r}")
        report.images.append(evaluate_pair(preds[stem], gts[stem], stem))
    return report
