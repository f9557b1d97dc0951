"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from smac.tensor import Tensor, backward


@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: Optional[tuple] = None  # (input index, flat index, analytic, numeric)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-6,
              tol: float = 1e-4, sample: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> GradcheckReport:
    """Compare analytic gradients of the scalar ``fn()`` with central differences.

    ``fn`` is a closure that reads the current values of ``inputs``. The
    relative error of each entry is ``|a - n| / max(|a|, |n|, 1e-8)``. With
    ``sample`` set, only that many (input, entry) pairs are perturbed, drawn
    uniformly without replacement.
    """
    for t in inputs:
        t.grad = np.zeros_like(t.data)
    backward(fn())
    analytic = [t.grad.copy() for t in inputs]

    coords = [(i, j) for i, t in enumerate(inputs) for j in range(t.size)]
    if sample is not None and sample < len(coords):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[p] for p in sorted(pick)]

    worst_err, worst = 0.0, None
    for i, j in coords:
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        f_plus = fn().item()
        flat[j] = orig - h
        f_minus = fn().item()
        flat[j] = orig
        num = (f_plus - f_minus) / (2.0 * h)
        ana = analytic[i].reshape(-1)[j]
        err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        if err > worst_err or worst is None:
            worst_err, worst = err, (i, j, ana, num)
    return GradcheckReport(worst_err, bool(worst_err <= tol), len(coords), worst)
