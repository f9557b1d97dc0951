"""The gradient-check suite run by ``smac gradcheck`` and the tests.

Every case builds a small random instance and reduces its outputs to a
scalar with fixed random projection weights, so every output entry carries
a distinct, generic gradient. Attention blocks use one image, 2 channels and
a 4x4 grid. Blocks that contain the selective head run its batch norms in
eval mode with randomized running statistics: train-mode BN over the head's
few 1x1 positions produces gradients below the finite-difference noise
floor. Train-mode BN is checked on its own as an op.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from smac import attention as at
from smac import ops
from smac.gradcheck import GradcheckReport, gradcheck
from smac.tensor import Tensor

Case = Callable[[np.random.Generator], Tuple[Callable[[], Tensor], List[Tensor]]]


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _project(rng, outputs: Sequence[Tensor]) -> Callable[[Sequence[Tensor]], Tensor]:
    weights = [Tensor(rng.uniform(-1, 1, o.shape)) for o in outputs]

    def reduce(outs):
        terms = [ops.sum_all(ops.mul(o, w)) for o, w in zip(outs, weights)]
        total = terms[0]
        for t in terms[1:]:
            total = ops.add(total, t)
        return total

    return reduce


def _wrap(rng, make_outputs: Callable[[], Sequence[Tensor]], inputs: List[Tensor]):
    reduce = _project(rng, make_outputs())
    return (lambda: reduce(make_outputs())), inputs


def tensors_of(obj) -> List[Tensor]:
    """All Tensors inside a (nested) parameter dataclass, in field order."""
    if isinstance(obj, Tensor):
        return [obj]
    out = []
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out += tensors_of(getattr(obj, f.name))
    return out


def _randomize(rng, obj) -> None:
    for t in tensors_of(obj):
        t.data[...] = rng.uniform(-1, 1, t.shape)


def _randomize_bn(rng, obj) -> None:
    if isinstance(obj, at.BNParams):
        obj.running_mean[...] = rng.uniform(-0.5, 0.5, obj.running_mean.shape)
        obj.running_var[...] = rng.uniform(0.5, 1.5, obj.running_var.shape)
        obj.gamma.data[...] = rng.uniform(0.5, 1.5, obj.gamma.shape)
        obj.beta.data[...] = rng.uniform(-0.5, 0.5, obj.beta.shape)
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            _randomize_bn(rng, getattr(obj, f.name))


# -------------------------------------------------------------------- op cases

def _unary(op):
    def case(rng):
        x = _leaf(rng, (2, 3, 4))
        return _wrap(rng, lambda: [op(x)], [x])
    return case


def _binary(op):
    def case(rng):
        a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
        return _wrap(rng, lambda: [op(a, b)], [a, b])
    return case


def _reciprocal(rng):
    x = Tensor(rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), requires_grad=True)
    return _wrap(rng, lambda: [ops.reciprocal(x)], [x])


def _scale_tensor(rng):
    x, s = _leaf(rng, (2, 3, 2, 2)), _leaf(rng, (2, 1, 1, 1))
    return _wrap(rng, lambda: [ops.scale(x, s)], [x, s])


def _concat(rng):
    a, b = _leaf(rng, (2, 1, 3)), _leaf(rng, (2, 2, 3))
    return _wrap(rng, lambda: [ops.concat([a, b], axis=1)], [a, b])


def _positions(rng):
    x, y = _leaf(rng, (2, 3, 2, 3)), _leaf(rng, (2, 6, 3))
    return _wrap(rng, lambda: [ops.swap_last(ops.to_positions(x)), ops.from_positions(y, 2, 3)], [x, y])


def _reductions(rng):
    x = _leaf(rng, (3, 4))
    return _wrap(rng, lambda: [ops.reshape(ops.sum_all(x), (1,)), ops.reshape(ops.mean_all(x), (1,)),
                               ops.transpose(ops.reshape(x, (2, 6)), (1, 0))], [x])


def _matmul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    ba, bb = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 2))
    return _wrap(rng, lambda: [ops.matmul(a, b), ops.matmul(ba, bb), ops.matmul(ba, b)], [a, b, ba, bb])


def _linear(rng):
    x, w, b = _leaf(rng, (3, 4)), _leaf(rng, (2, 4)), _leaf(rng, (2,))
    return _wrap(rng, lambda: [ops.linear(x, w, b)], [x, w, b])


def _softmax(rng):
    x = _leaf(rng, (2, 3, 5), -2, 2)
    return _wrap(rng, lambda: [ops.softmax_rows(x)], [x])


def _conv(stride, dilation, k=3):
    def case(rng):
        x = _leaf(rng, (2, 2, 5, 5))
        w, b = _leaf(rng, (3, 2, k, k)), _leaf(rng, (3,))
        return _wrap(rng, lambda: [ops.conv2d(x, w, b, stride, dilation)], [x, w, b])
    return case


def _pool(kind):
    def case(rng):
        x = _leaf(rng, (2, 2, 5, 4))
        return _wrap(rng, lambda: [ops.pool(x, kind, 2, 2)], [x])
    return case


def _global_pool(rng):
    x = _leaf(rng, (2, 3, 3, 2))
    return _wrap(rng, lambda: [ops.global_avg_pool(x)], [x])


def _upsample(rng):
    x = _leaf(rng, (1, 2, 3, 2))
    return _wrap(rng, lambda: [ops.upsample_bilinear(x, 5, 4)], [x])


def _bn(train):
    def case(rng):
        x = _leaf(rng, (3, 2, 3, 3))
        g, b = _leaf(rng, (2,), 0.5, 1.5), _leaf(rng, (2,))
        rm, rv = rng.uniform(-0.5, 0.5, 2), rng.uniform(0.5, 1.5, 2)

        def out():
            # Running stats are copied so repeated evaluations see the same state.
            return [ops.batchnorm(x, g, b, rm.copy(), rv.copy(), train)]
        return _wrap(rng, out, [x, g, b])
    return case


def _bce(rng):
    p = _leaf(rng, (2, 1, 3, 3), 0.05, 0.95)
    t = (rng.random((2, 1, 3, 3)) > 0.5).astype(float)
    return (lambda: ops.bce(p, t)), [p]


OP_CASES: Dict[str, Case] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "scale": _unary(lambda x: ops.scale(x, -1.7)),
    "scale_tensor": _scale_tensor,
    "relu": _unary(ops.relu),
    "sigmoid": _unary(ops.sigmoid),
    "exp": _unary(ops.exp),
    "reciprocal": _reciprocal,
    "concat": _concat,
    "positions": _positions,
    "reshape_sum_mean": _reductions,
    "matmul": _matmul,
    "linear": _linear,
    "softmax_rows": _softmax,
    "conv2d_3x3": _conv(1, 1),
    "conv2d_stride2": _conv(2, 1),
    "conv2d_dilated": _conv(1, 2),
    "conv2d_1x1": _conv(1, 1, k=1),
    "max_pool": _pool("max"),
    "avg_pool": _pool("avg"),
    "global_avg_pool": _global_pool,
    "upsample_bilinear": _upsample,
    "batchnorm_train": _bn(True),
    "batchnorm_eval": _bn(False),
    "bce": _bce,
}


# ----------------------------------------------------------------- block cases

C, S = 2, 4


def _xs(rng):
    return _leaf(rng, (1, C, S, S)), _leaf(rng, (1, C, S, S))


def _mac(rng):
    p = at.MacParams.create(C, rng, zero_residual=False)
    _randomize(rng, p)
    return p


def _head(rng):
    s = at.SelectiveHeadParams.create(C, S, S, rng, down_channels=(4, 4), fc_hidden=4)
    _randomize_bn(rng, s)
    return s


def _nl_case(rng):
    x = _leaf(rng, (1, C, S, S))
    p = at.NlParams.create(C, rng, zero_residual=False)
    _randomize(rng, p)
    return _wrap(rng, lambda: [at.nl_block(x, p)], [x] + tensors_of(p))


def _mutual_case(rng):
    xr, xd = _xs(rng)
    p = _mac(rng)
    return _wrap(rng, lambda: at.mutual_attention(xr, xd, p)[:2], [xr, xd] + tensors_of(p))


def _contrast_case(rng):
    f = _leaf(rng, (1, S * S, S * S), -2, 2)
    t_raw = _leaf(rng, (1,), -0.5, 0.5)
    return _wrap(rng, lambda: [at.contrast_attention(f, ops.exp(t_raw))], [f, t_raw])


def _mac_case(rng):
    xr, xd = _xs(rng)
    p = _mac(rng)
    return _wrap(rng, lambda: at.mac_block(xr, xd, p), [xr, xd] + tensors_of(p))


def _alpha_case(rng):
    xr, xd = _xs(rng)
    s = _head(rng)
    return _wrap(rng, lambda: [at.selective_alpha(xr, xd, s, train=False)], [xr, xd] + tensors_of(s))


def _smac_case(rng):
    xr, xd = _xs(rng)
    p = _mac(rng)
    s = _head(rng)
    return _wrap(rng, lambda: at.smac_block(xr, xd, p, s, train=False),
                 [xr, xd] + tensors_of(p) + tensors_of(s))


def _sma_case(downsample):
    def case(rng):
        xr, xd = _xs(rng)
        p = _mac(rng)
        alpha = _leaf(rng, (1,), 0.1, 0.9)
        return _wrap(rng, lambda: at.sma_block(xr, xd, p.rgb, p.depth, alpha, downsample_kv=downsample),
                     [xr, xd, alpha] + tensors_of(p.rgb) + tensors_of(p.depth))
    return case


BLOCK_CASES: Dict[str, Case] = {
    "nl_block": _nl_case,
    "mutual_attention": _mutual_case,
    "contrast_attention": _contrast_case,
    "mac_block": _mac_case,
    "selective_alpha": _alpha_case,
    "smac_block": _smac_case,
    "sma_block": _sma_case(False),
    "sma_block_pooled_kv": _sma_case(True),
}


# ----------------------------------------------------------------------- suite

@dataclass
class SuiteRow:
    name: str
    kind: str
    seeds_passed: int
    seeds: int
    max_rel_err: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.seeds_passed == self.seeds


def check_case(case: Case, seed: int, h: float = 1e-6, tol: float = 1e-4) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    fn, inputs = case(rng)
    return gradcheck(fn, inputs, h=h, tol=tol)


def run_suite(seeds: Sequence[int] = range(5), h: float = 1e-6, tol: float = 1e-4,
              names: Sequence[str] = ()) -> List[SuiteRow]:
    rows = []
    for kind, cases in (("op", OP_CASES), ("block", BLOCK_CASES)):
        for name, case in cases.items():
            if names and name not in names:
                continue
            t0 = time.perf_counter()
            reports = [check_case(case, s, h, tol) for s in seeds]
            rows.append(SuiteRow(name, kind, sum(r.passed for r in reports), len(reports),
                                 max(r.max_rel_err for r in reports), time.perf_counter() - t0))
    return rows


def format_table(rows: Sequence[SuiteRow]) -> str:
    lines = [f"{'case':<22} {'kind':<6} {'seeds':>7} {'max_rel_err':>12}  result"]
    for r in rows:
        lines.append(f"{r.name:<22} {r.kind:<6} {r.seeds_passed:>3}/{r.seeds:<3} "
                     f"{r.max_rel_err:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
