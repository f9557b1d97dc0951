"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each row times one kernel on both backends (best of ``repeat`` runs) and
checks that the two agree exactly.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from smac import _kernels_py, kernels, ops
from smac.tensor import Parameter, Tensor, backward

# (name, N, C, H, W, k, stride, dilation, pad) sized like the toy network layers
CONV_SHAPES = [
    ("conv 3x3 64px", 4, 16, 64, 64, 3, 1, 1, 1),
    ("conv 3x3 dil2 8px", 4, 48, 8, 8, 3, 1, 2, 2),
    ("conv 3x3 stride2", 4, 32, 32, 32, 3, 2, 1, 1),
]
POOL_SHAPES = [("maxpool 2x2 64px", 4, 16, 64, 64), ("maxpool 2x2 16px", 4, 48, 16, 16)]


def _best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _conv_step(x, w):
    out = ops.conv2d(x, w, None, 1, 1)
    backward(ops.sum_all(out))


def bench(repeat):
    try:
        from smac import _kernels_cy
    except ImportError:
        print("compiled kernels not built; nothing to compare", file=sys.stderr)
        return []
    rng = np.random.default_rng(0)
    rows = []

    def add(name, py_fn, cy_fn, same):
        t_py, t_cy = _best(py_fn, repeat), _best(cy_fn, repeat)
        rows.append({"kernel": name, "python_ms": 1e3 * t_py, "cython_ms": 1e3 * t_cy,
                     "speedup": t_py / t_cy, "identical": bool(same)})

    for name, n, c, h, w, k, s, d, p in CONV_SHAPES:
        x = rng.normal(size=(n, c, h, w))
        oh = (h + 2 * p - d * (k - 1) - 1) // s + 1
        ow = (w + 2 * p - d * (k - 1) - 1) // s + 1
        args = (k, s, d, p, oh, ow)
        a = _kernels_py.im2col(x, *args)
        b = _kernels_cy.im2col(x, *args)
        add(f"im2col {name}", lambda: _kernels_py.im2col(x, *args),
            lambda: _kernels_cy.im2col(x, *args), np.array_equal(a, b))
        cols = rng.normal(size=a.shape)
        a = _kernels_py.col2im(cols, x.shape, *args)
        b = _kernels_cy.col2im(cols, x.shape, *args)
        add(f"col2im {name}", lambda: _kernels_py.col2im(cols, x.shape, *args),
            lambda: _kernels_cy.col2im(cols, x.shape, *args), np.allclose(a, b, rtol=0, atol=1e-12))

    for name, n, c, h, w in POOL_SHAPES:
        x = rng.normal(size=(n, c, h, w))
        (va, ia), (vb, ib) = _kernels_py.maxpool_forward(x, 2, 2), _kernels_cy.maxpool_forward(x, 2, 2)
        add(f"{name} fwd", lambda: _kernels_py.maxpool_forward(x, 2, 2),
            lambda: _kernels_cy.maxpool_forward(x, 2, 2),
            np.array_equal(va, vb) and np.array_equal(ia, ib))
        g = rng.normal(size=va.shape)
        add(f"{name} bwd", lambda: _kernels_py.maxpool_backward(g, ia, x.shape),
            lambda: _kernels_cy.maxpool_backward(g, ia, x.shape),
            np.array_equal(_kernels_py.maxpool_backward(g, ia, x.shape),
                           _kernels_cy.maxpool_backward(g, ia, x.shape)))

    # whole conv layer forward + backward through the autodiff engine
    x = Tensor(rng.normal(size=(4, 16, 64, 64)))
    wt = Parameter(rng.normal(size=(16, 16, 3, 3)) * 0.1)
    timings, grads = {}, {}
    previous = kernels.BACKEND
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        wt.zero_grad()
        _conv_step(x, wt)
        grads[backend] = wt.grad.copy()
        timings[backend] = _best(lambda: _conv_step(x, wt), repeat)
    kernels.use_backend(previous)
    rows.append({"kernel": "conv2d layer fwd+bwd 64px", "python_ms": 1e3 * timings["python"],
                 "cython_ms": 1e3 * timings["cython"],
                 "speedup": timings["python"] / timings["cython"],
                 "identical": bool(np.allclose(grads["python"], grads["cython"], rtol=1e-12))})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)
    rows = bench(args.repeat)
    if not rows:
        return 1
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'python ms':>10}  {'cython ms':>10}  {'speedup':>8}  match")
    for r in rows:
        print(f"{r['kernel']:<{width}}  {r['python_ms']:10.3f}  {r['cython_ms']:10.3f}  "
              f"{r['speedup']:7.2f}x  {'yes' if r['identical'] else 'NO'}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["identical"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
