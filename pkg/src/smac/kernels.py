"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is used. Set ``SMAC_KERNELS=python`` to force the fallback.
"""

import os

from smac import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SMAC_KERNELS", "").lower() != "python":
    try:
        from smac import _kernels_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def use_backend(name: str) -> None:
    """Switch backends at runtime (``"cython"`` or ``"python"``)."""
    global _impl, BACKEND
    if name == "python":
        _impl = _kernels_py
    elif name == "cython":
        from smac import _kernels_cy

        _impl = _kernels_cy
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name


def available_backends() -> list:
    names = ["python"]
    try:
        from smac import _kernels_cy  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def im2col(x, k, stride, dilation, pad, out_h, out_w):
    return _impl.im2col(x, k, stride, dilation, pad, out_h, out_w)


def col2im(cols, shape, k, stride, dilation, pad, out_h, out_w):
    return _impl.col2im(cols, shape, k, stride, dilation, pad, out_h, out_w)


def maxpool_forward(x, k, stride):
    return _impl.maxpool_forward(x, k, stride)


def maxpool_backward(grad_out, argidx, shape):
    return _impl.maxpool_backward(grad_out, argidx, shape)
