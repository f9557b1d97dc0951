# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror smac._kernels_py exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(double[:, :, :, ::1] x, int k, int stride, int dilation, int pad,
           int out_h, int out_w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out = np.zeros((n, c * k * k, out_h * out_w), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, row, r, s
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oi in range(out_h):
                            r = oi * stride + ki * dilation - pad
                            if r < 0 or r >= h:
                                continue
                            for oj in range(out_w):
                                s = oj * stride + kj * dilation - pad
                                if s < 0 or s >= w:
                                    continue
                                cols[b, row, oi * out_w + oj] = x[b, ch, r, s]
    return out


def col2im(cols_in, shape, int k, int stride, int dilation, int pad,
           int out_h, int out_w):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef double[:, :, ::1] cols = np.ascontiguousarray(
        cols_in, dtype=np.float64).reshape(n, c * k * k, out_h * out_w)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] x = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, row, r, s
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oi in range(out_h):
                            r = oi * stride + ki * dilation - pad
                            if r < 0 or r >= h:
                                continue
                            for oj in range(out_w):
                                s = oj * stride + kj * dilation - pad
                                if s < 0 or s >= w:
                                    continue
                                x[b, ch, r, s] += cols[b, row, oi * out_w + oj]
    return out


def maxpool_forward(double[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t out_h = (h - k) // stride + 1
    cdef Py_ssize_t out_w = (w - k) // stride + 1
    out = np.empty((n, c, out_h, out_w), dtype=np.float64)
    idx = np.empty((n, c, out_h, out_w), dtype=np.int64)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = idx
    cdef Py_ssize_t b, ch, oi, oj, ki, kj, r, s, best_i
    cdef double best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oi in range(out_h):
                    for oj in range(out_w):
                        r = oi * stride
                        s = oj * stride
                        best = x[b, ch, r, s]
                        best_i = r * w + s
                        for ki in range(k):
                            for kj in range(k):
                                v = x[b, ch, r + ki, s + kj]
                                # strict > keeps the first (lowest-index) maximum
                                if v > best:
                                    best = v
                                    best_i = (r + ki) * w + s + kj
                        o[b, ch, oi, oj] = best
                        a[b, ch, oi, oj] = best_i
    return out, idx


def maxpool_backward(grad_out, argidx, shape):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef cnp.int64_t[:, :, :, ::1] a = np.ascontiguousarray(argidx, dtype=np.int64)
    out = np.zeros((n, c, h * w), dtype=np.float64)
    cdef double[:, :, ::1] d = out
    cdef Py_ssize_t b, ch, oi, oj
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oi in range(g.shape[2]):
                    for oj in range(g.shape[3]):
                        d[b, ch, a[b, ch, oi, oj]] += g[b, ch, oi, oj]
    return out.reshape(n, c, h, w)
