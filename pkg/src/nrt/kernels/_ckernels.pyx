# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-loop kernels; see nrt.kernels.numpy_backend for contracts."""

import numpy as np

cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline object _dtype_of(floating x):
    if floating is float:
        return np.float32
    return np.float64


cdef inline Py_ssize_t _ow_start(Py_ssize_t q, int stride, int padding) noexcept nogil:
    # smallest ow with ow*stride + q - padding >= 0
    if q >= padding:
        return 0
    return (padding - q + stride - 1) // stride


cdef inline Py_ssize_t _ow_stop(Py_ssize_t q, Py_ssize_t wd, Py_ssize_t wo,
                                int stride, int padding) noexcept nogil:
    # one past the largest ow with ow*stride + q - padding < wd
    cdef Py_ssize_t stop = (wd - 1 - q + padding) // stride + 1
    return stop if stop < wo else wo


def conv2d_forward(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                   const floating[::1] b, int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * padding - kw) // stride + 1
    out = np.empty((n, cout, ho, wo), dtype=_dtype_of(x[0, 0, 0, 0]))
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t i, co, ci, oh, ow, p, q, ih, ow0, ow1, xoff
    cdef floating wv
    # kernel-position-outer loops keep the inner ow loop contiguous on y
    with nogil:
        for i in range(n):
            for co in range(cout):
                for oh in range(ho):
                    for ow in range(wo):
                        y[i, co, oh, ow] = b[co]
                for ci in range(cin):
                    for p in range(kh):
                        for q in range(kw):
                            wv = w[co, ci, p, q]
                            ow0 = _ow_start(q, stride, padding)
                            ow1 = _ow_stop(q, wd, wo, stride, padding)
                            xoff = q - padding
                            for oh in range(ho):
                                ih = oh * stride + p - padding
                                if ih < 0 or ih >= h:
                                    continue
                                for ow in range(ow0, ow1):
                                    y[i, co, oh, ow] = y[i, co, oh, ow] + \
                                        wv * x[i, ci, ih, ow * stride + xoff]
    return out


def conv2d_backward(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                    const floating[:, :, :, ::1] dy, int stride, int padding,
                    bint need_dx=True):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dtype = _dtype_of(x[0, 0, 0, 0])
    dw_arr = np.zeros((cout, cin, kh, kw), dtype=dtype)
    db_arr = np.zeros(cout, dtype=dtype)
    dx_arr = np.zeros((n, cin, h, wd), dtype=dtype)
    cdef floating[:, :, :, ::1] dw = dw_arr
    cdef floating[::1] db = db_arr
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, co, ci, oh, ow, p, q, ih, ow0, ow1, xoff
    cdef floating g, acc, wv
    with nogil:
        for i in range(n):
            for co in range(cout):
                acc = 0
                for oh in range(ho):
                    for ow in range(wo):
                        acc = acc + dy[i, co, oh, ow]
                db[co] = db[co] + acc
                for ci in range(cin):
                    for p in range(kh):
                        for q in range(kw):
                            ow0 = _ow_start(q, stride, padding)
                            ow1 = _ow_stop(q, wd, wo, stride, padding)
                            xoff = q - padding
                            acc = 0
                            for oh in range(ho):
                                ih = oh * stride + p - padding
                                if ih < 0 or ih >= h:
                                    continue
                                for ow in range(ow0, ow1):
                                    acc = acc + dy[i, co, oh, ow] * \
                                        x[i, ci, ih, ow * stride + xoff]
                            dw[co, ci, p, q] = dw[co, ci, p, q] + acc
                            if need_dx:
                                wv = w[co, ci, p, q]
                                for oh in range(ho):
                                    ih = oh * stride + p - padding
                                    if ih < 0 or ih >= h:
                                        continue
                                    for ow in range(ow0, ow1):
                                        dx[i, ci, ih, ow * stride + xoff] = \
                                            dx[i, ci, ih, ow * stride + xoff] + \
                                            wv * dy[i, co, oh, ow]
    return (dx_arr if need_dx else None), dw_arr, db_arr


def maxpool2d_forward(const floating[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - window) // stride + 1
    cdef Py_ssize_t wo = (w - window) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=_dtype_of(x[0, 0, 0, 0]))
    sw_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = out
    cdef cnp.int64_t[:, :, :, ::1] sw = sw_arr
    cdef Py_ssize_t i, ci, oh, ow, p, q, ih, iw, best_idx
    cdef floating best
    with nogil:
        for i in range(n):
            for ci in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        best = x[i, ci, oh * stride, ow * stride]
                        best_idx = (oh * stride) * w + ow * stride
                        for p in range(window):
                            ih = oh * stride + p
                            for q in range(window):
                                iw = ow * stride + q
                                if x[i, ci, ih, iw] > best:
                                    best = x[i, ci, ih, iw]
                                    best_idx = ih * w + iw
                        y[i, ci, oh, ow] = best
                        sw[i, ci, oh, ow] = best_idx
    return out, sw_arr


def maxpool2d_backward(const floating[:, :, :, ::1] dy,
                       const cnp.int64_t[:, :, :, ::1] sw, tuple input_shape):
    cdef Py_ssize_t n = input_shape[0], c = input_shape[1]
    cdef Py_ssize_t h = input_shape[2], w = input_shape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dx_arr = np.zeros((n, c, h, w), dtype=_dtype_of(dy[0, 0, 0, 0]))
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, ci, oh, ow, idx
    with nogil:
        for i in range(n):
            for ci in range(c):
                for oh in range(ho):
                    for ow in range(wo):
                        idx = sw[i, ci, oh, ow]
                        dx[i, ci, idx // w, idx % w] = dx[i, ci, idx // w, idx % w] + dy[i, ci, oh, ow]
    return dx_arr
