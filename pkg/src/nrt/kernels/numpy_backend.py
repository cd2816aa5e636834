"""Pure-numpy kernels: im2col convolution and windowed pooling.

This is the fallback backend; :mod:`nrt.kernels._ckernels` implements the same
four functions as compiled direct loops. Contracts shared by both backends:

* arrays are C-contiguous float32 or float64, inputs batched as [N,C,H,W];
* convolution is cross-correlation (no kernel flip);
* max-pool ties resolve to the first position in row-major window order.

Results may differ between backends in the last floating-point bits (BLAS
reassociates sums); each backend on its own is bit-deterministic.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, kh, kw, stride, padding):
    """Return patches of ``x`` as (N, Ho*Wo, C*kh*kw) plus the output size."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols, (ho, wo)


def conv2d_forward(x, w, b, stride, padding):
    n = x.shape[0]
    cout = w.shape[0]
    cols, (ho, wo) = _im2col(x, w.shape[2], w.shape[3], stride, padding)
    y = cols @ w.reshape(cout, -1).T
    y += b
    return np.ascontiguousarray(y.transpose(0, 2, 1).reshape(n, cout, ho, wo))


def conv2d_backward(x, w, dy, stride, padding, need_dx=True):
    """Gradients of conv2d_forward; ``dx`` is skipped when not needed."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    cols, (ho, wo) = _im2col(x, kh, kw, stride, padding)
    dyr = dy.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (dyr.T @ cols.reshape(-1, cin * kh * kw)).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        dcols = (dyr @ w.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
        hp, wp = h + 2 * padding, wd + 2 * padding
        dxp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:hp - padding, padding:wp - padding] if padding else dxp
        dx = np.ascontiguousarray(dx)
    return dx, dw, db


def maxpool2d_forward(x, window, stride):
    """Windowed max plus int64 switches (flat H*W index of each argmax)."""
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(n, c, ho, wo, window * window)
    am = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]
    hi = am // window + (stride * np.arange(ho))[None, None, :, None]
    wi = am % window + (stride * np.arange(wo))[None, None, None, :]
    switches = (hi * w + wi).astype(np.int64)
    return np.ascontiguousarray(y), switches


def maxpool2d_backward(dy, switches, input_shape):
    n, c, h, w = input_shape
    dx = np.zeros((n * c, h * w), dtype=dy.dtype)
    rows = np.arange(n * c)[:, None]
    np.add.at(dx, (rows, switches.reshape(n * c, -1)), dy.reshape(n * c, -1))
    return dx.reshape(input_shape)
