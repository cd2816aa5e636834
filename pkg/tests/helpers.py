"""Independent oracles used across the test suite.

These deliberately avoid the library's own kernels: convolution and pooling
are nested loops, softmax goes through mpmath, and gradients come from
central finite differences on the float64 path.
"""

import mpmath
import numpy as np

from nrt import tensor as T


def conv2d_loops(x, w, b, stride=1, padding=0):
    """Six-nested-loop cross-correlation, [C,H,W] single image."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, ho, wo), dtype=np.float64)
    for co in range(cout):
        for oh in range(ho):
            for ow in range(wo):
                acc = float(b[co])
                for ci in range(cin):
                    for p in range(kh):
                        for q in range(kw):
                            acc += float(xp[ci, oh * stride + p, ow * stride + q]) \
                                * float(w[co, ci, p, q])
                out[co, oh, ow] = acc
    return out


def maxpool_loops(x, window, stride):
    c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((c, ho, wo), dtype=x.dtype)
    for ci in range(c):
        for oh in range(ho):
            for ow in range(wo):
                out[ci, oh, ow] = x[ci, oh * stride:oh * stride + window,
                                    ow * stride:ow * stride + window].max()
    return out


def softmax_mpmath(z, dps=50):
    """Arbitrary-precision softmax."""
    with mpmath.workdps(dps):
        exps = [mpmath.e ** mpmath.mpf(float(v)) for v in z]
        total = sum(exps)
        return np.array([float(e / total) for e in exps])


def fd_gradient(f, x, eps=1e-5):
    """Central finite differences of scalar f at every entry of x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        gf[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * eps)
    return g


def analytic_input_gradient(f_tensor, x):
    """Gradient of a scalar-producing tensor function w.r.t. its input."""
    xt = T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True,
                  dtype=np.float64)
    with T.Tape():
        out = f_tensor(xt)
    T.backward(out)
    return xt.grad.copy()


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
