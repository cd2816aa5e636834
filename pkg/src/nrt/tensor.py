"""Dense tensors and tape-recorded reverse-mode differentiation.

Storage and compute default to float32; every primitive also runs end to end
in float64 so finite-difference checks can be done at full precision.
Reductions (losses, softmax normalizers) accumulate in float64 regardless of
the storage dtype. Convolution here means cross-correlation.

Gradients flow only while a :class:`Tape` is active::

    with Tape():
        logits = model.forward(x)      # x built with requires_grad=True
        z3 = pick(logits, 3)
    backward(z3)
    x.grad                              # d z3 / d x

Repeated ``backward`` calls accumulate into ``grad`` buffers; call
``zero_grad`` between independent computations.
"""

from __future__ import annotations

import threading
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .exceptions import GradientUsageError, ShapeError, ValidationError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """N-dimensional array of real values, optionally tracked on a tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional["Tape"] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the primitives applied during one forward pass.

    Each evaluation should own a private tape (enter a fresh ``Tape()``);
    tapes are single-use and reset simply by being dropped.
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def reset(self) -> None:
        self._records.clear()


def _maybe_record(out: Tensor, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._records.append((out, tuple(inputs), backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype)
    if t.grad is None:
        t.grad = g.reshape(t.data.shape).copy()
    else:
        t.grad += g.reshape(t.data.shape)


def backward(output: Tensor) -> None:
    """Fill ``grad`` of every tracked tensor with d(output)/d(tensor).

    ``output`` must be a scalar produced while a tape was active.
    """
    if output.size != 1:
        raise GradientUsageError(
            f"backward() needs a scalar output, got shape {output.shape}")
    tape = output.tape
    if tape is None:
        raise GradientUsageError(
            "output was not recorded on an active Tape (or requires no grad)")
    adjoint = {id(output): np.ones_like(output.data)}
    holders = {id(output): output}
    for out, inputs, fn in reversed(tape._records):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        holders.pop(id(out), None)
        _accumulate(out, g)
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in adjoint:
                adjoint[key] = adjoint[key] + gi
            else:
                adjoint[key] = gi
                holders[key] = t
    for key, t in holders.items():
        _accumulate(t, adjoint[key])


# ---------------------------------------------------------------------------
# primitives


def _with_batch(x: Tensor, ndim: int):
    """View ``x.data`` with a leading batch axis; report whether one was added."""
    if x.ndim == ndim:
        return x.data[None], True
    if x.ndim == ndim + 1:
        return x.data, False
    raise ShapeError(f"expected a {ndim}-d or batched {ndim + 1}-d tensor, "
                     f"got shape {x.shape}")


def conv2d(x: Tensor, kernels_t: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [C,H,W] (or [N,C,H,W]) input with [Cout,Cin,kh,kw] kernels."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValidationError(f"padding must be >= 0, got {padding}")
    if kernels_t.ndim != 4:
        raise ShapeError(f"kernels must be 4-d, got shape {kernels_t.shape}")
    x4, squeezed = _with_batch(x, 3)
    cout, cin, kh, kw = kernels_t.shape
    if x4.shape[1] != cin:
        raise ShapeError(f"kernels expect {cin} input channels, "
                         f"input has {x4.shape[1]}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    h, w = x4.shape[2], x4.shape[3]
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input "
                         f"{h + 2 * padding}x{w + 2 * padding}")
    y4 = kernels.conv2d_forward(x4, kernels_t.data, bias.data, stride, padding)
    out = Tensor(y4[0] if squeezed else y4)

    def grads(g):
        g4 = g[None] if squeezed else g
        dx, dw, db = kernels.conv2d_backward(
            x4, kernels_t.data, np.ascontiguousarray(g4), stride, padding,
            need_dx=x.requires_grad)
        if dx is not None and squeezed:
            dx = dx[0]
        return dx, dw, db

    return _maybe_record(out, (x, kernels_t, bias), grads)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weights @ x + bias`` for [n] or batched [N,n] input."""
    if weights.ndim != 2:
        raise ShapeError(f"weights must be 2-d, got shape {weights.shape}")
    m, n = weights.shape
    if bias.shape != (m,):
        raise ShapeError(f"bias must have shape ({m},), got {bias.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise ShapeError(f"input shape {x.shape} does not match weights "
                         f"{weights.shape}")
    xd = x.data
    y = xd @ weights.data.T + bias.data
    out = Tensor(y)

    def grads(g):
        if xd.ndim == 1:
            dx = g @ weights.data if x.requires_grad else None
            dw = np.outer(g, xd)
            db = g
        else:
            dx = g @ weights.data if x.requires_grad else None
            dw = g.T @ xd
            db = g.sum(axis=0)
        return dx, dw, db

    return _maybe_record(out, (x, weights, bias), grads)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, v); the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, x.data.dtype.type(0)))

    def grads(g):
        return (g * mask,)

    return _maybe_record(out, (x,), grads)


def maxpool2d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """Windowed maximum over [C,H,W] or [N,C,H,W]; gradient goes to the argmax."""
    if stride is None:
        stride = window
    if window < 1 or stride < 1:
        raise ValidationError("window and stride must be >= 1")
    x4, squeezed = _with_batch(x, 3)
    if window > x4.shape[2] or window > x4.shape[3]:
        raise ShapeError(f"window {window} exceeds input {x4.shape[2]}x{x4.shape[3]}")
    y4, switches = kernels.maxpool2d_forward(x4, window, stride)
    out = Tensor(y4[0] if squeezed else y4)

    def grads(g):
        g4 = g[None] if squeezed else g
        dx = kernels.maxpool2d_backward(np.ascontiguousarray(g4), switches, x4.shape)
        return (dx[0] if squeezed else dx,)

    return _maybe_record(out, (x,), grads)


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten; batched input keeps its leading axis."""
    if x.ndim == 4:
        y = x.data.reshape(x.shape[0], -1)
    else:
        y = x.data.reshape(-1)
    out = Tensor(y)

    def grads(g):
        return (g.reshape(x.shape),)

    return _maybe_record(out, (x,), grads)


def softmax(logits: Tensor) -> Tensor:
    """Max-shifted softmax along the last axis, computed in float64.

    The output is a probability vector: entries are nonnegative, sum to one
    within 1e-9, and are invariant to adding a constant to all logits.
    """
    if logits.size == 0:
        raise ValidationError("softmax needs at least one logit")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def grads(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return ((p * (g - inner)).astype(logits.data.dtype),)

    return _maybe_record(out, (logits,), grads)


def cross_entropy_loss(logits: Tensor, label) -> Tensor:
    """Mean negative log-likelihood in fused log-sum-exp form.

    ``logits`` is [K] with an int label, or [N,K] with a length-N label array
    (the batch mean is returned). The result is a float64 scalar.
    """
    z = logits.data
    if z.ndim == 1:
        z = z[None]
        labels = np.asarray([label])
    elif z.ndim == 2:
        labels = np.asarray(label)
        if labels.shape != (z.shape[0],):
            raise ShapeError(f"need {z.shape[0]} labels, got shape {labels.shape}")
    else:
        raise ShapeError(f"logits must be 1-d or 2-d, got shape {logits.shape}")
    k = z.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(f"label out of range for {k} classes: "
                         f"{labels.min()}..{labels.max()}")
    z64 = z.astype(np.float64)
    m = z64.max(axis=1)
    lse = m + np.log(np.exp(z64 - m[:, None]).sum(axis=1))
    picked = z64[np.arange(z.shape[0]), labels]
    out = Tensor(np.asarray((lse - picked).mean()))

    def grads(g):
        p = np.exp(z64 - lse[:, None])
        p[np.arange(z.shape[0]), labels] -= 1.0
        dz = (float(g) / z.shape[0]) * p
        dz = dz.astype(logits.data.dtype)
        return (dz[0] if logits.ndim == 1 else dz,)

    return _maybe_record(out, (logits,), grads)


def pick(x: Tensor, index: int) -> Tensor:
    """Scalar entry ``x[index]`` of a vector (used to turn a logit into a loss)."""
    if x.ndim != 1:
        raise ShapeError(f"pick needs a 1-d tensor, got shape {x.shape}")
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"index {index} out of range for length {x.shape[0]}")
    out = Tensor(np.asarray(x.data[index]))

    def grads(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return (dx,)

    return _maybe_record(out, (x,), grads)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data)

    def grads(g):
        return g, g

    return _maybe_record(out, (a, b), grads)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)
    out = Tensor(x.data * x.data.dtype.type(c))

    def grads(g):
        return (g * c,)

    return _maybe_record(out, (x,), grads)


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar (float64 accumulation)."""
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype))

    def grads(g):
        return (np.broadcast_to(g, x.shape),)

    return _maybe_record(out, (x,), grads)
