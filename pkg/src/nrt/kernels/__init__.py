"""Hot-loop kernels: compiled Cython core plus a pure-numpy fallback.

Selection happens at import time. The default ("auto") routes each kernel
family to whichever implementation wins on this machine per
benchmarks/bench_kernels.py: convolution goes to the numpy im2col path (BLAS
matmul beats hand-written loops for these shapes) while pooling goes to the
compiled loops (an order of magnitude faster than the numpy windowing).

Set NRT_KERNELS=numpy (or python) to force the pure-numpy fallback, and
NRT_KERNELS=cython to force the compiled kernels everywhere. ``BACKEND``
names the active selection: "mixed", "numpy", or "cython".
"""

import os

from . import numpy_backend

_compiled = None
try:
    from . import _ckernels as _compiled
except ImportError:
    pass

_mode = os.environ.get("NRT_KERNELS", "auto").lower()

if _compiled is None or _mode in ("numpy", "python"):
    _conv, _pool = numpy_backend, numpy_backend
    BACKEND = "numpy"
elif _mode == "cython":
    _conv, _pool = _compiled, _compiled
    BACKEND = "cython"
else:
    _conv, _pool = numpy_backend, _compiled
    BACKEND = "mixed"

conv2d_forward = _conv.conv2d_forward
conv2d_backward = _conv.conv2d_backward
maxpool2d_forward = _pool.maxpool2d_forward
maxpool2d_backward = _pool.maxpool2d_backward


def available_backends():
    """Importable backend modules keyed by name."""
    backends = {"numpy": numpy_backend}
    if _compiled is not None:
        backends["cython"] = _compiled
    return backends
