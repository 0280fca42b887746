"""Kernel backend selection.

The convolution/pooling hot loops exist twice: a compiled Cython
extension (`richunet.kernels._cpu`) and a pure-numpy implementation
with the same call surface.  Neither wins everywhere: dense conv2d is
fastest through numpy's im2col + BLAS matmul, while the depthwise and
pooling kernels are fastest as compiled loops (see
benchmarks/bench_kernels.py).  `RICHUNET_KERNELS` picks the backend at
import time:

    auto    best kernel per op when the extension is available
            (conv2d via numpy, depthwise/pooling compiled); plain
            numpy otherwise (default)
    cython  the compiled extension for everything, fail loudly if missing
    numpy   the numpy implementation for everything

`backend.NAME` reports which one is live.
"""

import os

from ..errors import ConfigError
from . import numpy_backend


class _Hybrid:
    """Per-kernel dispatch: BLAS-backed dense conv, compiled the rest."""

    NAME = "hybrid"

    def __init__(self, np_bk, cy_bk):
        self.conv2d_forward = np_bk.conv2d_forward
        self.conv2d_backward_input = np_bk.conv2d_backward_input
        self.conv2d_backward_weight = np_bk.conv2d_backward_weight
        self.dwconv2d_forward = cy_bk.dwconv2d_forward
        self.dwconv2d_backward_input = cy_bk.dwconv2d_backward_input
        self.dwconv2d_backward_weight = cy_bk.dwconv2d_backward_weight
        self.maxpool2x2_forward = cy_bk.maxpool2x2_forward
        self.maxpool2x2_backward = cy_bk.maxpool2x2_backward


_choice = os.environ.get("RICHUNET_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ConfigError(
        f"RICHUNET_KERNELS must be auto, cython or numpy, got {_choice!r}"
    )

backend = None
if _choice in ("auto", "cython"):
    try:
        from . import _cpu
    except ImportError:
        if _choice == "cython":
            raise ConfigError(
                "RICHUNET_KERNELS=cython but the compiled extension is not "
                "importable; rebuild the package or use RICHUNET_KERNELS=numpy"
            ) from None
    else:
        backend = _cpu if _choice == "cython" else _Hybrid(numpy_backend, _cpu)
if backend is None:
    backend = numpy_backend


def get_backend(name=None):
    """Fetch a backend by name ('numpy' or 'cython'); None gives the live one."""
    if name is None:
        return backend
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _cpu

        return _cpu
    raise ConfigError(f"unknown kernel backend {name!r}")
