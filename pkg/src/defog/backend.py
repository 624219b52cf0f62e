"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or DEFOG_PURE_PYTHON=1 is set.
"""

import os

from . import _npkernels

if os.environ.get("DEFOG_PURE_PYTHON"):
    _impl = _npkernels
    KERNEL_BACKEND = "numpy"
else:
    try:
        from . import _ckernels as _impl
        KERNEL_BACKEND = "cython"
    except ImportError:
        _impl = _npkernels
        KERNEL_BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
