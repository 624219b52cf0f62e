"""Pure-numpy convolution kernels (im2col + BLAS).

Fallback used when the compiled extension is unavailable or disabled via
DEFOG_PURE_PYTHON=1. Semantics match defog._ckernels: NCHW layout, zero
padding, float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """View of all receptive fields: (N, C, OH, OW, KH, KW)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    v = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    v = _windows(x, w.shape[2], w.shape[3], stride, pad)
    out = np.tensordot(v, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, OH, OW, F)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_weight(x: np.ndarray, gout: np.ndarray, stride: int, pad: int,
                       kh: int, kw: int) -> np.ndarray:
    v = _windows(x, kh, kw, stride, pad)
    # (N,F,OH,OW) x (N,C,OH,OW,KH,KW) -> (F,C,KH,KW)
    return np.tensordot(gout, v, axes=([0, 2, 3], [0, 2, 3]))


def conv2d_grad_input(gout: np.ndarray, w: np.ndarray, stride: int, pad: int,
                      h: int, wdt: int) -> np.ndarray:
    n = gout.shape[0]
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    oh, ow = gout.shape[2], gout.shape[3]
    # (N,F,OH,OW) x (F,C,KH,KW) -> (N,OH,OW,C,KH,KW)
    cols = np.tensordot(gout, w, axes=([1], [0]))
    gx = np.zeros((n, c, h + 2 * pad, wdt + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gx)
