# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels: fused im2col packing + BLAS dgemm.

NCHW layout, zero padding, float64. Batch items are processed sequentially
and each dgemm call is an independent product, so results are reproducible
run to run on a given platform.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


cdef inline Py_ssize_t _lo(Py_ssize_t k, int pad, int stride) nogil:
    return 0 if pad <= k else (pad - k + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t k, Py_ssize_t extent, int pad, int stride,
                           Py_ssize_t limit) nogil:
    cdef Py_ssize_t v = (extent - 1 - k + pad) // stride + 1
    return limit if v > limit else v


cdef void _pack_cols(double[:, :, :, ::1] x, Py_ssize_t ni, double[:, ::1] cols,
                     Py_ssize_t kh, Py_ssize_t kw, int stride, int pad,
                     Py_ssize_t oh, Py_ssize_t ow) nogil:
    """cols[(ci*kh+ki)*kw+kj, oi*ow+oj] = padded x at the receptive offset."""
    cdef Py_ssize_t c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ci, ki, kj, oi, oj, ii, r, lo_i, hi_i, lo_j, hi_j
    cdef double* colp
    cdef double* xp
    for ci in range(c):
        for ki in range(kh):
            lo_i = _lo(ki, pad, stride)
            hi_i = _hi(ki, h, pad, stride, oh)
            for kj in range(kw):
                lo_j = _lo(kj, pad, stride)
                hi_j = _hi(kj, wd, pad, stride, ow)
                r = (ci * kh + ki) * kw + kj
                for oi in range(lo_i, hi_i):
                    ii = oi * stride + ki - pad
                    colp = &cols[r, oi * ow]
                    xp = &x[ni, ci, ii, 0]
                    for oj in range(lo_j, hi_j):
                        colp[oj] = xp[oj * stride + kj - pad]


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t k = x.shape[1] * kh * kw, l = oh * ow
    out_arr = np.empty((n, f, oh, ow))
    cols_arr = np.zeros((k, l))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, :, ::1] out = out_arr
    cdef double alpha = 1.0, beta = 0.0
    cdef int M = <int> l, N = <int> f, K = <int> k
    cdef int lda = <int> l, ldb = <int> k, ldc = <int> l
    cdef Py_ssize_t ni
    for ni in range(n):
        if pad:
            cols_arr.fill(0.0)
        _pack_cols(x, ni, cols, kh, kw, stride, pad, oh, ow)
        # row-major out[ni] (f x l) = W (f x k) @ cols (k x l)
        dgemm("N", "N", &M, &N, &K, &alpha, &cols[0, 0], &lda,
              &w[0, 0, 0, 0], &ldb, &beta, &out[ni, 0, 0, 0], &ldc)
    return out_arr


def conv2d_grad_weight(double[:, :, :, ::1] x, double[:, :, :, ::1] gout,
                       int stride, int pad, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t k = x.shape[1] * kh * kw, l = oh * ow
    gw_arr = np.zeros((f, x.shape[1], kh, kw))
    cols_arr = np.zeros((k, l))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double alpha = 1.0, beta = 1.0
    cdef int M = <int> k, N = <int> f, K = <int> l
    cdef int lda = <int> l, ldb = <int> l, ldc = <int> k
    cdef Py_ssize_t ni
    for ni in range(n):
        if pad:
            cols_arr.fill(0.0)
        _pack_cols(x, ni, cols, kh, kw, stride, pad, oh, ow)
        # row-major gw (f x k) += gout[ni] (f x l) @ cols^T (l x k)
        dgemm("T", "N", &M, &N, &K, &alpha, &cols[0, 0], &lda,
              &gout[ni, 0, 0, 0], &ldb, &beta, &gw[0, 0, 0, 0], &ldc)
    return gw_arr


def conv2d_grad_input(double[:, :, :, ::1] gout, double[:, :, :, ::1] w,
                      int stride, int pad, Py_ssize_t h, Py_ssize_t wd):
    cdef Py_ssize_t n = gout.shape[0], f = gout.shape[1]
    cdef Py_ssize_t oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t k = c * kh * kw, l = oh * ow
    gx_arr = np.zeros((n, c, h, wd))
    cols_arr = np.empty((k, l))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double alpha = 1.0, beta = 0.0
    cdef int M = <int> l, N = <int> k, K = <int> f
    cdef int lda = <int> l, ldb = <int> k, ldc = <int> l
    cdef Py_ssize_t ni, ci, ki, kj, oi, oj, ii, r, lo_i, hi_i, lo_j, hi_j
    cdef double* colp
    cdef double* gp
    for ni in range(n):
        # row-major cols (k x l) = W^T (k x f) @ gout[ni] (f x l)
        dgemm("N", "T", &M, &N, &K, &alpha, &gout[ni, 0, 0, 0], &lda,
              &w[0, 0, 0, 0], &ldb, &beta, &cols[0, 0], &ldc)
        # col2im scatter-add back into the input grad
        for ci in range(c):
            for ki in range(kh):
                lo_i = _lo(ki, pad, stride)
                hi_i = _hi(ki, h, pad, stride, oh)
                for kj in range(kw):
                    lo_j = _lo(kj, pad, stride)
                    hi_j = _hi(kj, wd, pad, stride, ow)
                    r = (ci * kh + ki) * kw + kj
                    for oi in range(lo_i, hi_i):
                        ii = oi * stride + ki - pad
                        colp = &cols[r, oi * ow]
                        gp = &gx[ni, ci, ii, 0]
                        for oj in range(lo_j, hi_j):
                            gp[oj * stride + kj - pad] += colp[oj]
    return gx_arr
