# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled convolution/pooling kernels (NCHW float64, cross-correlation).

Same call surface as numpy_backend.  The conv loops hoist one weight
scalar per (kernel tap, channel pair) and run the output row/col loops
over precomputed valid ranges; the stride-1 case takes a row-pointer
path whose inner loop is branch-free and unit-stride in both operands,
which the C compiler turns into SIMD with a runtime overlap check.
"""

import numpy as np

NAME = "cython"


cdef inline Py_ssize_t _lo(Py_ssize_t kk, int pad, int stride) noexcept:
    # smallest output index whose input index kk + out*stride - pad >= 0
    if kk >= pad:
        return 0
    return (pad - kk + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t kk, Py_ssize_t extent, Py_ssize_t out_extent,
                           int pad, int stride) noexcept:
    # one past the largest output index with input index < extent
    cdef Py_ssize_t tmp = extent - 1 + pad - kk
    if tmp < 0:
        return 0
    tmp = tmp // stride + 1
    return out_extent if tmp > out_extent else tmp


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, b, int stride, int pad):
    cdef Py_ssize_t bs = x.shape[0], cin = x.shape[1], h = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (ww + 2 * pad - k) // stride + 1
    y_nd = np.zeros((bs, cout, ho, wo))
    if b is not None:
        y_nd += np.asarray(b).reshape(1, cout, 1, 1)
    cdef double[:, :, :, ::1] y = y_nd
    cdef Py_ssize_t n, co, ci, ki, kj, i, j, ilo, ihi, jlo, jhi, jbase
    cdef double wv
    cdef const double* xrow
    cdef double* yrow
    for n in range(bs):
        for co in range(cout):
            for ci in range(cin):
                for ki in range(k):
                    ilo = _lo(ki, pad, stride)
                    ihi = _hi(ki, h, ho, pad, stride)
                    for kj in range(k):
                        wv = w[co, ci, ki, kj]
                        if wv == 0.0:
                            continue
                        jlo = _lo(kj, pad, stride)
                        jhi = _hi(kj, ww, wo, pad, stride)
                        jbase = kj - pad
                        if stride == 1:
                            for i in range(ilo, ihi):
                                xrow = &x[n, ci, i + ki - pad, 0]
                                yrow = &y[n, co, i, 0]
                                for j in range(jlo, jhi):
                                    yrow[j] += wv * xrow[j + jbase]
                        else:
                            for i in range(ilo, ihi):
                                xrow = &x[n, ci, i * stride + ki - pad, 0]
                                yrow = &y[n, co, i, 0]
                                for j in range(jlo, jhi):
                                    yrow[j] += wv * xrow[j * stride + jbase]
    return y_nd


def conv2d_backward_input(const double[:, :, :, ::1] gy, const double[:, :, :, ::1] w,
                          Py_ssize_t h, Py_ssize_t ww, int stride, int pad):
    cdef Py_ssize_t bs = gy.shape[0], cout = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t cin = w.shape[1], k = w.shape[2]
    gx_nd = np.zeros((bs, cin, h, ww))
    cdef double[:, :, :, ::1] gx = gx_nd
    cdef Py_ssize_t n, co, ci, ki, kj, i, j, ilo, ihi, jlo, jhi, jbase
    cdef double wv
    cdef const double* gyrow
    cdef double* gxrow
    for n in range(bs):
        for ci in range(cin):
            for co in range(cout):
                for ki in range(k):
                    ilo = _lo(ki, pad, stride)
                    ihi = _hi(ki, h, ho, pad, stride)
                    for kj in range(k):
                        wv = w[co, ci, ki, kj]
                        if wv == 0.0:
                            continue
                        jlo = _lo(kj, pad, stride)
                        jhi = _hi(kj, ww, wo, pad, stride)
                        jbase = kj - pad
                        if stride == 1:
                            for i in range(ilo, ihi):
                                gxrow = &gx[n, ci, i + ki - pad, 0]
                                gyrow = &gy[n, co, i, 0]
                                for j in range(jlo, jhi):
                                    gxrow[j + jbase] += wv * gyrow[j]
                        else:
                            for i in range(ilo, ihi):
                                gxrow = &gx[n, ci, i * stride + ki - pad, 0]
                                gyrow = &gy[n, co, i, 0]
                                for j in range(jlo, jhi):
                                    gxrow[j * stride + jbase] += wv * gyrow[j]
    return gx_nd


def conv2d_backward_weight(const double[:, :, :, ::1] gy, const double[:, :, :, ::1] x,
                           Py_ssize_t k, int stride, int pad):
    cdef Py_ssize_t bs = x.shape[0], cin = x.shape[1], h = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t cout = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    gw_nd = np.zeros((cout, cin, k, k))
    cdef double[:, :, :, ::1] gw = gw_nd
    cdef Py_ssize_t n, co, ci, ki, kj, i, j, m, ilo, ihi, jlo, jhi, jbase
    cdef double a0, a1, a2, a3
    cdef const double* gyrow
    cdef const double* xrow
    for co in range(cout):
        for ci in range(cin):
            for ki in range(k):
                ilo = _lo(ki, pad, stride)
                ihi = _hi(ki, h, ho, pad, stride)
                for kj in range(k):
                    jlo = _lo(kj, pad, stride)
                    jhi = _hi(kj, ww, wo, pad, stride)
                    jbase = kj - pad
                    m = jhi - jlo
                    # four partial sums keep the FP adds independent
                    a0 = a1 = a2 = a3 = 0.0
                    for n in range(bs):
                        for i in range(ilo, ihi):
                            gyrow = &gy[n, co, i, 0] + jlo
                            if stride == 1:
                                xrow = &x[n, ci, i + ki - pad, 0] + jlo + jbase
                                for j in range(0, m - (m & 3), 4):
                                    a0 += gyrow[j] * xrow[j]
                                    a1 += gyrow[j + 1] * xrow[j + 1]
                                    a2 += gyrow[j + 2] * xrow[j + 2]
                                    a3 += gyrow[j + 3] * xrow[j + 3]
                                for j in range(m - (m & 3), m):
                                    a0 += gyrow[j] * xrow[j]
                            else:
                                xrow = &x[n, ci, i * stride + ki - pad, 0]
                                for j in range(m):
                                    a0 += gyrow[j] * xrow[(jlo + j) * stride + jbase]
                    gw[co, ci, ki, kj] = (a0 + a1) + (a2 + a3)
    return gw_nd


def dwconv2d_forward(const double[:, :, :, ::1] x, const double[:, :, ::1] w, b, int stride, int pad):
    cdef Py_ssize_t bs = x.shape[0], c = x.shape[1], h = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (ww + 2 * pad - k) // stride + 1
    y_nd = np.zeros((bs, c, ho, wo))
    if b is not None:
        y_nd += np.asarray(b).reshape(1, c, 1, 1)
    cdef double[:, :, :, ::1] y = y_nd
    cdef Py_ssize_t n, ci, ki, kj, i, j, ilo, ihi, jlo, jhi, jbase
    cdef double wv
    cdef const double* xrow
    cdef double* yrow
    for n in range(bs):
        for ci in range(c):
            for ki in range(k):
                ilo = _lo(ki, pad, stride)
                ihi = _hi(ki, h, ho, pad, stride)
                for kj in range(k):
                    wv = w[ci, ki, kj]
                    if wv == 0.0:
                        continue
                    jlo = _lo(kj, pad, stride)
                    jhi = _hi(kj, ww, wo, pad, stride)
                    jbase = kj - pad
                    if stride == 1:
                        for i in range(ilo, ihi):
                            xrow = &x[n, ci, i + ki - pad, 0]
                            yrow = &y[n, ci, i, 0]
                            for j in range(jlo, jhi):
                                yrow[j] += wv * xrow[j + jbase]
                    else:
                        for i in range(ilo, ihi):
                            xrow = &x[n, ci, i * stride + ki - pad, 0]
                            yrow = &y[n, ci, i, 0]
                            for j in range(jlo, jhi):
                                yrow[j] += wv * xrow[j * stride + jbase]
    return y_nd


def dwconv2d_backward_input(const double[:, :, :, ::1] gy, const double[:, :, ::1] w,
                            Py_ssize_t h, Py_ssize_t ww, int stride, int pad):
    cdef Py_ssize_t bs = gy.shape[0], c = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t k = w.shape[1]
    gx_nd = np.zeros((bs, c, h, ww))
    cdef double[:, :, :, ::1] gx = gx_nd
    cdef Py_ssize_t n, ci, ki, kj, i, j, ilo, ihi, jlo, jhi, jbase
    cdef double wv
    cdef const double* gyrow
    cdef double* gxrow
    for n in range(bs):
        for ci in range(c):
            for ki in range(k):
                ilo = _lo(ki, pad, stride)
                ihi = _hi(ki, h, ho, pad, stride)
                for kj in range(k):
                    wv = w[ci, ki, kj]
                    if wv == 0.0:
                        continue
                    jlo = _lo(kj, pad, stride)
                    jhi = _hi(kj, ww, wo, pad, stride)
                    jbase = kj - pad
                    if stride == 1:
                        for i in range(ilo, ihi):
                            gxrow = &gx[n, ci, i + ki - pad, 0]
                            gyrow = &gy[n, ci, i, 0]
                            for j in range(jlo, jhi):
                                gxrow[j + jbase] += wv * gyrow[j]
                    else:
                        for i in range(ilo, ihi):
                            gxrow = &gx[n, ci, i * stride + ki - pad, 0]
                            gyrow = &gy[n, ci, i, 0]
                            for j in range(jlo, jhi):
                                gxrow[j * stride + jbase] += wv * gyrow[j]
    return gx_nd


def dwconv2d_backward_weight(const double[:, :, :, ::1] gy, const double[:, :, :, ::1] x,
                             Py_ssize_t k, int stride, int pad):
    cdef Py_ssize_t bs = x.shape[0], c = x.shape[1], h = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    gw_nd = np.zeros((c, k, k))
    cdef double[:, :, ::1] gw = gw_nd
    cdef Py_ssize_t n, ci, ki, kj, i, j, m, ilo, ihi, jlo, jhi, jbase
    cdef double a0, a1, a2, a3
    cdef const double* gyrow
    cdef const double* xrow
    for ci in range(c):
        for ki in range(k):
            ilo = _lo(ki, pad, stride)
            ihi = _hi(ki, h, ho, pad, stride)
            for kj in range(k):
                jlo = _lo(kj, pad, stride)
                jhi = _hi(kj, ww, wo, pad, stride)
                jbase = kj - pad
                m = jhi - jlo
                a0 = a1 = a2 = a3 = 0.0
                for n in range(bs):
                    for i in range(ilo, ihi):
                        gyrow = &gy[n, ci, i, 0] + jlo
                        if stride == 1:
                            xrow = &x[n, ci, i + ki - pad, 0] + jlo + jbase
                            for j in range(0, m - (m & 3), 4):
                                a0 += gyrow[j] * xrow[j]
                                a1 += gyrow[j + 1] * xrow[j + 1]
                                a2 += gyrow[j + 2] * xrow[j + 2]
                                a3 += gyrow[j + 3] * xrow[j + 3]
                            for j in range(m - (m & 3), m):
                                a0 += gyrow[j] * xrow[j]
                        else:
                            xrow = &x[n, ci, i * stride + ki - pad, 0]
                            for j in range(m):
                                a0 += gyrow[j] * xrow[(jlo + j) * stride + jbase]
                gw[ci, ki, kj] = (a0 + a1) + (a2 + a3)
    return gw_nd


def maxpool2x2_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t bs = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    y_nd = np.empty((bs, c, ho, wo))
    arg_nd = np.empty((bs, c, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_nd
    cdef long long[:, :, :, ::1] arg = arg_nd
    cdef Py_ssize_t n, ci, i, j, di, dj, best
    cdef double v, m
    for n in range(bs):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    m = x[n, ci, 2 * i, 2 * j]
                    best = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[n, ci, 2 * i + di, 2 * j + dj]
                            if v > m:  # strict: ties keep the earliest cell
                                m = v
                                best = 2 * di + dj
                    y[n, ci, i, j] = m
                    arg[n, ci, i, j] = best
    return y_nd, arg_nd


def maxpool2x2_backward(const double[:, :, :, ::1] gy, const long long[:, :, :, ::1] arg):
    cdef Py_ssize_t bs = gy.shape[0], c = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    gx_nd = np.zeros((bs, c, ho * 2, wo * 2))
    cdef double[:, :, :, ::1] gx = gx_nd
    cdef Py_ssize_t n, ci, i, j, a
    for n in range(bs):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    a = arg[n, ci, i, j]
                    gx[n, ci, 2 * i + a // 2, 2 * j + a % 2] = gy[n, ci, i, j]
    return gx_nd
