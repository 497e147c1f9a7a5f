# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: convolution, CARAFE reassembly and max pooling.

Dense convolutions unfold the input into a patch matrix here and hand the
product to numpy's BLAS; grouped and depthwise convolutions run as direct
loops, which beat per-group matrix products. Every routine accumulates in a
fixed order so results are bit-identical across calls. Input validation
lives in the Python wrappers.
"""
import numpy as np
from libc.math cimport INFINITY

cdef inline void _axpy4(double* o0, double* o1, double* o2, double* o3,
                        const double* xr, double w0, double w1, double w2, double w3,
                        Py_ssize_t ox0, Py_ssize_t ox1, Py_ssize_t stride,
                        Py_ssize_t off) noexcept nogil:
    cdef Py_ssize_t ox
    cdef double v
    if stride == 1:
        for ox in range(ox0, ox1):
            v = xr[ox + off]
            o0[ox] += w0 * v
            o1[ox] += w1 * v
            o2[ox] += w2 * v
            o3[ox] += w3 * v
    else:
        for ox in range(ox0, ox1):
            v = xr[ox * stride + off]
            o0[ox] += w0 * v
            o1[ox] += w1 * v
            o2[ox] += w2 * v
            o3[ox] += w3 * v


cdef inline void _axpy1(double* o0, const double* xr, double w0,
                        Py_ssize_t ox0, Py_ssize_t ox1, Py_ssize_t stride,
                        Py_ssize_t off) noexcept nogil:
    cdef Py_ssize_t ox
    if stride == 1:
        for ox in range(ox0, ox1):
            o0[ox] += w0 * xr[ox + off]
    else:
        for ox in range(ox0, ox1):
            o0[ox] += w0 * xr[ox * stride + off]


def _im2col(const double[:, :, ::1] x, Py_ssize_t KH, Py_ssize_t KW, int stride,
            int pad_h, int pad_w, Py_ssize_t Ho, Py_ssize_t Wo):
    """(C*KH*KW, Ho*Wo) patch matrix of one image; out-of-map taps are zero."""
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cols_arr = np.zeros((C * KH * KW, Ho * Wo), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef Py_ssize_t c, kh, kw, oy, ox, iy, ix, row
    with nogil:
        for c in range(C):
            for kh in range(KH):
                for kw in range(KW):
                    row = (c * KH + kh) * KW + kw
                    for oy in range(Ho):
                        iy = oy * stride + kh - pad_h
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(Wo):
                            ix = ox * stride + kw - pad_w
                            if ix >= 0 and ix < W:
                                cols[row, oy * Wo + ox] = x[c, iy, ix]
    return cols_arr


def _conv2d_gemm(x, w, int stride, int pad_h, int pad_w, Py_ssize_t Ho, Py_ssize_t Wo):
    n, o = x.shape[0], w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    wm = w.reshape(o, -1)
    out = np.empty((n, o, Ho * Wo), dtype=np.float64)
    pointwise = kh == 1 and kw == 1 and stride == 1 and pad_h == 0 and pad_w == 0
    for i in range(n):
        cols = x[i].reshape(x.shape[1], -1) if pointwise else _im2col(x[i], kh, kw, stride, pad_h, pad_w, Ho, Wo)
        np.matmul(wm, cols, out=out[i])
    return out.reshape(n, o, Ho, Wo)


def conv2d(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w, bias,
           int stride, int pad_h, int pad_w, int groups):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], Cg = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad_h - KH) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad_w - KW) // stride + 1
    if groups == 1 and Cg * KH * KW >= 8:
        out_arr = _conv2d_gemm(np.asarray(x), np.asarray(w), stride, pad_h, pad_w, Ho, Wo)
        if bias is not None:
            out_arr += np.asarray(bias, dtype=np.float64)[None, :, None, None]
        return out_arr
    out_arr = np.zeros((N, O, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t og = O // groups
    cdef Py_ssize_t n, g, o, ob, c, ci, kh, kw, oy, iy, ox0, ox1, j, off
    cdef double* rows[4]
    cdef double wv[4]
    with nogil:
        for n in range(N):
            for g in range(groups):
                o = g * og
                while o < (g + 1) * og:
                    ob = (g + 1) * og - o
                    if ob > 4:
                        ob = 4
                    for c in range(Cg):
                        ci = g * Cg + c
                        for kh in range(KH):
                            for kw in range(KW):
                                off = kw - pad_w
                                ox0 = 0
                                while ox0 < Wo and ox0 * stride + off < 0:
                                    ox0 += 1
                                ox1 = Wo
                                while ox1 > ox0 and (ox1 - 1) * stride + off >= W:
                                    ox1 -= 1
                                if ob == 4:
                                    for j in range(4):
                                        wv[j] = w[o + j, c, kh, kw]
                                    for oy in range(Ho):
                                        iy = oy * stride + kh - pad_h
                                        if iy < 0 or iy >= H:
                                            continue
                                        for j in range(4):
                                            rows[j] = &out[n, o + j, oy, 0]
                                        _axpy4(rows[0], rows[1], rows[2], rows[3],
                                               &x[n, ci, iy, 0], wv[0], wv[1], wv[2], wv[3],
                                               ox0, ox1, stride, off)
                                else:
                                    for j in range(ob):
                                        wv[0] = w[o + j, c, kh, kw]
                                        for oy in range(Ho):
                                            iy = oy * stride + kh - pad_h
                                            if iy < 0 or iy >= H:
                                                continue
                                            _axpy1(&out[n, o + j, oy, 0], &x[n, ci, iy, 0],
                                                   wv[0], ox0, ox1, stride, off)
                    o += ob
    if bias is not None:
        out_arr += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out_arr


def carafe_reassemble(const double[:, :, :, ::1] x, const double[:, :, :, ::1] kernels,
                      int k_up, int scale):
    """out[n, c, Y, X] = sum_{a,b} K[n, a*k+b, Y, X] * x[n, c, Y//s + a - r, X//s + b - r].

    Evaluated as x_src + sum K * (x_nb - x_src) with x_src = x[n, c, Y//s, X//s],
    which equals the plain sum for normalised kernels and keeps constant
    neighbourhoods exact. Out-of-map neighbours are zero.
    """
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H * scale, Wo = W * scale
    cdef Py_ssize_t r = k_up // 2
    out_arr = np.zeros((N, C, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, a, bb, oy, ox, iy, ix, kidx
    cdef double acc, src, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for oy in range(Ho):
                    for ox in range(Wo):
                        src = x[n, c, oy // scale, ox // scale]
                        acc = 0.0
                        for a in range(k_up):
                            iy = oy // scale + a - r
                            for bb in range(k_up):
                                ix = ox // scale + bb - r
                                if iy < 0 or iy >= H or ix < 0 or ix >= W:
                                    v = 0.0
                                else:
                                    v = x[n, c, iy, ix]
                                kidx = a * k_up + bb
                                acc = acc + kernels[n, kidx, oy, ox] * (v - src)
                        out[n, c, oy, ox] = src + acc
    return out_arr


def max_pool2d(const double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.empty((N, C, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, oy, ox, a, bb, iy, ix
    cdef double m, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for oy in range(Ho):
                    for ox in range(Wo):
                        m = -INFINITY
                        for a in range(k):
                            iy = oy * stride + a - pad
                            if iy < 0 or iy >= H:
                                continue
                            for bb in range(k):
                                ix = ox * stride + bb - pad
                                if ix < 0 or ix >= W:
                                    continue
                                v = x[n, c, iy, ix]
                                if v > m:
                                    m = v
                        out[n, c, oy, ox] = m
    return out_arr
