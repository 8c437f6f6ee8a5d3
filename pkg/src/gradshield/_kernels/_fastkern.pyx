# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled data-movement kernels: im2col / col2im / nearest upsample.

Same contracts as numpy_backend. Plain single-threaded C loops; inner loops
run over contiguous memory so the compiler can vectorize them, and results
are bit-deterministic for a given build.
"""

import numpy as np

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t B = xp.shape[0], Ci = xp.shape[1], Hp = xp.shape[2], Wp = xp.shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    cdef Py_ssize_t N = B * Ho * Wo
    if real is float:
        cols_np = np.empty((Ci * kh * kw, N), dtype=np.float32)
    else:
        cols_np = np.empty((Ci * kh * kw, N), dtype=np.float64)
    cdef real[:, ::1] cols = cols_np
    cdef Py_ssize_t ci, i, j, b, ho, wo, row, base
    for ci in range(Ci):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for b in range(B):
                    for ho in range(Ho):
                        base = (b * Ho + ho) * Wo
                        if stride == 1:
                            for wo in range(Wo):
                                cols[row, base + wo] = xp[b, ci, ho + i, j + wo]
                        else:
                            for wo in range(Wo):
                                cols[row, base + wo] = xp[b, ci, ho * stride + i, j + wo * stride]
    return cols_np


def col2im(real[:, ::1] cols, xp_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t B = xp_shape[0], Ci = xp_shape[1], Hp = xp_shape[2], Wp = xp_shape[3]
    cdef Py_ssize_t Ho = (Hp - kh) // stride + 1
    cdef Py_ssize_t Wo = (Wp - kw) // stride + 1
    if real is float:
        dxp_np = np.zeros((B, Ci, Hp, Wp), dtype=np.float32)
    else:
        dxp_np = np.zeros((B, Ci, Hp, Wp), dtype=np.float64)
    cdef real[:, :, :, ::1] dxp = dxp_np
    cdef Py_ssize_t ci, i, j, b, ho, wo, row, base
    for ci in range(Ci):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for b in range(B):
                    for ho in range(Ho):
                        base = (b * Ho + ho) * Wo
                        if stride == 1:
                            for wo in range(Wo):
                                dxp[b, ci, ho + i, j + wo] += cols[row, base + wo]
                        else:
                            for wo in range(Wo):
                                dxp[b, ci, ho * stride + i, j + wo * stride] += cols[row, base + wo]
    return dxp_np


def upsample2x_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    if real is float:
        out_np = np.empty((B, C, 2 * H, 2 * W), dtype=np.float32)
    else:
        out_np = np.empty((B, C, 2 * H, 2 * W), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, c, h, w
    cdef real v
    for b in range(B):
        for c in range(C):
            for h in range(H):
                for w in range(W):
                    v = x[b, c, h, w]
                    out[b, c, 2 * h, 2 * w] = v
                    out[b, c, 2 * h, 2 * w + 1] = v
                    out[b, c, 2 * h + 1, 2 * w] = v
                    out[b, c, 2 * h + 1, 2 * w + 1] = v
    return out_np


def upsample2x_backward(real[:, :, :, ::1] dy):
    cdef Py_ssize_t B = dy.shape[0], C = dy.shape[1], H2 = dy.shape[2], W2 = dy.shape[3]
    cdef Py_ssize_t H = H2 // 2, W = W2 // 2
    if real is float:
        dx_np = np.empty((B, C, H, W), dtype=np.float32)
    else:
        dx_np = np.empty((B, C, H, W), dtype=np.float64)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t b, c, h, w
    for b in range(B):
        for c in range(C):
            for h in range(H):
                for w in range(W):
                    dx[b, c, h, w] = (dy[b, c, 2 * h, 2 * w]
                                      + dy[b, c, 2 * h, 2 * w + 1]
                                      + dy[b, c, 2 * h + 1, 2 * w]
                                      + dy[b, c, 2 * h + 1, 2 * w + 1])
    return dx_np
