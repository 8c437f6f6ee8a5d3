"""Pure-numpy data-movement kernels (fallback for the compiled extension).

Convolutions are executed as im2col + one BLAS GEMM by the conv op; the
backend's job is only the window gather/scatter. Columns use the layout
(Ci*kh*kw, B*Ho*Wo) so every GEMM in forward and backward runs directly on
contiguous operands.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    """xp: already-padded (B,Ci,Hp,Wp) -> columns (Ci*kh*kw, B*Ho*Wo)."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B,Ci,Ho,Wo,kh,kw) -> (Ci,kh,kw,B,Ho,Wo)
    b, ci, ho, wo = win.shape[:4]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(ci * kh * kw, b * ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, xp_shape, kh, kw, stride):
    """Scatter-add columns back onto the padded input's gradient."""
    b, ci, hp, wp = xp_shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    dxp = np.zeros(xp_shape, dtype=cols.dtype)
    c6 = cols.reshape(ci, kh, kw, b, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                c6[:, i, j].transpose(1, 0, 2, 3)
            )
    return dxp


def upsample2x_forward(x):
    """Nearest-neighbor x2 on the spatial axes."""
    return np.ascontiguousarray(np.repeat(np.repeat(x, 2, axis=2), 2, axis=3))


def upsample2x_backward(dy):
    """Sum each 2x2 block back onto the source pixel."""
    b, c, h2, w2 = dy.shape
    return np.ascontiguousarray(
        dy.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
    )
