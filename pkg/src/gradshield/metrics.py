"""Image-quality and defense-success metrics: PSNR, MS-SSIM, NC, SR."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

NC_THRESHOLD_DEFAULT = 0.96

# first entries of the standard 5-scale MS-SSIM weights
_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


@dataclass
class MetricsRecord:
    name: str
    psnr_db: float
    ms_ssim: float
    nc: float
    sr: float
    context: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "name": self.name,
            "psnr_db": self.psnr_db,
            "ms_ssim": self.ms_ssim,
            "nc": self.nc,
            "sr": self.sr,
            "context": self.context,
        }


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on the [0,1] scale (MAX=1)."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse < 1e-10:
        return 99.0
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=7, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _window_stats(a, b, win):
    n = win.shape[0]
    wa = sliding_window_view(a, (n, n))
    wb = sliding_window_view(b, (n, n))
    mu_a = np.tensordot(wa, win, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, win, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(wa * wa, win, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(wb * wb, win, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(wa * wb, win, axes=([2, 3], [0, 1]))
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def ms_ssim(a, b, scales: int = 3) -> float:
    """Multi-scale SSIM, 7x7 Gaussian window (sigma 1.5), [0,1] range.

    Contrast-structure terms enter at every scale with the first ``scales``
    standard weights (renormalized); the luminance term multiplies in once
    at the coarsest scale. Scales are linked by 2x2 mean downsampling.
    """
    a = _arr(a).astype(np.float64)
    b = _arr(b).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ms_ssim: shapes {a.shape} vs {b.shape}")
    a = a.reshape(a.shape[-2], a.shape[-1])
    b = b.reshape(b.shape[-2], b.shape[-1])
    if min(a.shape) // 2 ** (scales - 1) < 8:
        raise ShapeError(
            f"ms_ssim: image {a.shape} too small for {scales} scales"
        )
    c1, c2 = 0.01**2, 0.03**2
    win = _gaussian_window()
    weights = _MSSSIM_WEIGHTS[:scales]
    weights = weights / weights.sum()
    value = 1.0
    for s in range(scales):
        mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, win)
        cs = (2.0 * cov + c2) / (var_a + var_b + c2)
        value *= float(np.mean(np.maximum(cs, 0.0)) ** weights[s])
        if s == scales - 1:
            lum = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
            value *= float(np.mean(np.maximum(lum, 0.0)))
        else:
            h2, w2 = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
            a = a[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
            b = b[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
    return value


def nc(a, b) -> float:
    """Normalized cross-correlation without mean subtraction."""
    a, b = _arr(a).astype(np.float64), _arr(b).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"nc: shapes {a.shape} vs {b.shape}")
    na = float(np.sum(a * a))
    nb = float(np.sum(b * b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("nc: undefined for an all-zero input")
    return float(np.sum(a * b) / np.sqrt(na * nb))


def success_rate(decoded, w, threshold: float = NC_THRESHOLD_DEFAULT) -> float:
    """Fraction of decoded marks whose NC against w exceeds the threshold."""
    items = list(decoded)
    if len(items) == 0:
        raise ValueError("success_rate: empty batch")
    hits = sum(1 for d in items if nc(d, w) > threshold)
    return hits / len(items)
