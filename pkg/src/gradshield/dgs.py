"""Decoder gradient shield: reorientation, protected API, inversion, oracle.

The reorientation z* = -P z + (P+I) w is elementwise (P diagonal, positive).
It fixes the returned mark near w while making d(z*)/dz = -P, so a gradient
observed through the API is flipped and damped. The closed-form pieces here
are pure array math; `reorient` and `approx_invert` also have graph paths so
attacks can differentiate through them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import metrics
from . import nn
from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class PMatrix:
    """Diagonal of P: one positive eigenvalue per mark pixel."""

    lambdas: np.ndarray
    lambda_range: tuple
    seed: int

    @property
    def dim(self):
        return self.lambdas.size


@dataclass
class DGSConfig:
    p: Optional[PMatrix]
    w: np.ndarray  # (1,H,W) binary mark
    w0: np.ndarray  # (1,H,W) all ones
    nc_threshold: float = 0.96
    enabled: bool = True

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float32)
        self.w0 = np.asarray(self.w0, dtype=np.float32)
        if self.w.shape != self.w0.shape:
            raise ShapeError(f"dgs config: w {self.w.shape} vs w0 {self.w0.shape}")
        if not (0.0 < self.nc_threshold < 1.0):
            raise ValueError(f"nc_threshold {self.nc_threshold} outside (0,1)")
        if self.enabled and self.p is None:
            self.enabled = False

    def lambda_image(self, dtype=np.float64) -> np.ndarray:
        """Eigenvalues reshaped onto the mark plane."""
        return self.p.lambdas.reshape(self.w.shape).astype(dtype)


def make_P(dim: int, lambda_min: float, lambda_max: float, seed: int) -> PMatrix:
    """Sample the diagonal i.i.d. uniform over [lambda_min, lambda_max]."""
    if not (0.0 < lambda_min <= lambda_max):
        raise ValueError(
            f"need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
        )
    rng = np.random.default_rng(seed)
    lambdas = rng.uniform(lambda_min, lambda_max, size=dim)
    return PMatrix(lambdas=lambdas, lambda_range=(lambda_min, lambda_max), seed=seed)


def _tile(plane: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast a (1,H,W) plane to (B,1,H,W) when z carries a batch axis."""
    if like.ndim == 4:
        return np.ascontiguousarray(
            np.broadcast_to(plane[None], (like.shape[0],) + plane.shape)
        )
    return plane


def reorient(z, cfg: DGSConfig):
    """z* = -P z + (P+I) w, unclipped; differentiable when z is in a graph."""
    if cfg.p is None:
        raise ValueError("reorient: config has no P matrix")
    if isinstance(z, Tensor):
        if z.shape[-2:] != cfg.w.shape[-2:]:
            raise ShapeError(f"reorient: z {z.shape} vs w {cfg.w.shape}")
        lam = cfg.lambda_image(z.dtype)
        c = ((lam + 1.0) * cfg.w.astype(z.dtype)).astype(z.dtype)
        g = z._graph
        if g is None:
            g = T.Graph()
        neg_p = Tensor(_tile((-lam).astype(z.dtype), z.data), dtype=z.dtype)
        c_t = Tensor(_tile(c, z.data), dtype=z.dtype)
        return T.add(g, T.mul(g, z, neg_p), c_t)
    z = np.asarray(z)
    if z.shape[-2:] != cfg.w.shape[-2:]:
        raise ShapeError(f"reorient: z {z.shape} vs w {cfg.w.shape}")
    lam = cfg.lambda_image(z.dtype)
    w = cfg.w.astype(z.dtype)
    return (-lam * z + (lam + 1.0) * w).astype(z.dtype)


def invert_reorient(zstar, cfg: DGSConfig):
    """Exact inverse z = -P^-1 z* + (I + P^-1) w; needs all eigenvalues > 0."""
    if cfg.p is None:
        raise ValueError("invert_reorient: config has no P matrix")
    if np.any(cfg.p.lambdas == 0.0):
        raise ValueError("invert_reorient: zero eigenvalue")
    arr = zstar.data if isinstance(zstar, Tensor) else np.asarray(zstar)
    if arr.shape[-2:] != cfg.w.shape[-2:]:
        raise ShapeError(f"invert_reorient: z* {arr.shape} vs w {cfg.w.shape}")
    lam = cfg.lambda_image(arr.dtype)
    w = cfg.w.astype(arr.dtype)
    z = -arr / lam + (1.0 + 1.0 / lam) * w
    return Tensor(z) if isinstance(zstar, Tensor) else z.astype(arr.dtype)


def approx_invert(zstar, w_est):
    """Attacker estimate z~ = -z* + 2*w_est (exact only for P=I, w_est=w)."""
    if isinstance(zstar, Tensor):
        est = np.asarray(w_est, dtype=zstar.dtype)
        if est.shape[-2:] != zstar.shape[-2:]:
            raise ShapeError(f"approx_invert: z* {zstar.shape} vs w_est {est.shape}")
        g = zstar._graph
        if g is None:
            g = T.Graph()
        two_w = Tensor(_tile(2.0 * est.reshape(est.shape[-3:]), zstar.data), dtype=zstar.dtype)
        return T.add(g, T.smul(g, zstar, -1.0), two_w)
    zs = np.asarray(zstar)
    est = np.asarray(w_est, dtype=zs.dtype)
    if est.shape[-2:] != zs.shape[-2:]:
        raise ShapeError(f"approx_invert: z* {zs.shape} vs w_est {est.shape}")
    return (-zs + 2.0 * est).astype(zs.dtype)


def decoder_api(decoder, cfg: DGSConfig, s: Tensor, graph: Optional[T.Graph] = None) -> Tensor:
    """Protected decoder response, per sample within the batch.

    Raw output z = D(s); samples with NC(z, w) above the threshold come back
    reoriented, everything else verbatim. The response stays in the caller's
    graph, so the gradient crossing it is observable downstream.
    """
    g = graph if graph is not None else (s._graph or T.Graph())
    zraw = nn.decoder_forward(g, decoder, s)
    if not cfg.enabled or cfg.p is None:
        return zraw
    batched = zraw.data.ndim == 4
    samples = zraw.data if batched else zraw.data[None]
    mask = np.array(
        [metrics.nc(sample, cfg.w) > cfg.nc_threshold for sample in samples],
        dtype=zraw.dtype,
    )
    if not mask.any():
        return zraw
    zs = reorient(zraw, cfg)
    if mask.all():
        return zs
    # mix the two branches with a constant {0,1} mask; exact per sample
    shape = (mask.size,) + (1,) * (zraw.data.ndim - 1)
    m = np.broadcast_to(mask.reshape(shape), zraw.data.shape)
    m_t = Tensor(np.ascontiguousarray(m), dtype=zraw.dtype)
    inv_t = Tensor(np.ascontiguousarray(1.0 - m), dtype=zraw.dtype)
    return T.add(g, T.mul(g, zs, m_t), T.mul(g, zraw, inv_t))


def effective_z_gradient(z, cfg: DGSConfig, f=None) -> np.ndarray:
    """Analytic z-gradient of sum((-Pz + (P+I)w + F - w0)^2): -2P(z*_F - w0).

    The independent oracle for what an attacker's autodiff pass should see
    through the protected API (optionally with additive interference F).
    """
    z = z.data if isinstance(z, Tensor) else np.asarray(z)
    if z.shape[-2:] != cfg.w.shape[-2:]:
        raise ShapeError(f"effective_z_gradient: z {z.shape} vs w {cfg.w.shape}")
    lam = cfg.lambda_image(z.dtype)
    w = cfg.w.astype(z.dtype)
    w0 = cfg.w0.astype(z.dtype)
    zi = -lam * z + (lam + 1.0) * w
    if f is not None:
        zi = zi + np.asarray(f, dtype=z.dtype)
    return (-2.0 * lam * (zi - w0)).astype(z.dtype)
