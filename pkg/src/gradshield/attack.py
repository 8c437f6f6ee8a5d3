"""Gradient-based watermark removal: remover training through the decoder
API, attacker countermeasures, and post-processing attacks on returned marks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from . import dgs as dgs_mod
from . import nn
from . import tensor as T
from .tensor import GradientTap, NumericsError, ShapeError, Tensor
from .watermark import TrainingDiverged, VictimModel, _tile_mark

LOSS_VARIANTS = ("l1", "l2", "l2_consistent")
COUNTERMEASURES = ("none", "sign_flip", "approx_invert")


@dataclass
class AttackConfig:
    loss_variant: str = "l2"
    beta1: float = 1.0
    beta2: float = 1.0
    countermeasure: str = "none"
    steps: int = 2000
    batch: int = 8
    lr: float = 2e-4
    seed: int = 0

    def validate(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss_variant!r}")
        if self.countermeasure not in COUNTERMEASURES:
            raise ValueError(f"unknown countermeasure {self.countermeasure!r}")
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("attack loss weights must be positive")
        if self.loss_variant == "l2_consistent" and self.batch % 2 != 0:
            raise ValueError("l2_consistent needs an even batch")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        return self


@dataclass
class AttackRun:
    remover: nn.ModelParams
    attacker_view_curve: list
    defender_view_curve: list
    meta: dict = field(default_factory=dict)


def removal_loss(g, variant: str, zresp: Tensor, w0: np.ndarray):
    """Distance of the API response batch from the null mark."""
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    n = zresp.shape[0]
    w0_t = Tensor(_tile_mark(np.asarray(w0, dtype=zresp.dtype), n), dtype=zresp.dtype)
    diff = T.sub(g, zresp, w0_t)
    if variant == "l1":
        return T.tmean(g, T.absval(g, diff))
    loss = T.tmean(g, T.square(g, diff))
    if variant == "l2_consistent":
        if n % 2 != 0:
            raise ShapeError(f"l2_consistent: odd batch {n}")
        first = T.slice_batch(g, zresp, 0, n // 2)
        second = T.slice_batch(g, zresp, n // 2, n)
        consist = T.tmean(g, T.square(g, T.sub(g, first, second)))
        loss = T.add(g, loss, consist)
    return loss


def attack_fidelity_loss(g, ry: Tensor, y: Tensor):
    """Per-pixel mean squared error between remover output and its input."""
    if ry.shape != y.shape:
        raise ShapeError(f"attack_fidelity_loss: shapes {ry.shape} vs {y.shape}")
    return T.tmean(g, T.square(g, T.sub(g, ry, y)))


def _precompute_watermarked(victim: VictimModel, pairs, chunk=32):
    """Y = E(concat(x, W)) for the whole attacker split (victim frozen)."""
    ys = []
    for lo in range(0, len(pairs), chunk):
        xb = np.stack([p.x.data for p in pairs[lo : lo + chunk]])
        g = T.Graph()
        w_t = Tensor(_tile_mark(victim.wspec.w.data, xb.shape[0]))
        y = nn.encoder_forward(g, victim.encoder, Tensor(xb), w_t)
        ys.append(y.data)
    return np.concatenate(ys, axis=0)


def train_remover(victim: VictimModel, dgs_cfg: dgs_mod.DGSConfig,
                  cfg: AttackConfig, attacker_pairs) -> AttackRun:
    """Train the remover through the (possibly protected) decoder API.

    Victim parameters stay frozen; only the remover updates. Records the
    attacker-view loss (what the API lets the attacker see) and the
    defender-view loss mean((D(R(Y)) - W0)^2) on the raw decoder output.
    """
    cfg.validate()
    pairs = list(attacker_pairs)
    if not pairs:
        raise ValueError("train_remover: empty attacker split")
    ys = _precompute_watermarked(victim, pairs)
    w0 = victim.wspec.w0.data
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 202]))
    remover = nn.init_params("remover", cfg.seed + 2)
    state = nn.AdamState(lr=cfg.lr)

    w_est = None
    if cfg.countermeasure == "approx_invert":
        # one benign-looking probe with an untouched watermarked image
        resp = dgs_mod.decoder_api(victim.decoder, dgs_cfg, Tensor(ys[:1]), T.Graph())
        w_est = resp.data[0].copy()

    attacker_view, defender_view = [], []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pairs), size=cfg.batch)
        yb = ys[idx]
        g = T.Graph()
        y_t = Tensor(yb)
        try:
            ry = nn.remover_forward(g, remover, y_t)
            zresp = dgs_mod.decoder_api(victim.decoder, dgs_cfg, ry, g)
            z_used = zresp
            if cfg.countermeasure == "approx_invert":
                z_used = dgs_mod.approx_invert(zresp, w_est)
            rem = removal_loss(g, cfg.loss_variant, z_used, w0)
            fid = attack_fidelity_loss(g, ry, y_t)
            loss = T.add(g, T.smul(g, rem, cfg.beta1), T.smul(g, fid, cfg.beta2))
            if cfg.countermeasure == "sign_flip":
                T.apply_tap(g, GradientTap(g.node_of(zresp), "negate"))
            T.backward(g, loss)
            grads = {n: t.grad for n, t in remover}
            nn.adam_step(remover, grads, state)
        except NumericsError as err:
            raise TrainingDiverged(step, str(err)) from err
        attacker_view.append(rem.item())
        defender_view.append(_defender_loss(victim, ry.data, w0))
    return AttackRun(
        remover=remover,
        attacker_view_curve=attacker_view,
        defender_view_curve=defender_view,
        meta={
            "loss_variant": cfg.loss_variant,
            "countermeasure": cfg.countermeasure,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "dgs_enabled": dgs_cfg.enabled,
        },
    )


def _defender_loss(victim: VictimModel, ry_values: np.ndarray, w0: np.ndarray) -> float:
    """mean((D(R(Y)) - W0)^2) on the raw decoder output, out of graph."""
    g = T.Graph()
    z = nn.decoder_forward(g, victim.decoder, Tensor(ry_values))
    return float(np.mean((z.data - w0[None]) ** 2))


# --- post-processing attacks on returned marks ---------------------------

# ITU-T81 Annex K luminance quantization table
_JPEG_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _quality_scaled_table(quality: int) -> np.ndarray:
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    q = np.floor((_JPEG_QTABLE * s + 50.0) / 100.0)
    return np.clip(q, 1.0, 255.0)


def jpeg_proxy(image, quality: int):
    """Grayscale JPEG round trip: 8x8 DCT, Annex-K quantization, inverse.

    Input is clipped to [0,1] first and reflect-padded to a multiple of 8
    when needed; output is clipped back to [0,1].
    """
    if not (1 <= quality <= 100):
        raise ValueError(f"jpeg quality {quality} outside 1..100")
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    plane = np.clip(arr.reshape(arr.shape[-2], arr.shape[-1]).astype(np.float64), 0.0, 1.0)
    h, w = plane.shape
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="reflect")
    q = _quality_scaled_table(quality)
    hp, wp = plane.shape
    blocks = plane.reshape(hp // 8, 8, wp // 8, 8).transpose(0, 2, 1, 3)
    shifted = blocks * 255.0 - 128.0
    coef = scipy.fft.dctn(shifted, type=2, axes=(2, 3), norm="ortho")
    coef = np.round(coef / q) * q
    rec = scipy.fft.idctn(coef, type=2, axes=(2, 3), norm="ortho")
    rec = (rec + 128.0) / 255.0
    out = rec.transpose(0, 2, 1, 3).reshape(hp, wp)[:h, :w]
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return out.reshape(arr.shape)


def add_awgn(image, level_db: float, seed: int):
    """i.i.d. Gaussian noise with sigma = 10^(-level_db/20), then clip."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    sigma = 10.0 ** (-level_db / 20.0)
    rng = np.random.default_rng(seed)
    noisy = arr.astype(np.float64) + rng.normal(0.0, sigma, size=arr.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def lattice_attack(image, step: int, seed: int):
    """Replace every pixel at row-major index i % (step+1) == 0 with noise."""
    if step < 1:
        raise ValueError(f"lattice step {step} < 1")
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    flat = arr.astype(np.float32).reshape(-1).copy()
    rng = np.random.default_rng(seed)
    targets = np.arange(0, flat.size, step + 1)
    flat[targets] = rng.uniform(0.0, 1.0, size=targets.size).astype(np.float32)
    return flat.reshape(arr.shape)
