"""Joint encoder/decoder training and the plain extraction path."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .tensor import NumericsError, ShapeError, Tensor
from .tasks import Dataset, WatermarkSpec, gen_base_image


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the offending step index."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class VictimTrainConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    steps: int = 8000
    batch: int = 8
    lr: float = 2e-4
    seed: int = 0

    def validate(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("victim loss weights must be positive")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        return self


@dataclass
class VictimModel:
    encoder: nn.ModelParams
    decoder: nn.ModelParams
    wspec: WatermarkSpec
    train_meta: dict = field(default_factory=dict)


def _tile_mark(mark: np.ndarray, batch: int) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(mark[None], (batch,) + mark.shape))


def embed_loss(g, decoder, y_batch: Tensor, s_batch: Tensor, wspec: WatermarkSpec):
    """mean((D(Y)-W)^2) + mean((D(S)-W0)^2), each term per-pixel mean."""
    if y_batch.data.shape[0] == 0 or s_batch.data.shape[0] == 0:
        raise ShapeError("embed_loss: empty batch")
    w_t = Tensor(_tile_mark(wspec.w.data, y_batch.shape[0]))
    w0_t = Tensor(_tile_mark(wspec.w0.data, s_batch.shape[0]))
    dy = nn.decoder_forward(g, decoder, y_batch)
    ds = nn.decoder_forward(g, decoder, s_batch)
    mark_term = T.tmean(g, T.square(g, T.sub(g, dy, w_t)))
    null_term = T.tmean(g, T.square(g, T.sub(g, ds, w0_t)))
    return T.add(g, mark_term, null_term)


def fidelity_loss(g, y_batch: Tensor, x_batch: Tensor):
    """Per-pixel mean squared error."""
    if y_batch.shape != x_batch.shape:
        raise ShapeError(f"fidelity_loss: shapes {y_batch.shape} vs {x_batch.shape}")
    return T.tmean(g, T.square(g, T.sub(g, y_batch, x_batch)))


def _sample_s_batch(rng, pairs, batch, size):
    """Non-watermarked pool: x0 / x / fresh base images in rotating thirds."""
    out = np.empty((batch, 1, size, size), dtype=np.float32)
    for slot in range(batch):
        kind = slot % 3
        if kind == 2:
            out[slot] = gen_base_image(int(rng.integers(2**63)), size).data
        else:
            pair = pairs[int(rng.integers(len(pairs)))]
            out[slot] = pair.x0.data if kind == 0 else pair.x.data
    return out


def train_victim(dataset: Dataset, wspec: WatermarkSpec, cfg: VictimTrainConfig):
    """Jointly Adam-optimize encoder and decoder on the victim split.

    Returns (VictimModel, per-step loss curve).
    """
    cfg.validate()
    pairs = dataset.victim
    if not pairs:
        raise ValueError("train_victim: empty victim split")
    size = dataset.size
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
    encoder = nn.init_params("encoder", cfg.seed)
    decoder = nn.init_params("decoder", cfg.seed + 1)
    state = nn.AdamState(lr=cfg.lr)
    merged = nn.ModelParams(
        [(f"enc.{n}", t) for n, t in encoder] + [(f"dec.{n}", t) for n, t in decoder]
    )
    w_tile = _tile_mark(wspec.w.data, cfg.batch)
    curve = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pairs), size=cfg.batch)
        xb = np.stack([pairs[i].x.data for i in idx])
        sb = _sample_s_batch(rng, pairs, cfg.batch, size)
        g = T.Graph()
        x_t = Tensor(xb)
        try:
            y = nn.encoder_forward(g, encoder, x_t, Tensor(w_tile))
            le = embed_loss(g, decoder, y, Tensor(sb), wspec)
            lf = fidelity_loss(g, y, x_t)
            loss = T.add(g, T.smul(g, le, cfg.alpha1), T.smul(g, lf, cfg.alpha2))
            T.backward(g, loss)
            grads = {f"enc.{n}": t.grad for n, t in encoder}
            grads.update({f"dec.{n}": t.grad for n, t in decoder})
            nn.adam_step(merged, grads, state)
        except NumericsError as err:
            raise TrainingDiverged(step, str(err)) from err
        curve.append(loss.item())
    model = VictimModel(
        encoder=encoder,
        decoder=decoder,
        wspec=wspec,
        train_meta={
            "seed": cfg.seed,
            "steps": cfg.steps,
            "final_loss": curve[-1],
            "initial_loss": curve[0],
        },
    )
    return model, curve


def embed(model: VictimModel, x) -> Tensor:
    """Watermarked output Y for a processed image (or batch)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    batched = arr.ndim == 4
    xb = arr if batched else arr[None]
    g = T.Graph()
    w_t = Tensor(_tile_mark(model.wspec.w.data, xb.shape[0]))
    y = nn.encoder_forward(g, model.encoder, Tensor(xb), w_t)
    return y if batched else Tensor(y.data[0])


def extract(decoder, s) -> Tensor:
    """Plain (unprotected) decoder forward pass on one image or a batch."""
    arr = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float32)
    if arr.ndim not in (3, 4):
        raise ShapeError(f"extract: expected (1,H,W) or (B,1,H,W), got {arr.shape}")
    batched = arr.ndim == 4
    sb = arr if batched else arr[None]
    g = T.Graph()
    z = nn.decoder_forward(g, decoder, Tensor(sb))
    return z if batched else Tensor(z.data[0])
