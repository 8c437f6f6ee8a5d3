"""Procedural image tasks standing in for the deraining / style corpora.

Everything here is a pure function of (seed, parameters): images are smooth
random fields, the "host model" mapping x0 -> x is ground truth (rain
synthesis inverted, or a tone/edge stylization), and watermark bitmaps are
fixed binary patterns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

MIN_SIZE = 16


@dataclass
class ImagePair:
    """x0: degraded/source image, x: processed target; both 1xHxW in [0,1]."""

    x0: Tensor
    x: Tensor
    seed: int


@dataclass
class WatermarkSpec:
    """Binary mark w plus the all-ones null mark w0."""

    w: Tensor
    w0: Tensor
    pattern: str


@dataclass
class Dataset:
    task: str
    size: int
    seed: int
    victim: list
    attacker: list
    eval: list

    def all_pairs(self):
        return self.victim + self.attacker + self.eval


def _rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def gen_base_image(seed: int, size: int) -> Tensor:
    """Smooth random field: 4 random 2-d cosines + 2 soft-edged rectangles."""
    if size < MIN_SIZE:
        raise ValueError(f"size {size} < minimum {MIN_SIZE}")
    rng = _rng(seed, 0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.zeros((size, size), dtype=np.float64)
    for _ in range(4):
        fx, fy = rng.uniform(0.5, 4.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        img += amp * np.cos(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    for _ in range(2):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        hh, hw = rng.uniform(0.1, 0.3, size=2)
        amp = rng.uniform(0.3, 0.8)
        soft = 0.04
        ry = np.clip((hh - np.abs(yy - cy)) / soft, 0.0, 1.0)
        rx = np.clip((hw - np.abs(xx - cx)) / soft, 0.0, 1.0)
        img += amp * ry * rx
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return Tensor(img[None].astype(np.float32))


def _rain_field(seed: int, size: int) -> np.ndarray:
    rng = _rng(seed, 1)
    rain = np.zeros((size, size), dtype=np.float32)
    for _ in range(int(rng.integers(8, 17))):
        r = int(rng.integers(-size // 2, size))
        c = int(rng.integers(0, size))
        slope = 1 if rng.uniform() < 0.5 else -1
        intensity = np.float32(rng.uniform(0.3, 0.6))
        length = int(rng.integers(size // 2, size + 1))
        for t in range(length):
            i, j = r + t, c + slope * t
            if 0 <= i < size and 0 <= j < size:
                rain[i, j] += intensity
    return rain


def gen_rain_pair(seed: int, size: int) -> ImagePair:
    """x = clean field, x0 = x plus bright diagonal streaks (clamped)."""
    x = gen_base_image(seed, size)
    rain = _rain_field(seed, size)
    x0 = np.clip(x.data + rain[None], 0.0, 1.0)
    return ImagePair(x0=Tensor(x0), x=x, seed=seed)


def gen_style_pair(seed: int, size: int) -> ImagePair:
    """x0 = base field, x = 0.7*tone(x0) + 0.3*edges(x0), clamped."""
    x0 = gen_base_image(seed, size)
    v = x0.data[0].astype(np.float64)
    tone = np.power(v, 0.45)
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / 2.0
    gy[1:-1, :] = (v[2:, :] - v[:-2, :]) / 2.0
    mag = np.hypot(gx, gy)
    peak = mag.max()
    edges = mag / peak if peak > 0 else mag
    x = np.clip(0.7 * tone + 0.3 * edges, 0.0, 1.0)
    return ImagePair(x0=x0, x=Tensor(x[None].astype(np.float32)), seed=seed)


# 8x8 stencil for the "logo" mark: a blocky glyph of zeros on a ones field
# (51/64 ones, mean ~0.797; the sparse glyph keeps the embedding residual
# small and the mark robust under heavy additive noise, while NC against
# the all-ones null mark stays well below the 0.96 decision threshold).
_LOGO_STENCIL = np.array(
    [
        [1, 1, 1, 0, 1, 1, 1, 1],
        [1, 1, 0, 1, 1, 0, 1, 1],
        [1, 0, 1, 1, 1, 1, 0, 1],
        [1, 1, 1, 0, 0, 1, 1, 1],
        [1, 1, 1, 0, 0, 1, 1, 1],
        [1, 0, 1, 1, 1, 1, 0, 1],
        [1, 1, 0, 1, 1, 0, 1, 1],
        [1, 1, 1, 1, 1, 1, 1, 1],
    ],
    dtype=np.float32,
)


def gen_watermark(size: int, pattern: str = "logo") -> WatermarkSpec:
    """Binary mark of the requested pattern plus the all-ones null mark."""
    if size < MIN_SIZE:
        raise ValueError(f"size {size} < minimum {MIN_SIZE}")
    if pattern == "logo":
        if size % 8 != 0:
            raise ValueError(f"logo pattern needs size divisible by 8, got {size}")
        w = np.kron(_LOGO_STENCIL, np.ones((size // 8, size // 8), dtype=np.float32))
    elif pattern == "checker":
        ii, jj = np.mgrid[0:size, 0:size]
        w = (((ii // 4) + (jj // 4)) % 2).astype(np.float32)
    else:
        raise ValueError(f"unknown watermark pattern {pattern!r}")
    w0 = np.ones_like(w)
    return WatermarkSpec(w=Tensor(w[None]), w0=Tensor(w0[None]), pattern=pattern)


def make_dataset(task: str, count: int, seed: int, size: int) -> Dataset:
    """45/45/10 victim/attacker/eval split over disjoint per-item seeds."""
    if task not in ("derain", "style"):
        raise ValueError(f"unknown task {task!r}")
    if count < 3:
        raise ValueError(f"count {count} < 3")
    gen = gen_rain_pair if task == "derain" else gen_style_pair
    n_victim = int(np.floor(0.45 * count))
    n_attacker = int(np.floor(0.45 * count))
    pairs = [gen(seed + i, size) for i in range(count)]
    return Dataset(
        task=task,
        size=size,
        seed=seed,
        victim=pairs[:n_victim],
        attacker=pairs[n_victim : n_victim + n_attacker],
        eval=pairs[n_victim + n_attacker :],
    )
