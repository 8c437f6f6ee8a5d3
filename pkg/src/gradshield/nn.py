"""Parameter containers, initialization, Adam, and the three tiny networks.

All nets operate on 1x32x32-style grayscale batches (B,1,H,W):
  encoder  concat(image, mark) -> residual added to the image
  decoder  image -> mark estimate in (0,1) via final sigmoid
  remover  one-level U-shape, residual added to its input
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import NumericsError, Tensor


class ModelParams:
    """Ordered named parameter set; order is stable across save/load."""

    def __init__(self, items=None):
        self._items: list[tuple[str, Tensor]] = []
        self._index: dict[str, int] = {}
        for name, t in items or []:
            self.add(name, t)

    def add(self, name: str, t: Tensor):
        if name in self._index:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._index[name] = len(self._items)
        self._items.append((name, t))

    def __getitem__(self, name: str) -> Tensor:
        return self._items[self._index[name]][1]

    def __contains__(self, name):
        return name in self._index

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def names(self):
        return [n for n, _ in self._items]

    def tensors(self):
        return [t for _, t in self._items]

    def copy(self) -> "ModelParams":
        return ModelParams(
            (n, Tensor(t.data.copy(), requires_grad=t.requires_grad, dtype=t.dtype))
            for n, t in self._items
        )


# (name, in_ch, out_ch, stride) per conv layer; residual nets list their
# final correction conv last.
_ARCH_LAYERS = {
    "encoder": [("conv1", 2, 16, 1), ("conv2", 16, 16, 1), ("conv3", 16, 1, 1)],
    "decoder": [("conv1", 1, 16, 1), ("conv2", 16, 16, 1), ("conv3", 16, 1, 1)],
    "remover": [
        ("down1", 1, 16, 2),
        ("mid1", 16, 16, 1),
        ("up1", 17, 16, 1),
        ("out1", 16, 1, 1),
    ],
}

# Residual correction heads start at zero so encoder and remover are exact
# identity maps at step 0 (the attack model assumes the remover initially
# passes watermarked images through intact).
_ZERO_INIT_FINAL = {"encoder": "conv3", "remover": "out1"}

KERNEL = 3
PAD = 1


def init_params(arch: str, seed: int) -> ModelParams:
    """Kaiming-uniform conv weights (bound sqrt(6/fan_in)), zero biases."""
    if arch not in _ARCH_LAYERS:
        raise ValueError(f"unknown arch {arch!r}")
    rng = np.random.default_rng(seed)
    params = ModelParams()
    zero_final = _ZERO_INIT_FINAL.get(arch)
    for name, cin, cout, _stride in _ARCH_LAYERS[arch]:
        fan_in = cin * KERNEL * KERNEL
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(cout, cin, KERNEL, KERNEL))
        if name == zero_final:
            w = np.zeros_like(w)
        params.add(f"{name}.weight", Tensor(w.astype(np.float32), requires_grad=True))
        params.add(f"{name}.bias", Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True))
    return params


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict, state: AdamState):
    """Standard Adam with bias correction; update denominator sqrt(v^)+eps.

    ``grads`` maps parameter name -> ndarray; missing names mean zero
    gradient. A non-finite gradient rejects the whole step, leaving params
    and state untouched.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericsError(f"adam_step: non-finite gradient for {name!r}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.epsilon)).astype(p.dtype)
    state.step_count = t
    return params, state


def _conv_block(g, params, layer, x, stride=1, act=True):
    out = T.conv2d(g, x, params[f"{layer}.weight"], params[f"{layer}.bias"],
                   stride=stride, pad=PAD)
    if act:
        out = T.leaky_relu(g, out, alpha=0.2)
    return out


def encoder_forward(g, params: ModelParams, x: Tensor, w: Tensor) -> Tensor:
    """Y = X + correction(concat(X, W)); final conv is linear."""
    h = T.concat_ch(g, x, w)
    h = _conv_block(g, params, "conv1", h)
    h = _conv_block(g, params, "conv2", h)
    h = _conv_block(g, params, "conv3", h, act=False)
    return T.add(g, x, h)


def decoder_forward(g, params: ModelParams, s: Tensor) -> Tensor:
    """Mark estimate in (0,1)."""
    h = _conv_block(g, params, "conv1", s)
    h = _conv_block(g, params, "conv2", h)
    h = _conv_block(g, params, "conv3", h, act=False)
    return T.sigmoid(g, h)


def remover_forward(g, params: ModelParams, y: Tensor) -> Tensor:
    """R(Y) = Y + correction; downsample, process, upsample, fuse skip."""
    h = _conv_block(g, params, "down1", y, stride=2)
    h = _conv_block(g, params, "mid1", h)
    h = T.upsample2x(g, h)
    h = T.concat_ch(g, h, y)
    h = _conv_block(g, params, "up1", h)
    h = _conv_block(g, params, "out1", h, act=False)
    return T.add(g, y, h)


FORWARD_FNS = {
    "encoder": encoder_forward,
    "decoder": decoder_forward,
    "remover": remover_forward,
}
