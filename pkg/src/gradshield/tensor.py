"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: every forward op appends a node to a Graph, so the node list
is already topologically ordered and backward() is a single reverse sweep.
Training runs in float32; float64 tensors are supported for the numeric
gradient checker and closed-form oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Operands do not satisfy an op's shape rule."""


class NumericsError(ArithmeticError):
    """Non-finite values where the contract requires finite ones."""


class GraphError(RuntimeError):
    """Malformed graph usage (bad node id, non-scalar loss, ...)."""


_ALLOWED_DTYPES = (np.float32, np.float64)


def _as_data(values, dtype=None):
    arr = np.asarray(values)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """n-d value plus an optional gradient slot.

    ``grad`` is populated by backward() for requires_grad tensors. A tensor
    may participate in many graphs over its lifetime (parameters are reused
    every training step); attachment is tracked per graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "_graph", "_gid")

    def __init__(self, values, requires_grad=False, dtype=None):
        self.data = _as_data(values, dtype)
        if not np.isfinite(self.data.sum(dtype=np.float64)):
            raise NumericsError("tensor created with non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._graph = None
        self._gid = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class GradientTap:
    """Transform applied to the gradient crossing one graph node.

    Forward values are never touched; this models an attacker (or test)
    rewriting the gradient observed at an API boundary.
    """

    node_id: int
    transform: str = "negate"  # identity | negate | scale
    scale: float = 1.0

    def apply(self, g: np.ndarray) -> np.ndarray:
        if self.transform == "identity":
            return g
        if self.transform == "negate":
            return -g
        if self.transform == "scale":
            return g * g.dtype.type(self.scale)
        raise ValueError(f"unknown tap transform {self.transform!r}")


@dataclass
class _Node:
    nid: int
    kind: str
    input_ids: tuple
    tensor: Tensor
    backward_fn: Optional[Callable] = None


class Graph:
    """Append-only op record; inputs always precede their consumers."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.taps: dict[int, GradientTap] = {}

    def attach(self, t: Tensor) -> int:
        """Register ``t`` as a leaf of this graph (idempotent per graph)."""
        if t._graph is self:
            return t._gid
        nid = len(self.nodes)
        self.nodes.append(_Node(nid, "leaf", (), t))
        t._graph = self
        t._gid = nid
        return nid

    def _register(self, kind, input_ids, out: Tensor, backward_fn) -> Tensor:
        nid = len(self.nodes)
        self.nodes.append(_Node(nid, kind, tuple(input_ids), out, backward_fn))
        out._graph = self
        out._gid = nid
        return out

    def node_of(self, t: Tensor) -> int:
        if t._graph is not self:
            raise GraphError("tensor is not attached to this graph")
        return t._gid


def _require_same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} vs {b.shape}")


def _require_same_dtype(kind, *ts):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ShapeError(f"{kind}: mixed dtypes {dt} vs {t.dtype}")


def _finite_out(kind, out):
    # one-pass reduction in f64: any NaN/Inf makes the sum non-finite, and
    # finite f32/f64 inputs cannot overflow it
    if not np.isfinite(out.sum(dtype=np.float64)):
        raise NumericsError(f"{kind}: non-finite output")
    return out


# --- op implementations -------------------------------------------------
# Each returns (out_data, backward_fn); backward_fn maps the output
# gradient to a tuple of input gradients (None for no-gradient slots).


def _op_add(inputs, attrs):
    a, b = inputs
    _require_same_shape("add", a, b)
    out = a.data + b.data
    return out, lambda g: (g, g)


def _op_sub(inputs, attrs):
    a, b = inputs
    _require_same_shape("sub", a, b)
    out = a.data - b.data
    return out, lambda g: (g, -g)


def _op_mul(inputs, attrs):
    a, b = inputs
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd
    return out, lambda g: (g * bd, g * ad)


def _op_smul(inputs, attrs):
    (a,) = inputs
    c = a.dtype.type(attrs["c"])
    out = a.data * c
    return out, lambda g: (g * c,)


def _op_matmul(inputs, attrs):
    a, b = inputs
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd
    return out, lambda g: (g @ bd.T, ad.T @ g)


def _op_conv2d(inputs, attrs):
    x, k = inputs[0], inputs[1]
    bias = inputs[2] if len(inputs) > 2 else None
    stride, pad = int(attrs.get("stride", 1)), int(attrs.get("pad", 0))
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input/kernel, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: in_channels {x.shape[1]} vs kernel {k.shape[1]}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: unsupported stride {stride}")
    if x.shape[2] + 2 * pad < k.shape[2] or x.shape[3] + 2 * pad < k.shape[3]:
        raise ShapeError(f"conv2d: kernel {k.shape} larger than padded input {x.shape}")
    if bias is not None and bias.shape != (k.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({k.shape[0]},)")
    xd, kd = x.data, k.data
    b, _, h, w = xd.shape
    co, ci, kh, kw = kd.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad > 0:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = xd
    cols = _kernels.im2col(xp, kh, kw, stride)  # (ci*kh*kw, b*ho*wo)
    kmat = kd.reshape(co, ci * kh * kw)
    out_mat = kmat @ cols  # (co, b*ho*wo)
    out = np.ascontiguousarray(
        out_mat.reshape(co, b, ho, wo).transpose(1, 0, 2, 3)
    )
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, -1)
        gk = (gmat @ cols.T).reshape(kd.shape)
        dcols = kmat.T @ gmat
        gxp = _kernels.col2im(np.ascontiguousarray(dcols), xp.shape, kh, kw, stride)
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad > 0 else gxp
        if bias is None:
            return (np.ascontiguousarray(gx), gk)
        return (np.ascontiguousarray(gx), gk, g.sum(axis=(0, 2, 3)))

    return out, backward


def _op_upsample2x(inputs, attrs):
    (x,) = inputs
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x: need 4-d input, got {x.shape}")
    out = _kernels.upsample2x_forward(x.data)
    return out, lambda g: (_kernels.upsample2x_backward(np.ascontiguousarray(g)),)


def _op_leaky_relu(inputs, attrs):
    (x,) = inputs
    alpha = x.dtype.type(attrs.get("alpha", 0.2))
    xd = x.data
    # alpha in (0,1) makes max(x, alpha*x) the leaky ramp
    out = np.maximum(xd, alpha * xd)
    slope = np.where(xd > 0, x.dtype.type(1.0), alpha)
    return out, lambda g: (g * slope,)


def _op_sigmoid(inputs, attrs):
    (x,) = inputs
    xd = x.data
    # stable: only exponentiate non-positive arguments
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return out, lambda g: (g * out * (1.0 - out),)


def _op_abs(inputs, attrs):
    (x,) = inputs
    xd = x.data
    return np.abs(xd), lambda g: (g * np.sign(xd),)


def _op_square(inputs, attrs):
    (x,) = inputs
    xd = x.data
    return xd * xd, lambda g: (g * 2.0 * xd,)


def _op_concat_ch(inputs, attrs):
    a, b = inputs
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError(f"concat_ch: need 4-d inputs, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_ch: shapes {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return out, lambda g: (g[:, :ca], g[:, ca:])


def _op_slice_batch(inputs, attrs):
    (x,) = inputs
    start, stop = int(attrs["start"]), int(attrs["stop"])
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice_batch: [{start}:{stop}] out of range for batch {x.shape[0]}")
    xd = x.data

    def backward(g):
        gx = np.zeros_like(xd)
        gx[start:stop] = g
        return (gx,)

    return xd[start:stop].copy(), backward


def _op_sum(inputs, attrs):
    (x,) = inputs
    xd = x.data
    out = np.asarray(xd.sum(dtype=xd.dtype))
    return out, lambda g: (np.full(xd.shape, g, dtype=xd.dtype),)


def _op_mean(inputs, attrs):
    (x,) = inputs
    xd = x.data
    n = xd.dtype.type(xd.size)
    out = np.asarray(xd.sum(dtype=xd.dtype) / n)
    return out, lambda g: (np.full(xd.shape, g / n, dtype=xd.dtype),)


_OPS = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "smul": _op_smul,
    "matmul": _op_matmul,
    "conv2d": _op_conv2d,
    "upsample2x": _op_upsample2x,
    "leaky_relu": _op_leaky_relu,
    "sigmoid": _op_sigmoid,
    "abs": _op_abs,
    "square": _op_square,
    "concat_ch": _op_concat_ch,
    "slice_batch": _op_slice_batch,
    "sum": _op_sum,
    "mean": _op_mean,
}

OP_KINDS = tuple(sorted(_OPS))


def op_forward(graph: Graph, kind: str, inputs, attrs=None) -> Tensor:
    """Run one forward op, record it in the graph, return its output."""
    if kind not in _OPS:
        raise GraphError(f"unknown op kind {kind!r}")
    attrs = attrs or {}
    if len(inputs) == 0:
        raise ShapeError(f"{kind}: no inputs")
    if len(inputs) > 1:
        _require_same_dtype(kind, *inputs)
    input_ids = tuple(graph.attach(t) for t in inputs)
    out_data, backward_fn = _OPS[kind](inputs, attrs)
    _finite_out(kind, out_data)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(out_data)
    out.requires_grad = needs
    out.grad = None
    out._graph = None
    out._gid = None
    return graph._register(kind, input_ids, out, backward_fn)


def backward(graph: Graph, loss: Tensor) -> dict:
    """Reverse sweep from ``loss``; returns {node id: gradient array}.

    Also fills .grad on every requires_grad tensor in the graph (zeros when
    the tensor does not influence the loss).
    """
    lid = graph.node_of(loss)
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {lid: np.ones_like(loss.data)}
    for node in reversed(graph.nodes[: lid + 1]):
        g = grads.get(node.nid)
        if g is None:
            continue
        tap = graph.taps.get(node.nid)
        if tap is not None:
            g = tap.apply(g)
            grads[node.nid] = g
        if node.backward_fn is None:
            continue
        for iid, ig in zip(node.input_ids, node.backward_fn(g)):
            if ig is None:
                continue
            acc = grads.get(iid)
            grads[iid] = ig if acc is None else acc + ig
    for node in graph.nodes:
        if node.tensor.requires_grad:
            g = grads.get(node.nid)
            node.tensor.grad = np.zeros_like(node.tensor.data) if g is None else g
            if node.nid not in grads:
                grads[node.nid] = node.tensor.grad
    return grads


def apply_tap(graph: Graph, tap: GradientTap) -> Graph:
    """Install a gradient tap; forward behavior is unchanged."""
    if not (0 <= tap.node_id < len(graph.nodes)):
        raise GraphError(f"apply_tap: no node {tap.node_id}")
    graph.taps[tap.node_id] = tap
    return graph


def grad_check(f, x: np.ndarray, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(graph, tensor) -> scalar Tensor`` must be evaluable at x +/- eps per
    coordinate. Use float64 input for tight tolerances.
    """
    if not (1e-4 <= eps <= 1e-2):
        raise ValueError(f"grad_check: eps {eps} outside [1e-4, 1e-2]")
    x = np.asarray(x)
    g = Graph()
    xt = Tensor(x.copy(), requires_grad=True, dtype=x.dtype)
    out = f(g, xt)
    if out.data.size != 1:
        raise GraphError("grad_check: f must be scalar-valued")
    backward(g, out)
    analytic = xt.grad.reshape(-1)

    flat = x.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        vp = f(Graph(), Tensor(xp.reshape(x.shape), dtype=x.dtype)).item()
        xm = flat.copy()
        xm[i] -= eps
        vm = f(Graph(), Tensor(xm.reshape(x.shape), dtype=x.dtype)).item()
        if not (np.isfinite(vp) and np.isfinite(vm)):
            raise NumericsError("grad_check: f non-finite at perturbed point")
        numeric[i] = (vp - vm) / (2.0 * eps)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))


# --- thin wrappers used by the network/loss code ------------------------


def add(g, a, b):
    return op_forward(g, "add", [a, b])


def sub(g, a, b):
    return op_forward(g, "sub", [a, b])


def mul(g, a, b):
    return op_forward(g, "mul", [a, b])


def smul(g, a, c):
    return op_forward(g, "smul", [a], {"c": float(c)})


def matmul(g, a, b):
    return op_forward(g, "matmul", [a, b])


def conv2d(g, x, k, bias=None, stride=1, pad=0):
    inputs = [x, k] if bias is None else [x, k, bias]
    return op_forward(g, "conv2d", inputs, {"stride": stride, "pad": pad})


def upsample2x(g, x):
    return op_forward(g, "upsample2x", [x])


def leaky_relu(g, x, alpha=0.2):
    return op_forward(g, "leaky_relu", [x], {"alpha": alpha})


def sigmoid(g, x):
    return op_forward(g, "sigmoid", [x])


def absval(g, x):
    return op_forward(g, "abs", [x])


def square(g, x):
    return op_forward(g, "square", [x])


def concat_ch(g, a, b):
    return op_forward(g, "concat_ch", [a, b])


def slice_batch(g, x, start, stop):
    return op_forward(g, "slice_batch", [x], {"start": start, "stop": stop})


def tsum(g, x):
    return op_forward(g, "sum", [x])


def tmean(g, x):
    return op_forward(g, "mean", [x])
