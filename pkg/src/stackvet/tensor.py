"""Reverse-mode autodiff over numpy arrays, sized for small image CNNs.

Forward ops record backward closures on an implicit operation graph;
``Tensor.backward()`` linearizes that graph in reverse topological order (the
tape) and visits every node exactly once, accumulating gradients into the
leaves. Layout is channel-first: single samples are ``(C, H, W)``, batches
``(N, C, H, W)``. Training runs in float32; gradient checking requires
float64 (see ``finite_diff_check``).

Also home of the tensor file format: ``write_mdt``/``read_mdt`` store one
array as magic ``MDT1``, little-endian u32 rank, u32 dims, then row-major
float32 payload, bit-exact on round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A numpy array plus gradient buffer and a backward closure."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------------

    def _acc(self, g: np.ndarray) -> None:
        """Accumulate a gradient contribution (repeated backward adds)."""
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.ndim != 0:
            raise ValueError(f"backward requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")
        # Build the tape: reverse topological order over grad-requiring nodes.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._acc(np.asarray(1.0, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn()

    # -- operator sugar (same-shape elementwise plus python scalars) ----------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


class Parameter(Tensor):
    """A named leaf tensor updated by the optimizer; grad is its accumulator."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.data.dtype})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; tensor operands must have identical shapes."""
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        out = _make(a.data + a.data.dtype.type(b), (a,))

        def fn():
            if a.requires_grad:
                a._acc(out.grad)

        out._backward_fn = fn if out.requires_grad else None
        return out
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _make(a.data + b.data, (a, b))

    def fn():
        if a.requires_grad:
            a._acc(out.grad)
        if b.requires_grad:
            b._acc(out.grad)

    out._backward_fn = fn if out.requires_grad else None
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a scalar or a same-shape tensor.

    Broadcast products used by attention gates go through ``ew_mul``.
    """
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = a.data.dtype.type(b)
        out = _make(a.data * c, (a,))

        def fn():
            if a.requires_grad:
                a._acc(out.grad * c)

        out._backward_fn = fn if out.requires_grad else None
        return out
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = _make(a.data * b.data, (a, b))

    def fn():
        if a.requires_grad:
            a._acc(out.grad * b.data)
        if b.requires_grad:
            b._acc(out.grad * a.data)

    out._backward_fn = fn if out.requires_grad else None
    return out


def ew_mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with the two attention broadcast patterns.

    Accepts b of the same shape as a, or a channel gate ``(C,1,1)`` /
    ``(N,C,1,1)``, or a spatial gate ``(1,H,W)`` / ``(N,1,H,W)`` against a
    feature map ``(..., C, H, W)``. Anything else is rejected: no implicit
    broadcasting.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (3, 4):
        raise ValueError(f"ew_mul expects a rank-3/4 feature map, got rank {a.ndim}")
    c_axis, h_axis, w_axis = a.ndim - 3, a.ndim - 2, a.ndim - 1
    same = a.shape == b.shape
    chan_gate = (
        b.ndim == a.ndim
        and b.shape[: c_axis + 1] == a.shape[: c_axis + 1]
        and b.shape[h_axis] == 1
        and b.shape[w_axis] == 1
    )
    spat_gate = (
        b.ndim == a.ndim
        and b.shape[:c_axis] == a.shape[:c_axis]
        and b.shape[c_axis] == 1
        and b.shape[h_axis:] == a.shape[h_axis:]
    )
    if not (same or chan_gate or spat_gate):
        raise ValueError(f"ew_mul cannot broadcast {b.shape} onto {a.shape}")
    out = _make(a.data * b.data, (a, b))

    if same:
        reduce_axes: tuple[int, ...] = ()
    elif chan_gate:
        reduce_axes = (h_axis, w_axis)
    else:
        reduce_axes = (c_axis,)

    def fn():
        if a.requires_grad:
            a._acc(out.grad * b.data)
        if b.requires_grad:
            gb = out.grad * a.data
            if reduce_axes:
                gb = gb.sum(axis=reduce_axes, keepdims=True)
            b._acc(gb)

    out._backward_fn = fn if out.requires_grad else None
    return out


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _make(np.log(x.data), (x,))

    def fn():
        if x.requires_grad:
            x._acc(out.grad / x.data)

    out._backward_fn = fn if out.requires_grad else None
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is identity inside, zero outside."""
    x = _as_tensor(x)
    out = _make(np.clip(x.data, lo, hi), (x,))
    inside = (x.data >= lo) & (x.data <= hi)

    def fn():
        if x.requires_grad:
            x._acc(out.grad * inside)

    out._backward_fn = fn if out.requires_grad else None
    return out


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in (shape if isinstance(shape, Iterable) else (shape,)))
    old = x.shape
    out = _make(x.data.reshape(shape), (x,))

    def fn():
        if x.requires_grad:
            x._acc(out.grad.reshape(old))

    out._backward_fn = fn if out.requires_grad else None
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    out = _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,))

    def fn():
        if x.requires_grad:
            x._acc(np.broadcast_to(out.grad, x.shape))

    out._backward_fn = fn if out.requires_grad else None
    return out


def tmean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    n = x.data.size
    out = _make(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,))

    def fn():
        if x.requires_grad:
            x._acc(np.broadcast_to(out.grad / n, x.shape))

    out._backward_fn = fn if out.requires_grad else None
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis of (C,H,W) or (N,C,H,W) tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise ValueError(f"concat_channels expects matching rank-3/4 inputs, got {a.shape} and {b.shape}")
    axis = a.ndim - 3
    if a.shape[a.ndim - 2 :] != b.shape[b.ndim - 2 :]:
        raise ValueError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 4 and a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_channels batch mismatch (axis 0): {a.shape[0]} vs {b.shape[0]}")
    ca = a.shape[axis]
    out = _make(np.concatenate([a.data, b.data], axis=axis), (a, b))

    def fn():
        ga, gb = np.split(out.grad, [ca], axis=axis)
        if a.requires_grad:
            a._acc(ga)
        if b.requires_grad:
            b._acc(gb)

    out._backward_fn = fn if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _make(np.maximum(x.data, 0), (x,))
    mask = x.data > 0

    def fn():
        if x.requires_grad:
            x._acc(out.grad * mask)

    out._backward_fn = fn if out.requires_grad else None
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # Split by sign for overflow-free exponentials.
    d = x.data
    pos = d >= 0
    z = np.empty_like(d)
    z[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    z[~pos] = ez / (1.0 + ez)
    out = _make(z, (x,))

    def fn():
        if x.requires_grad:
            x._acc(out.grad * z * (1.0 - z))

    out._backward_fn = fn if out.requires_grad else None
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Apply a named activation: 'relu' or 'sigmoid'."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    """Promote (C,H,W) to (1,C,H,W); report whether we did."""
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected rank-3 or rank-4 input, got rank {x.ndim}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """2D cross-correlation, stride 1, square odd kernel, zero padding.

    Input (C,H,W) or (N,C,H,W); weight (O,C,K,K); bias (O,) or None.
    Output spatial size is H-K+1+2*padding. Implemented as im2col + GEMM.
    """
    x = _as_tensor(x)
    xb, squeezed = _as_batch(x)
    w = _as_tensor(weight)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d weight must be (O,C,K,K) with square kernel, got {w.shape}")
    n, c, h, wd = xb.shape
    o, ci, k, _ = w.shape
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    if ci != c:
        raise ValueError(f"conv2d channel mismatch (axis 1): input has {c}, weight expects {ci}")
    p = int(padding)
    ho, wo = h - k + 1 + 2 * p, wd - k + 1 + 2 * p
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be empty: input {h}x{wd}, kernel {k}, padding {p}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"conv2d bias must be ({o},), got {bias.shape}")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else xb.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, c * k * k)
    outmat = cols @ wmat.T
    if bias is not None:
        outmat = outmat + bias.data
    data = outmat.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    parents = (xb, w) if bias is None else (xb, w, bias)
    out = _make(data, parents)

    def fn():
        g = out.grad
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        if w.requires_grad:
            w._acc((gmat.T @ cols).reshape(o, c, k, k))
        if bias is not None and bias.requires_grad:
            bias._acc(gmat.sum(axis=0))
        if xb.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + ho, j : j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            xb._acc(gxp[:, :, p : p + h, p : p + wd] if p else gxp)

    out._backward_fn = fn if out.requires_grad else None
    return reshape(out, out.shape[1:]) if squeezed else out


def pool2d(x: Tensor, window: int = 2, kind: str = "max") -> Tensor:
    """Non-overlapping 2D pooling; spatial dims must divide the window."""
    if kind not in ("max", "avg"):
        raise ValueError(f"pool2d kind must be 'max' or 'avg', got {kind!r}")
    x = _as_tensor(x)
    xb, squeezed = _as_batch(x)
    n, c, h, wd = xb.shape
    w = int(window)
    if w < 1:
        raise ValueError(f"pool2d window must be >= 1, got {w}")
    if h % w or wd % w:
        raise ValueError(f"pool2d window {w} does not divide spatial dims {h}x{wd}")
    ho, wo = h // w, wd // w
    tiles = xb.data.reshape(n, c, ho, w, wo, w).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, w * w)

    if kind == "max":
        idx = tiles.argmax(axis=-1)
        data = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    else:
        data = tiles.mean(axis=-1)
    out = _make(data, (xb,))

    def fn():
        g = out.grad
        gt = np.zeros_like(tiles)
        if kind == "max":
            np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        else:
            gt += (g / (w * w))[..., None]
        gx = gt.reshape(n, c, ho, wo, w, w).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wd)
        xb._acc(gx)

    out._backward_fn = fn if out.requires_grad else None
    return reshape(out, out.shape[1:]) if squeezed else out


def reduce(x: Tensor, axis_scope: str, kind: str) -> Tensor:
    """Average or max over the spatial or channel scope, keeping dims.

    spatial: (..,C,H,W) -> (..,C,1,1); channel: (..,C,H,W) -> (..,1,H,W).
    """
    if axis_scope not in ("spatial", "channel"):
        raise ValueError(f"reduce axis_scope must be 'spatial' or 'channel', got {axis_scope!r}")
    if kind not in ("avg", "max"):
        raise ValueError(f"reduce kind must be 'avg' or 'max', got {kind!r}")
    x = _as_tensor(x)
    xb, squeezed = _as_batch(x)
    n, c, h, w = xb.shape
    if axis_scope == "spatial":
        flat = xb.data.reshape(n, c, h * w)
        red_n = h * w
    else:
        flat = xb.data.transpose(0, 2, 3, 1).reshape(n, h * w, c)
        red_n = c

    if kind == "max":
        idx = flat.argmax(axis=-1)
        vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    else:
        vals = flat.mean(axis=-1)

    if axis_scope == "spatial":
        data = vals.reshape(n, c, 1, 1)
    else:
        data = vals.reshape(n, 1, h, w)
    out = _make(data, (xb,))

    def fn():
        if axis_scope == "spatial":
            g = out.grad.reshape(n, c)
        else:
            g = out.grad.reshape(n, h * w)
        gflat = np.zeros_like(flat)
        if kind == "max":
            np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        else:
            gflat += (g / red_n)[..., None]
        if axis_scope == "spatial":
            gx = gflat.reshape(n, c, h, w)
        else:
            gx = gflat.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        xb._acc(gx)

    out._backward_fn = fn if out.requires_grad else None
    return reshape(out, out.shape[1:]) if squeezed else out


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected map: (..,F) @ weight(M,F).T + bias(M,)."""
    x, w = _as_tensor(x), _as_tensor(weight)
    if w.ndim != 2:
        raise ValueError(f"affine weight must be rank 2 (M,F), got {w.shape}")
    if x.ndim not in (1, 2):
        raise ValueError(f"affine input must be rank 1 or 2, got rank {x.ndim}")
    m, f = w.shape
    if x.shape[-1] != f:
        raise ValueError(f"affine feature mismatch (last axis): input has {x.shape[-1]}, weight expects {f}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (m,):
            raise ValueError(f"affine bias must be ({m},), got {bias.shape}")
    data = x.data @ w.data.T
    if bias is not None:
        data = data + bias.data
    parents = (x, w) if bias is None else (x, w, bias)
    out = _make(data, parents)

    def fn():
        g = out.grad
        g2 = g.reshape(-1, m)
        x2 = x.data.reshape(-1, f)
        if x.requires_grad:
            x._acc((g2 @ w.data).reshape(x.shape))
        if w.requires_grad:
            w._acc(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            bias._acc(g2.sum(axis=0))

    out._backward_fn = fn if out.requires_grad else None
    return out


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (not parameters)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def initial(cls, num_features: int, dtype=DEFAULT_DTYPE, momentum: float = 0.1, eps: float = 1e-5):
        return cls(
            running_mean=np.zeros(num_features, dtype=dtype),
            running_var=np.ones(num_features, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Per-channel batch normalization over (N,C,H,W) or per-feature over (N,F).

    Train mode normalizes with biased batch statistics (batch size >= 2) and
    updates the running stats in place: r <- (1-momentum)*r + momentum*batch.
    Infer mode normalizes with the running statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim == 4:
        c = x.shape[1]
        axes: tuple[int, ...] = (0, 2, 3)
        pshape = (1, c, 1, 1)
    elif x.ndim == 2:
        c = x.shape[1]
        axes = (0,)
        pshape = (1, c)
    else:
        raise ValueError(f"batch_norm expects rank-2 or rank-4 input, got rank {x.ndim}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm gamma/beta must be ({c},), got {gamma.shape} and {beta.shape}")
    eps = state.eps

    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError(f"batch_norm train mode needs batch size >= 2, got {x.shape[0]}")
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)  # biased
        inv = 1.0 / np.sqrt(v + eps)
        xhat = (x.data - m.reshape(pshape)) * inv.reshape(pshape)
        mom = state.momentum
        state.running_mean *= 1.0 - mom
        state.running_mean += mom * m.astype(state.running_mean.dtype)
        state.running_var *= 1.0 - mom
        state.running_var += mom * v.astype(state.running_var.dtype)
    else:
        inv = 1.0 / np.sqrt(state.running_var.astype(x.data.dtype) + eps)
        xhat = (x.data - state.running_mean.reshape(pshape).astype(x.data.dtype)) * inv.reshape(pshape)

    data = gamma.data.reshape(pshape) * xhat + beta.data.reshape(pshape)
    out = _make(data, (x, gamma, beta))
    count = int(np.prod([x.shape[a] for a in axes]))

    def fn():
        g = out.grad
        if gamma.requires_grad:
            gamma._acc((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._acc(g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(pshape)
            if mode == "train":
                s1 = gxhat.sum(axis=axes, keepdims=True)
                s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (inv.reshape(pshape) / count) * (count * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv.reshape(pshape)
            x._acc(gx)

    out._backward_fn = fn if out.requires_grad else None
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, mode: str) -> Tensor:
    """Inverted dropout: train mode zeroes each element with prob rate and
    scales survivors by 1/(1-rate); infer mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if mode not in ("train", "infer"):
        raise ValueError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    x = _as_tensor(x)
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout train mode requires an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    scale = x.data.dtype.type(1.0 / (1.0 - rate))
    out = _make(x.data * keep * scale, (x,))

    def fn():
        if x.requires_grad:
            x._acc(out.grad * keep * scale)

    out._backward_fn = fn if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-4,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backward gradients of scalar f() against central differences.

    All params must be float64. Returns the maximum relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-3) over the checked
    coordinates; the 1e-3 floor turns the comparison into an absolute check
    for near-zero coordinates, where float64 cancellation noise in the
    difference quotient would otherwise masquerade as gradient error. When
    max_coords_per_param is set, that many coordinates per parameter are
    sampled with rng instead of checking exhaustively.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"finite_diff_check requires float64 parameters, got {p.data.dtype}")
    if max_coords_per_param is not None and rng is None:
        rng = np.random.default_rng(0)

    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f().data)
            flat[i] = orig - step
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(gflat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if rel > worst:
                worst = rel
    return worst


# ---------------------------------------------------------------------------
# tensor file format
# ---------------------------------------------------------------------------

MDT_MAGIC = b"MDT1"
_MAX_RANK = 16


def write_mdt(path, array: np.ndarray) -> None:
    """Write one array: magic, LE u32 rank, LE u32 dims, row-major f32 LE."""
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MDT_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<I", d))
        fh.write(arr.tobytes(order="C"))


def read_mdt(path) -> np.ndarray:
    """Read one array written by write_mdt; malformed files raise ValueError."""
    with open(path, "rb") as fh:
        blob = fh.read()
    arr, offset = decode_mdt(blob, 0)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after tensor payload")
    return arr


def encode_mdt(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    head = [MDT_MAGIC, struct.pack("<I", arr.ndim)]
    head += [struct.pack("<I", d) for d in arr.shape]
    return b"".join(head) + arr.tobytes(order="C")


def decode_mdt(blob: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor record starting at offset; return (array, next offset)."""
    if blob[offset : offset + 4] != MDT_MAGIC:
        raise ValueError(f"bad tensor magic at offset {offset}")
    offset += 4
    if offset + 4 > len(blob):
        raise ValueError("truncated tensor header (rank)")
    (ndim,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if ndim > _MAX_RANK:
        raise ValueError(f"tensor rank {ndim} exceeds limit {_MAX_RANK}")
    if offset + 4 * ndim > len(blob):
        raise ValueError("truncated tensor header (dims)")
    dims = struct.unpack_from(f"<{ndim}I" if ndim else "<0I", blob, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    nbytes = 4 * count
    if offset + nbytes > len(blob):
        raise ValueError(f"truncated tensor payload: need {nbytes} bytes, have {len(blob) - offset}")
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
    return arr, offset + nbytes
