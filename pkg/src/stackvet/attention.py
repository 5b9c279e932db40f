"""Channel + spatial attention gates for convolutional feature maps.

Channel gate: squeeze the map with spatial average and max pooling, push both
descriptors through one shared two-layer MLP (hidden width max(1, C//r),
ReLU, no biases), add, and squash with a sigmoid. Spatial gate: concatenate
the channel-average and channel-max maps and convolve with a single 7x7
kernel (padding 3, no bias) before the sigmoid. The full block applies the
channel gate first, then the spatial gate to the already-reweighted map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    affine,
    concat_channels,
    conv2d,
    ew_mul,
    reduce,
    relu,
    reshape,
    sigmoid,
)


@dataclass
class CbamParams:
    """Weights for one attention block acting on C-channel maps."""

    w0: Parameter  # (hidden, C) squeeze
    w1: Parameter  # (C, hidden) excite
    conv7: Parameter  # (1, 2, 7, 7) spatial kernel
    channels: int
    reduction: int

    def parameters(self) -> list[Parameter]:
        return [self.w0, self.w1, self.conv7]


def make_cbam_params(
    channels: int,
    reduction: int = 16,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
    name: str = "cbam",
) -> CbamParams:
    """Initialize attention weights, uniform +-sqrt(1/fan_in)."""
    if channels < 1:
        raise ValueError(f"attention needs at least 1 channel, got {channels}")
    if reduction < 1:
        raise ValueError(f"reduction ratio must be >= 1, got {reduction}")
    rng = rng or np.random.default_rng(0)
    hidden = max(1, channels // reduction)

    def uniform(shape, fan_in, pname):
        bound = np.sqrt(1.0 / fan_in)
        return Parameter(rng.uniform(-bound, bound, size=shape), name=pname, dtype=dtype)

    return CbamParams(
        w0=uniform((hidden, channels), channels, f"{name}.w0"),
        w1=uniform((channels, hidden), hidden, f"{name}.w1"),
        conv7=uniform((1, 2, 7, 7), 2 * 7 * 7, f"{name}.conv7"),
        channels=channels,
        reduction=reduction,
    )


def _check_channels(f: Tensor, p: CbamParams, where: str) -> int:
    c_axis = f.ndim - 3
    if f.ndim not in (3, 4):
        raise ValueError(f"{where} expects a rank-3/4 feature map, got rank {f.ndim}")
    c = f.shape[c_axis]
    if c != p.channels:
        raise ValueError(f"{where} channel mismatch (axis {c_axis}): map has {c}, params expect {p.channels}")
    return c


def channel_attention(f: Tensor, p: CbamParams) -> Tensor:
    """Per-channel gate in (0,1), shape (C,1,1) or (N,C,1,1)."""
    c = _check_channels(f, p, "channel_attention")
    avg = reshape(reduce(f, "spatial", "avg"), (-1, c))
    mx = reshape(reduce(f, "spatial", "max"), (-1, c))

    def mlp(v):
        return affine(relu(affine(v, p.w0)), p.w1)

    gate = sigmoid(mlp(avg) + mlp(mx))
    if f.ndim == 4:
        return reshape(gate, (f.shape[0], c, 1, 1))
    return reshape(gate, (c, 1, 1))


def spatial_attention(f: Tensor, p: CbamParams) -> Tensor:
    """Per-pixel gate in (0,1), shape (1,H,W) or (N,1,H,W)."""
    _check_channels(f, p, "spatial_attention")
    avg = reduce(f, "channel", "avg")
    mx = reduce(f, "channel", "max")
    stacked = concat_channels(avg, mx)
    return sigmoid(conv2d(stacked, p.conv7, bias=None, padding=3))


def cbam(f: Tensor, p: CbamParams) -> Tensor:
    """Apply the channel gate, then the spatial gate to the reweighted map."""
    f1 = ew_mul(f, channel_attention(f, p))
    return ew_mul(f1, spatial_attention(f1, p))
