"""Spatial self-attention and parameter-free channel attention.

Spatial: with f, g, h the 1x1 projections of x flattened over the N = H*W
positions, alpha[b, j, i] = softmax_i(f_i . g_j) is the distribution over
source positions i for output position j, o_j = sum_i alpha[j, i] h_i and
y = gamma * o + x with gamma starting at 0.

Channel: with X the [C, N] reshape of x, beta[b, j, i] = softmax_i(X_j . X_i),
p_j = sum_i beta[j, i] X_i and y = p + x.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ConfigError, ShapeMismatchError
from ..layers.conv import Conv2dParams, conv2d
from ..layers.module import Module, Parameter, zeros

QK_REDUCTION = 8


@dataclass
class SpatialAttentionMap:
    alpha: Tensor  # [B, N, N]

    def row_sums(self) -> np.ndarray:
        return self.alpha.data.sum(axis=2)


@dataclass
class ChannelAttentionMap:
    beta: Tensor  # [B, C, C]

    def row_sums(self) -> np.ndarray:
        return self.beta.data.sum(axis=2)


class SelfAttentionParams(Module):
    def __init__(self, channels: int):
        super().__init__()
        if channels < QK_REDUCTION or channels % QK_REDUCTION:
            raise ConfigError(f"self-attention needs channels divisible by {QK_REDUCTION}, got {channels}")
        reduced = channels // QK_REDUCTION
        self.f = Conv2dParams(channels, reduced, kernel_size=1)
        self.g = Conv2dParams(channels, reduced, kernel_size=1)
        self.h = Conv2dParams(channels, channels, kernel_size=1)
        self.gamma = Parameter((1,), zeros)

    @property
    def channels(self) -> int:
        return self.h.out_channels

    def forward(self, x: Tensor) -> Tensor:
        y, _ = self_attention_forward(x, self)
        return y


def self_attention_forward(x: Tensor, p: SelfAttentionParams) -> Tuple[Tensor, SpatialAttentionMap]:
    if x.ndim != 4:
        raise ShapeMismatchError("self_attention", x.shape, reason="expected [B,C,H,W]")
    b, c, height, width = x.shape
    if c % QK_REDUCTION:
        raise ConfigError(f"self-attention needs channels divisible by {QK_REDUCTION}, got {c}")
    if c != p.channels:
        raise ShapeMismatchError("self_attention", x.shape, p.h.weight.shape, reason="channel mismatch")
    n = height * width
    reduced = c // QK_REDUCTION

    f = ops.reshape(conv2d(x, p.f), (b, reduced, n))
    g = ops.reshape(conv2d(x, p.g), (b, reduced, n))
    h = ops.reshape(conv2d(x, p.h), (b, c, n))

    logits = ops.batch_dot(ops.transpose(g, (0, 2, 1)), f)  # [B, j, i]
    alpha = ops.softmax(logits, axis=2)
    o = ops.batch_dot(h, ops.transpose(alpha, (0, 2, 1)))  # [B, C, j]
    y = p.gamma * ops.reshape(o, (b, c, height, width)) + x
    return y, SpatialAttentionMap(alpha)


class ChannelAttention(Module):
    """Channel attention head; it has no parameters."""

    def forward(self, x: Tensor) -> Tensor:
        y, _ = channel_attention_forward(x)
        return y


def channel_attention_forward(x: Tensor) -> Tuple[Tensor, ChannelAttentionMap]:
    if x.ndim != 4:
        raise ShapeMismatchError("channel_attention", x.shape, reason="expected [B,C,H,W]")
    b, c, height, width = x.shape
    flat = ops.reshape(x, (b, c, height * width))
    energy = ops.batch_dot(flat, ops.transpose(flat, (0, 2, 1)))
    beta = ops.softmax(energy, axis=2)
    mixed = ops.batch_dot(beta, flat)
    return ops.reshape(mixed, x.shape) + x, ChannelAttentionMap(beta)
