from typing import List, Optional, Sequence

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ConfigError, ShapeMismatchError
from ..layers.conv import SeparableConv2dParams
from ..layers.module import Module
from ..layers.norm import DEFAULT_EPSILON, DEFAULT_MOMENTUM, BatchNormState
from .attention import SelfAttentionParams, self_attention_forward


class FTTStage(Module):
    """Self-attention, then a stride-2 separable convolution with BN and ReLU."""

    def __init__(self, in_channels: int, out_channels: int, with_attention: bool = True,
                 bn_momentum: float = DEFAULT_MOMENTUM, bn_epsilon: float = DEFAULT_EPSILON):
        super().__init__()
        self.attention: Optional[SelfAttentionParams] = SelfAttentionParams(in_channels) if with_attention else None
        self.conv = SeparableConv2dParams(in_channels, out_channels, stride=2, bias=False)
        self.bn = BatchNormState(out_channels, bn_momentum, bn_epsilon)

    def forward(self, x: Tensor) -> Tensor:
        if self.attention is not None:
            x, _ = self_attention_forward(x, self.attention)
        return ops.relu(self.bn(self.conv(x)))


class FineTuneTransformer(Module):
    """Stride-1 separable stem followed by one downsampling stage per entry of ``channels``.

    ``with_attention=False`` builds the same network with the self-attention
    modules removed; every remaining parameter keeps its name.
    """

    def __init__(self, channels: Sequence[int], in_channels: int = 3, with_attention: bool = True,
                 bn_momentum: float = DEFAULT_MOMENTUM, bn_epsilon: float = DEFAULT_EPSILON):
        super().__init__()
        if not channels:
            raise ConfigError("the FTT needs at least one stage")
        channels = list(channels)
        self.stem = SeparableConv2dParams(in_channels, channels[0], stride=1, bias=False)
        self.stem_bn = BatchNormState(channels[0], bn_momentum, bn_epsilon)
        widths = [channels[0]] + channels
        self.stages: List[FTTStage] = [
            FTTStage(widths[i], widths[i + 1], with_attention, bn_momentum, bn_epsilon)
            for i in range(len(channels))
        ]
        self.with_attention = with_attention

    @property
    def repeats(self) -> int:
        return len(self.stages)

    @property
    def out_channels(self) -> int:
        return self.stages[-1].bn.gamma.shape[0]

    def forward(self, image: Tensor) -> Tensor:
        return ftt_forward(image, self)


def ftt_forward(image: Tensor, ftt: FineTuneTransformer) -> Tensor:
    """[B,3,R,R] -> [B,channels[-1],R/2^M,R/2^M]."""
    if image.ndim != 4:
        raise ShapeMismatchError("ftt_forward", image.shape, reason="expected [B,C,H,W]")
    factor = 2 ** ftt.repeats
    if image.shape[2] % factor or image.shape[3] % factor:
        raise ConfigError(f"FTT input resolution {image.shape[2:]} is not divisible by 2^{ftt.repeats}")
    x = ops.relu(ftt.stem_bn(ftt.stem(image)))
    for stage in ftt.stages:
        x = stage(x)
    return x
