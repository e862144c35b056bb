"""Desk-scale pretrained backbones.

Both kinds stack four 3x3 blocks (convolution, batch norm, ReLU) with stride 2
on the first and third block, taking [B,3,R,R] to [B,C,R/4,R/4]. ``plain-cnn``
uses full convolutions, ``sep-cnn`` depthwise separable ones.
"""

import logging
from typing import List, Union

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ConfigError
from ..layers.conv import Conv2dParams, SeparableConv2dParams
from ..layers.linear import DenseParams, global_avg_pool
from ..layers.module import Module
from ..layers.norm import BatchNormState
from ..models.schemas import ModelConfig

log = logging.getLogger(__name__)

BACKBONE_KINDS = ("plain-cnn", "sep-cnn")
BLOCK_STRIDES = (2, 1, 2, 1)


class BackboneBlock(Module):
    def __init__(self, kind: str, in_channels: int, out_channels: int, stride: int,
                 bn_momentum: float, bn_epsilon: float):
        super().__init__()
        if kind == "plain-cnn":
            self.conv: Union[Conv2dParams, SeparableConv2dParams] = Conv2dParams(
                in_channels, out_channels, kernel_size=3, stride=stride, bias=False)
        else:
            self.conv = SeparableConv2dParams(in_channels, out_channels, stride=stride, bias=False)
        self.bn = BatchNormState(out_channels, bn_momentum, bn_epsilon)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class BackboneFeatures(Module):
    def __init__(self, kind: str, channels: List[int], in_channels: int = 3,
                 bn_momentum: float = 0.99, bn_epsilon: float = 1e-3):
        super().__init__()
        widths = [in_channels] + list(channels)
        self.blocks = [
            BackboneBlock(kind, widths[i], widths[i + 1], BLOCK_STRIDES[i], bn_momentum, bn_epsilon)
            for i in range(len(channels))
        ]

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].bn.gamma.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Backbone(Module):
    """Feature stack plus a GAP -> dense -> sigmoid head for standalone pretraining."""

    checkpoint_kind = "backbone"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.kind = config.backbone_kind
        self.features = BackboneFeatures(
            config.backbone_kind, config.backbone_channels,
            bn_momentum=config.bn_momentum, bn_epsilon=config.bn_epsilon,
        )
        self.head = DenseParams(self.features.out_channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.head(global_avg_pool(self.features(x))))


def build_backbone(kind: str, config: ModelConfig, seed: int) -> Backbone:
    if kind not in BACKBONE_KINDS:
        raise ConfigError(f"unknown backbone kind {kind!r}; expected one of {BACKBONE_KINDS}")
    if kind != config.backbone_kind:
        config = config.model_copy(update={"backbone_kind": kind})
    backbone = Backbone(config)
    backbone.reset_parameters(seed)
    log.info("built %s backbone with %d parameters (seed=%d)", kind, backbone.parameter_count(), seed)
    return backbone
