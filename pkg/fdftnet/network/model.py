"""The assembled detector.

The frozen backbone and the FTT both read the input image. Backbone features
are average-pooled to the FTT output resolution and concatenated with it along
channels; N stride-1 MBblockV3 blocks follow, then the optional channel
attention head and GAP -> dense -> sigmoid.
"""

import logging
from typing import List, Optional, Union

from ..core import ops
from ..core.tensor import Tensor
from ..errors import CheckpointMismatchError, ConfigError, ShapeMismatchError
from ..layers.linear import DenseParams, avg_pool2d, global_avg_pool
from ..layers.module import Module
from ..models.schemas import ModelConfig, ParameterReport
from .attention import ChannelAttention, channel_attention_forward
from .backbone import Backbone, BackboneFeatures
from .blocks.mbblock import MBBlockV3Params, mbblock_forward
from .ftt import FineTuneTransformer, ftt_forward

log = logging.getLogger(__name__)

BACKBONE_PREFIX = "backbone."
SECTIONS = ("backbone", "ftt", "mbblocks", "channel_attention", "head")


class DAFDFtNet(Module):
    checkpoint_kind = "model"
    frozen_prefixes = [BACKBONE_PREFIX]

    def __init__(self, config: ModelConfig, with_attention: bool = True):
        super().__init__()
        if config.ftt_repeats < 2:
            raise ConfigError("fusing backbone and FTT features needs ftt_repeats >= 2")
        self.config = config
        self.backbone = BackboneFeatures(
            config.backbone_kind, config.backbone_channels,
            bn_momentum=config.bn_momentum, bn_epsilon=config.bn_epsilon,
        )
        self.ftt = FineTuneTransformer(
            config.ftt_channels, with_attention=with_attention,
            bn_momentum=config.bn_momentum, bn_epsilon=config.bn_epsilon,
        )
        fused = self.backbone.out_channels + self.ftt.out_channels
        widths = [fused] + [config.mbblock_channels] * config.mbblock_repeats
        self.mbblocks: List[MBBlockV3Params] = [
            MBBlockV3Params(
                widths[i], widths[i + 1], config.mbblock_expansion, config.se_ratio, stride=1,
                bn_momentum=config.bn_momentum, bn_epsilon=config.bn_epsilon,
            )
            for i in range(config.mbblock_repeats)
        ]
        self.channel_attention: Optional[ChannelAttention] = (
            ChannelAttention() if config.use_channel_attention else None
        )
        self.head = DenseParams(config.mbblock_channels, 1)

    @property
    def pool_factor(self) -> int:
        # backbone features sit at R/4, the FTT output at R/2^M
        return 2 ** (self.config.ftt_repeats - 2)

    def freeze_backbone(self) -> None:
        self.backbone.freeze()

    def forward(self, batch: Tensor) -> Tensor:
        features = avg_pool2d(self.backbone(batch), self.pool_factor)
        x = ops.concat([features, ftt_forward(batch, self.ftt)], axis=1)
        for block in self.mbblocks:
            x = mbblock_forward(x, block, 1)
        if self.channel_attention is not None:
            x, _ = channel_attention_forward(x)
        return ops.sigmoid(self.head(global_avg_pool(x)))


def assemble(backbone_checkpoint, config: ModelConfig, seed: int, with_attention: bool = True) -> DAFDFtNet:
    """Build the detector around a pretrained backbone and freeze the backbone.

    ``backbone_checkpoint`` is a backbone ``Checkpoint`` or a ``Backbone``;
    its classifier head is dropped.
    """
    if isinstance(backbone_checkpoint, Backbone):
        source_kind, source_config = "backbone", backbone_checkpoint.config
        state = backbone_checkpoint.features.state_dict()
    else:
        source_kind, source_config = backbone_checkpoint.kind, backbone_checkpoint.config
        state = backbone_checkpoint.parameters("features.")
    if source_kind != "backbone":
        raise CheckpointMismatchError(f"expected a backbone checkpoint, got a {source_kind!r} checkpoint")
    for key in ("backbone_kind", "backbone_channels"):
        if getattr(source_config, key) != getattr(config, key):
            raise CheckpointMismatchError(
                f"checkpoint {key}={getattr(source_config, key)!r} does not match config {getattr(config, key)!r}"
            )

    model = DAFDFtNet(config, with_attention=with_attention)
    model.reset_parameters(seed)
    model.backbone.load_state_dict(state)
    model.freeze_backbone()
    log.info(
        "assembled model: %d trainable / %d frozen parameters",
        model.parameter_count(trainable_only=True),
        model.parameter_count() - model.parameter_count(trainable_only=True),
    )
    return model


def model_forward(m: Union[DAFDFtNet, Backbone], batch: Tensor, mode: str = "infer") -> Tensor:
    """Fake-probability per image, shape [B,1]."""
    resolution = m.config.input_resolution
    if batch.ndim != 4 or batch.shape[1:] != (3, resolution, resolution):
        raise ShapeMismatchError("model_forward", batch.shape, (3, resolution, resolution),
                                 reason="batch must be [B,3,R,R] at the configured resolution")
    m.set_mode(mode)
    return m(batch)


def parameter_report(model: DAFDFtNet) -> ParameterReport:
    sections = {name: 0 for name in SECTIONS}
    for name, p in model.named_parameters():
        section = name.split(".", 1)[0]
        sections[section] = sections.get(section, 0) + p.size
    trainable = model.parameter_count(trainable_only=True)
    return ParameterReport(sections=sections, trainable=trainable, frozen=model.parameter_count() - trainable)
