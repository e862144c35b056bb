"""Attention modules and the assembled detector."""

from .attention import (
    ChannelAttention,
    ChannelAttentionMap,
    SelfAttentionParams,
    SpatialAttentionMap,
    channel_attention_forward,
    self_attention_forward,
)
from .backbone import BACKBONE_KINDS, Backbone, build_backbone
from .blocks import MBBlockV3Params, mbblock_forward
from .ftt import FineTuneTransformer, ftt_forward
from .model import DAFDFtNet, assemble, model_forward, parameter_report

__all__ = [
    "BACKBONE_KINDS",
    "Backbone",
    "ChannelAttention",
    "ChannelAttentionMap",
    "DAFDFtNet",
    "FineTuneTransformer",
    "MBBlockV3Params",
    "SelfAttentionParams",
    "SpatialAttentionMap",
    "assemble",
    "build_backbone",
    "channel_attention_forward",
    "ftt_forward",
    "mbblock_forward",
    "model_forward",
    "parameter_report",
    "self_attention_forward",
]
