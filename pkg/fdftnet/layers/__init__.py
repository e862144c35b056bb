"""Neural building blocks: convolutions, batch normalization, activations,
squeeze-and-excitation, pooling and dense layers."""

from ..core.ops import h_swish, hard_sigmoid, relu, relu6, sigmoid
from .conv import Conv2dParams, SeparableConv2dParams, conv2d, depthwise_conv2d, separable_conv2d
from .excite import SqueezeExciteParams, squeeze_excite
from .linear import DenseParams, avg_pool2d, dense, global_avg_pool
from .module import Module, Parameter, glorot_uniform, ones, zeros
from .norm import BatchNormState, batch_norm

__all__ = [
    "BatchNormState",
    "Conv2dParams",
    "DenseParams",
    "Module",
    "Parameter",
    "SeparableConv2dParams",
    "SqueezeExciteParams",
    "avg_pool2d",
    "batch_norm",
    "conv2d",
    "dense",
    "depthwise_conv2d",
    "global_avg_pool",
    "glorot_uniform",
    "h_swish",
    "hard_sigmoid",
    "ones",
    "relu",
    "relu6",
    "separable_conv2d",
    "sigmoid",
    "squeeze_excite",
    "zeros",
]
