from ...core import ops
from ...core.tensor import Tensor
from ...errors import ConfigError
from ...layers.conv import Conv2dParams, conv2d, depthwise_conv2d
from ...layers.excite import SqueezeExciteParams, squeeze_excite
from ...layers.module import Module, Parameter, glorot_uniform
from ...layers.norm import DEFAULT_EPSILON, DEFAULT_MOMENTUM, BatchNormState, batch_norm

STRIDES = (1, 2)


class MBBlockV3Params(Module):
    """Inverted residual: 1x1 expand, 3x3 depthwise, SE gate, 1x1 project.

    Convolutions feeding a batch norm carry no bias.
    """

    def __init__(self, in_channels: int, out_channels: int, expansion: int = 6, se_ratio: int = 4,
                 stride: int = 1, bn_momentum: float = DEFAULT_MOMENTUM, bn_epsilon: float = DEFAULT_EPSILON):
        super().__init__()
        if stride not in STRIDES:
            raise ConfigError(f"MBblockV3 stride must be one of {STRIDES}, got {stride}")
        hidden = in_channels * expansion
        self.expand = Conv2dParams(in_channels, hidden, kernel_size=1, bias=False)
        self.expand_bn = BatchNormState(hidden, bn_momentum, bn_epsilon)
        self.depthwise = Parameter((hidden, 1, 3, 3), glorot_uniform(9, 9))
        self.depthwise_bn = BatchNormState(hidden, bn_momentum, bn_epsilon)
        self.se = SqueezeExciteParams(hidden, se_ratio)
        self.project = Conv2dParams(hidden, out_channels, kernel_size=1, bias=False)
        self.project_bn = BatchNormState(out_channels, bn_momentum, bn_epsilon)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return mbblock_forward(x, self, self.stride)


def mbblock_forward(x: Tensor, params: MBBlockV3Params, stride: int) -> Tensor:
    """Residual added iff stride is 1 and channels are preserved; stride 2 halves H and W."""
    if stride not in STRIDES:
        raise ConfigError(f"MBblockV3 stride must be one of {STRIDES}, got {stride}")
    out = ops.h_swish(batch_norm(conv2d(x, params.expand), params.expand_bn))
    out = ops.h_swish(batch_norm(depthwise_conv2d(out, params.depthwise, stride), params.depthwise_bn))
    out = squeeze_excite(out, params.se)
    out = batch_norm(conv2d(out, params.project), params.project_bn)
    if stride == 1 and out.shape[1] == x.shape[1]:
        out = out + x
    return out
