from ..core import ops
from ..core.tensor import Tensor
from ..errors import ConfigError, ShapeMismatchError
from .module import Module, Parameter, glorot_uniform, zeros

KERNEL_SIZES = (1, 3)


class Conv2dParams(Module):
    """Weights [C_out, C_in, k, k] with an optional bias [C_out]."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 padding: str = "same", bias: bool = True):
        super().__init__()
        if kernel_size not in KERNEL_SIZES:
            raise ConfigError(f"conv kernel size must be one of {KERNEL_SIZES}, got {kernel_size}")
        if padding not in ("same", "valid"):
            raise ConfigError(f"padding must be 'same' or 'valid', got {padding!r}")
        k = kernel_size
        self.weight = Parameter(
            (out_channels, in_channels, k, k),
            glorot_uniform(in_channels * k * k, out_channels * k * k),
        )
        self.bias = Parameter((out_channels,), zeros) if bias else None
        self.stride = stride
        self.padding = padding

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self)


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Cross-correlation; "same" keeps H,W at stride 1 and yields ceil(H/stride) otherwise."""
    if x.ndim == 4 and x.shape[1] != p.in_channels:
        raise ShapeMismatchError("conv2d", x.shape, p.weight.shape, reason="channel mismatch")
    out = ops.conv2d_raw(x, p.weight, stride=p.stride, padding=p.padding)
    if p.bias is not None:
        out = out + ops.reshape(p.bias, (1, p.out_channels, 1, 1))
    return out


class SeparableConv2dParams(Module):
    """Depthwise 3x3 kernel [C,1,3,3] followed by a 1x1 pointwise convolution."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, bias: bool = True):
        super().__init__()
        self.depthwise = Parameter((in_channels, 1, 3, 3), glorot_uniform(9, 9))
        self.pointwise = Conv2dParams(in_channels, out_channels, kernel_size=1, bias=bias)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return separable_conv2d(x, self.depthwise, self.pointwise, self.stride)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    if x.ndim == 4 and kernel.ndim == 4 and x.shape[1] != kernel.shape[0]:
        raise ShapeMismatchError("depthwise_conv2d", x.shape, kernel.shape, reason="channel mismatch")
    return ops.depthwise_conv2d_raw(x, kernel, stride=stride, padding="same")


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Conv2dParams, stride: int = 1) -> Tensor:
    """Per-channel 3x3 convolution (carrying the stride) then 1x1 channel mixing."""
    if pointwise.weight.shape[2:] != (1, 1):
        raise ShapeMismatchError("separable_conv2d", pointwise.weight.shape, reason="pointwise kernel must be 1x1")
    if pointwise.stride != 1:
        raise ConfigError("separable_conv2d: the stride belongs to the depthwise stage")
    return conv2d(depthwise_conv2d(x, depthwise, stride), pointwise)

