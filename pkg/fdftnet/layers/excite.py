from ..core import ops
from ..core.tensor import Tensor
from ..errors import ConfigError, ShapeMismatchError
from .linear import DenseParams, dense, global_avg_pool
from .module import Module

DEFAULT_SE_RATIO = 4


class SqueezeExciteParams(Module):
    def __init__(self, channels: int, reduction_ratio: int = DEFAULT_SE_RATIO):
        super().__init__()
        if reduction_ratio < 1 or channels % reduction_ratio:
            raise ConfigError(f"SE reduction ratio {reduction_ratio} does not divide {channels} channels")
        self.reduction_ratio = reduction_ratio
        self.reduce = DenseParams(channels, channels // reduction_ratio)
        self.expand = DenseParams(channels // reduction_ratio, channels)

    @property
    def channels(self) -> int:
        return self.reduce.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return squeeze_excite(x, self)


def squeeze_excite(x: Tensor, p: SqueezeExciteParams) -> Tensor:
    """x * hard_sigmoid(expand(relu6(reduce(GAP(x))))), gate broadcast over H,W."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeMismatchError("squeeze_excite", x.shape, reason=f"expected {p.channels} channels")
    if x.shape[1] % p.reduction_ratio:
        raise ConfigError(f"SE reduction ratio {p.reduction_ratio} does not divide {x.shape[1]} channels")
    squeezed = global_avg_pool(x)
    hidden = ops.relu6(dense(squeezed, p.reduce.weight, p.reduce.bias))
    gate = ops.hard_sigmoid(dense(hidden, p.expand.weight, p.expand.bias))
    return x * ops.reshape(gate, (x.shape[0], x.shape[1], 1, 1))
