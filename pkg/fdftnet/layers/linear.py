from ..core import ops
from ..core.tensor import Tensor
from ..errors import ShapeMismatchError
from .module import Module, Parameter, glorot_uniform, zeros


class DenseParams(Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.weight = Parameter((in_features, out_features), glorot_uniform(in_features, out_features))
        self.bias = Parameter((out_features,), zeros)

    def forward(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W + b for x [B,D], W [D,E], b [E]."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeMismatchError("dense", x.shape, weights.shape)
    if bias.shape != (weights.shape[1],):
        raise ShapeMismatchError("dense", weights.shape, bias.shape, reason="bias must be [E]")
    return ops.matmul(x, weights) + bias


def global_avg_pool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] per-channel spatial mean."""
    if x.ndim != 4:
        raise ShapeMismatchError("global_avg_pool", x.shape, reason="expected [B,C,H,W]")
    return ops.mean(x, axis=(2, 3))


def avg_pool2d(x: Tensor, kernel: int) -> Tensor:
    """Non-overlapping kernel x kernel average pooling."""
    return ops.avg_pool2d(x, kernel)
