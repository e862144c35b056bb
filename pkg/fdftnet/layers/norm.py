import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ShapeMismatchError
from .module import Module, Parameter, ones, zeros

DEFAULT_MOMENTUM = 0.99
DEFAULT_EPSILON = 1e-3


class BatchNormState(Module):
    """Per-channel affine normalization with momentum-tracked running statistics.

    Train mode normalizes with the (biased) batch statistics and updates
    ``running = momentum * running + (1 - momentum) * batch``; infer mode uses
    the running statistics. A frozen state always behaves as infer mode.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = DEFAULT_MOMENTUM, epsilon: float = DEFAULT_EPSILON):
        super().__init__()
        if not 0 < momentum < 1:
            raise ValueError(f"batch norm momentum must lie in (0,1), got {momentum}")
        self.gamma = Parameter((channels,), ones)
        self.beta = Parameter((channels,), zeros)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.epsilon = epsilon

    def reset_buffers(self) -> None:
        self.running_mean = np.zeros_like(self.running_mean)
        self.running_var = np.ones_like(self.running_var)

    @property
    def effective_mode(self) -> str:
        return "infer" if self.frozen else self.mode

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self)


def batch_norm(x: Tensor, s: BatchNormState) -> Tensor:
    if x.ndim != 4 or x.shape[1] != s.gamma.shape[0]:
        raise ShapeMismatchError("batch_norm", x.shape, s.gamma.shape, reason="expected [B,C,H,W] with matching C")
    if s.effective_mode == "infer":
        return ops.batch_norm_infer(x, s.gamma, s.beta, s.running_mean, s.running_var, s.epsilon)
    if x.shape[0] < 2:
        raise ShapeMismatchError("batch_norm", x.shape, reason="train mode needs a batch of at least 2")
    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    m = s.momentum
    s.running_mean = (m * s.running_mean + (1 - m) * mean).astype(s.running_mean.dtype)
    s.running_var = (m * s.running_var + (1 - m) * var).astype(s.running_var.dtype)
    return ops.batch_norm_train(x, s.gamma, s.beta, mean, var, s.epsilon)
