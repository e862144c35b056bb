"""Differentiable operations.

Each operation is a ``Function`` subclass with a hand-written backward rule and
a thin functional wrapper that validates shapes. Convolutions use strided
window views (im2col without copies on the forward pass) and scatter the
window gradients back on the backward pass.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import AxisError, ShapeMismatchError
from .tensor import Function, Tensor

log = logging.getLogger(__name__)

Scalar = Union[int, float]

BCE_CLAMP = 1e-7

_kinks = threading.local()


@contextmanager
def track_kinks() -> Iterator[List[np.ndarray]]:
    """Record which linear piece every input of a piecewise op falls in."""
    previous = getattr(_kinks, "log", None)
    record: List[np.ndarray] = []
    _kinks.log = record
    try:
        yield record
    finally:
        _kinks.log = previous


def _record_kinks(x: np.ndarray, points: Tuple[float, ...]) -> None:
    record = getattr(_kinks, "log", None)
    if record is not None:
        record.append(np.digitize(x, points).astype(np.int8))


def _coerce(value: Union[Tensor, Scalar], like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


# *** elementwise arithmetic ***

class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            self.unbroadcast(grad * self.b, self.a.shape),
            self.unbroadcast(grad * self.a, self.b.shape),
        )


def add(a: Union[Tensor, Scalar], b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    b = _coerce(b, a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None
    return Add.apply(a, b)


def mul(a: Union[Tensor, Scalar], b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    b = _coerce(b, a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None
    return Mul.apply(a, b)


def sub(a: Union[Tensor, Scalar], b: Union[Tensor, Scalar]) -> Tensor:
    if not isinstance(a, Tensor):
        a = _coerce(a, b)
    return add(a, mul(b, -1.0) if isinstance(b, Tensor) else -b)


# *** products ***

class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class BatchDot(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        return (
            np.matmul(grad, self.b.transpose(0, 2, 1)),
            np.matmul(self.a.transpose(0, 2, 1), grad),
        )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return MatMul.apply(a, b)


def batch_dot(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product: out[b,m,n] = sum_k a[b,m,k] * b[b,k,n]."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeMismatchError("batch_dot", a.shape, b.shape, reason="both operands must be rank 3")
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatchError("batch_dot", a.shape, b.shape, reason="batch dimensions differ")
    if a.shape[2] != b.shape[1]:
        raise ShapeMismatchError("batch_dot", a.shape, b.shape, reason="inner dimensions differ")
    return BatchDot.apply(a, b)


# *** movement ***

class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(x.transpose(axes))

    def backward(self, grad):
        return (grad.transpose(self.inverse),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 1) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatchError("reshape", x.shape, shape, reason="element counts differ")
    return Reshape.apply(x, shape=shape)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    if sorted(axes) != list(range(x.ndim)):
        raise AxisError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    return Transpose.apply(x, axes=axes)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    first = tensors[0]
    for t in tensors[1:]:
        rest_a = first.shape[:axis] + first.shape[axis + 1:]
        rest_b = t.shape[:axis] + t.shape[axis + 1:]
        if t.ndim != first.ndim or rest_a != rest_b:
            raise ShapeMismatchError("concat", first.shape, t.shape)
    return Concat.apply(*tensors, axis=axis)


# *** reductions ***

class SumAll(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.in_shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, x: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
        self.in_shape = x.shape
        self.axis = tuple(range(x.ndim)) if axis is None else tuple(a % x.ndim for a in np.atleast_1d(axis))
        self.keepdims = keepdims
        self.count = int(np.prod([x.shape[a] for a in self.axis]))
        return np.asarray(x.mean(axis=self.axis, keepdims=keepdims), dtype=x.dtype)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


class AvgPool2d(Function):
    def forward(self, x: np.ndarray, kernel: int) -> np.ndarray:
        b, c, h, w = x.shape
        self.kernel = kernel
        return x.reshape(b, c, h // kernel, kernel, w // kernel, kernel).mean(axis=(3, 5))

    def backward(self, grad):
        k = self.kernel
        return (np.repeat(np.repeat(grad, k, axis=2), k, axis=3) / (k * k),)


def sum_all(x: Tensor) -> Tensor:
    return SumAll.apply(x)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        for a in np.atleast_1d(axis):
            if not -x.ndim <= a < x.ndim:
                raise AxisError(f"mean: axis {a} out of range for rank {x.ndim}")
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def avg_pool2d(x: Tensor, kernel: int) -> Tensor:
    if x.ndim != 4 or x.shape[2] % kernel or x.shape[3] % kernel:
        raise ShapeMismatchError("avg_pool2d", x.shape, reason=f"spatial dims must be divisible by {kernel}")
    if kernel == 1:
        return x
    return AvgPool2d.apply(x, kernel=kernel)


# *** normalizations and activations ***

class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise AxisError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    return Softmax.apply(x, axis=axis % x.ndim)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        _record_kinks(x, (0.0,))
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class ReLU6(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        _record_kinks(x, (0.0, 6.0))
        self.mask = (x > 0) & (x < 6)
        return np.clip(x, 0, 6)

    def backward(self, grad):
        return (grad * self.mask,)


class HardSigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        _record_kinks(x, (-3.0, 3.0))
        self.mask = (x > -3) & (x < 3)
        return np.clip(x + 3, 0, 6) / 6

    def backward(self, grad):
        return (grad * self.mask / 6,)


class HardSwish(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        _record_kinks(x, (-3.0, 3.0))
        self.x = x
        # x * (ReLU6(x+3)/6) keeps h_swish(x) == x exactly for x >= 3
        return x * (np.clip(x + 3, 0, 6) / 6)

    def backward(self, grad):
        x = self.x
        slope = np.where(x <= -3, 0.0, np.where(x >= 3, 1.0, (2 * x + 3) / 6))
        return (grad * slope.astype(x.dtype),)


class Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = expit(x).astype(x.dtype)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def relu6(x: Tensor) -> Tensor:
    return ReLU6.apply(x)


def hard_sigmoid(x: Tensor) -> Tensor:
    return HardSigmoid.apply(x)


def h_swish(x: Tensor) -> Tensor:
    return HardSwish.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


# *** convolution ***

def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int]:
    """Zero padding that yields ceil(size / stride) outputs; the odd pixel goes bottom/right."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _pad_for(x: np.ndarray, kernel: int, stride: int, padding: str) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    if padding == "same":
        top, bottom = same_padding(x.shape[2], kernel, stride)
        left, right = same_padding(x.shape[3], kernel, stride)
    else:
        top = bottom = left = right = 0
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return x, (top, bottom, left, right)


def _windows(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """[B,C,Hp,Wp] -> strided view [B,C,Ho,Wo,k,k]."""
    return sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]


def _col2im(dwin: np.ndarray, padded_shape: Tuple[int, ...], kernel: int, stride: int) -> np.ndarray:
    """Scatter window gradients [B,C,Ho,Wo,k,k] back onto the padded input."""
    dxp = np.zeros(padded_shape, dtype=dwin.dtype)
    ho, wo = dwin.shape[2], dwin.shape[3]
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += dwin[:, :, :, :, i, j]
    return dxp


def _crop(dxp: np.ndarray, pads: Tuple[int, int, int, int], height: int, width: int) -> np.ndarray:
    top, _, left, _ = pads
    return dxp[:, :, top:top + height, left:left + width]


class Conv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, stride: int, padding: str) -> np.ndarray:
        k = w.shape[2]
        xp, self.pads = _pad_for(x, k, stride, padding)
        self.win = _windows(xp, k, stride)
        self.w, self.k, self.stride = w, k, stride
        self.in_hw, self.padded_shape = x.shape[2:], xp.shape
        out = np.tensordot(self.win, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        dw = np.tensordot(grad, self.win, axes=([0, 2, 3], [0, 2, 3]))
        dwin = np.tensordot(grad, self.w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        dxp = _col2im(dwin, self.padded_shape, self.k, self.stride)
        return _crop(dxp, self.pads, *self.in_hw), dw


class DepthwiseConv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, stride: int, padding: str) -> np.ndarray:
        k = w.shape[2]
        xp, self.pads = _pad_for(x, k, stride, padding)
        self.win = _windows(xp, k, stride)
        self.w, self.k, self.stride = w[:, 0], k, stride
        self.in_hw, self.padded_shape = x.shape[2:], xp.shape
        return np.einsum("bchwij,cij->bchw", self.win, self.w)

    def backward(self, grad):
        dw = np.einsum("bchw,bchwij->cij", grad, self.win)[:, None]
        dwin = grad[:, :, :, :, None, None] * self.w[None, :, None, None, :, :]
        dxp = _col2im(dwin, self.padded_shape, self.k, self.stride)
        return _crop(dxp, self.pads, *self.in_hw), dw


def _check_conv(op: str, x: Tensor, w: Tensor, stride: int, padding: str) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(op, x.shape, w.shape, reason="expected [B,C,H,W] input and rank-4 weights")
    if stride < 1:
        raise ValueError(f"{op}: stride must be positive, got {stride}")
    if padding not in ("same", "valid"):
        raise ValueError(f"{op}: padding must be 'same' or 'valid', got {padding!r}")
    if padding == "valid" and (x.shape[2] < w.shape[2] or x.shape[3] < w.shape[3]):
        raise ShapeMismatchError(op, x.shape, w.shape, reason="input smaller than kernel")


def conv2d_raw(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of x [B,C,H,W] with w [C_out,C,k,k] (no bias)."""
    _check_conv("conv2d", x, w, stride, padding)
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError("conv2d", x.shape, w.shape, reason="input channels differ from weight C_in")
    return Conv2d.apply(x, w, stride=stride, padding=padding)


def depthwise_conv2d_raw(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Per-channel cross-correlation of x [B,C,H,W] with w [C,1,k,k]."""
    _check_conv("depthwise_conv2d", x, w, stride, padding)
    if x.shape[1] != w.shape[0] or w.shape[1] != 1:
        raise ShapeMismatchError("depthwise_conv2d", x.shape, w.shape, reason="depthwise kernel must be [C,1,k,k]")
    return DepthwiseConv2d.apply(x, w, stride=stride, padding=padding)


# *** batch normalization ***

class BatchNormTrain(Function):
    def forward(self, x, gamma, beta, mean, var, eps):
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        self.count = x.shape[0] * x.shape[2] * x.shape[3]
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        axes = (0, 2, 3)
        dgamma = (grad * self.xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * self.gamma[None, :, None, None]
        m = self.count
        dx = (self.inv_std[None, :, None, None] / m) * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=axes, keepdims=True)
        )
        return dx, dgamma, dbeta


class BatchNormInfer(Function):
    def forward(self, x, gamma, beta, mean, var, eps):
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return self.xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        axes = (0, 2, 3)
        dx = grad * (self.gamma * self.inv_std)[None, :, None, None]
        return dx, (grad * self.xhat).sum(axis=axes), grad.sum(axis=axes)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray, var: np.ndarray, eps: float) -> Tensor:
    return BatchNormTrain.apply(x, gamma, beta, mean=mean, var=var, eps=eps)


def batch_norm_infer(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray, var: np.ndarray, eps: float) -> Tensor:
    return BatchNormInfer.apply(x, gamma, beta, mean=mean, var=var, eps=eps)


# *** loss ***

class BinaryCrossEntropy(Function):
    def forward(self, p: np.ndarray, y: np.ndarray) -> np.ndarray:
        self.clipped = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
        self.inside = (p > BCE_CLAMP) & (p < 1 - BCE_CLAMP)
        self.y = y
        pc = self.clipped
        loss = -np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))
        return np.asarray(loss, dtype=p.dtype)

    def backward(self, grad):
        pc, y = self.clipped, self.y
        dp = -(y / pc - (1 - y) / (1 - pc)) / pc.size
        return grad * dp * self.inside, None


def binary_cross_entropy(p: Tensor, y: Tensor) -> Tensor:
    if p.shape != y.shape:
        raise ShapeMismatchError("binary_cross_entropy", p.shape, y.shape)
    return BinaryCrossEntropy.apply(p, y)
