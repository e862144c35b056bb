import logging
import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import GraphReleasedError, NonScalarLossError

log = logging.getLogger(__name__)

_FLOAT_DTYPES = (np.float32, np.float64)

# Tape state is per thread: distinct graphs may be built on distinct threads.
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _as_float_array(data: Any, dtype: Optional[np.dtype] = None) -> np.ndarray:
    if dtype is not None:
        return np.ascontiguousarray(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype.type not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Function:
    """Base class for differentiable operations.

    ``forward`` receives the raw arrays of the input tensors and returns the
    output array; ``backward`` receives dL/d(output) and returns one gradient
    (or None) per input, in input order.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=requires_grad)
        if requires_grad:
            result._ctx = fn
        return result

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out the dimensions numpy broadcasting expanded."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """Dense row-major float tensor participating in a reverse-mode tape.

    Values are float32 unless float64 data is supplied explicitly (gradient
    checks run in double precision).
    """

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Optional[np.dtype] = None):
        self.data: np.ndarray = _as_float_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self._released = False

    # *** properties ***

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # *** math ***

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        return ops.add(self, other)

    def __radd__(self, other: Union["Tensor", float]) -> "Tensor":
        return ops.add(other, self)

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        return ops.sub(self, other)

    def __rsub__(self, other: Union["Tensor", float]) -> "Tensor":
        return ops.sub(other, self)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        return ops.mul(self, other)

    def __rmul__(self, other: Union["Tensor", float]) -> "Tensor":
        return ops.mul(other, self)

    def __neg__(self) -> "Tensor":
        return ops.mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return ops.transpose(self, axes)

    def sum(self) -> "Tensor":
        return ops.sum_all(self)

    def mean(self, axis: Union[int, Sequence[int], None] = None, keepdims: bool = False) -> "Tensor":
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if node._released:
            # released intermediates no longer carry a tape
            raise GraphReleasedError(
                f"{node!r} belongs to a graph that was already back-propagated; recompute it"
            )
        if node._ctx is not None:
            for parent in node._ctx.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor that requires it on the path to ``loss``.

    Leaf gradients accumulate across successive passes until ``zero_grad``.
    A graph is released after its backward pass; calling backward on it again
    raises ``GraphReleasedError``.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise NonScalarLossError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphReleasedError("graph was already back-propagated; rebuild it with a new forward pass")
    if not loss.requires_grad:
        raise GraphReleasedError("loss does not depend on any tensor that requires grad")

    order = _topological_order(loss)
    seed = np.ones(loss.shape, dtype=loss.dtype)
    loss.grad = seed if loss.grad is None or not loss.is_leaf else loss.grad + seed

    for node in reversed(order):
        fn = node._ctx
        if fn is None:
            continue
        grads = fn.backward(node.grad)
        if not isinstance(grads, tuple):
            grads = (grads,)
        for parent, g in zip(fn.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.dtype)
            if g.shape != parent.shape:
                g = g.reshape(parent.shape)
            parent.grad = g.copy() if parent.grad is None else parent.grad + g
        node._ctx = None
        node._released = True
    loss._released = True


from . import ops  # noqa: E402  (ops needs Tensor and Function defined first)
