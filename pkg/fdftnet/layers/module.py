"""Parameter containers.

A ``Module`` owns ``Parameter`` tensors and child modules as plain attributes;
names are dotted attribute paths (``stages.0.conv.pointwise.weight``). Lists of
modules are indexed by position.
"""

import logging
import zlib
from collections import OrderedDict
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..core.tensor import Tensor
from ..errors import MissingParameterError, ShapeMismatchError, UnexpectedParameterError

log = logging.getLogger(__name__)

Initializer = Callable[[np.random.Generator, Tuple[int, ...]], np.ndarray]

MODES = ("train", "infer")


def glorot_uniform(fan_in: int, fan_out: int) -> Initializer:
    limit = np.sqrt(6.0 / (fan_in + fan_out))

    def draw(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
        return rng.uniform(-limit, limit, size=shape)
    return draw


def zeros(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape)


def ones(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return np.ones(shape)


class Parameter(Tensor):
    """A trainable leaf tensor that knows how to initialize itself."""

    def __init__(self, shape: Tuple[int, ...], initializer: Initializer = zeros, dtype=np.float32):
        super().__init__(np.zeros(shape), requires_grad=True, dtype=dtype)
        self.initializer = initializer
        self.trainable = True

    def reset(self, rng: np.random.Generator) -> None:
        self.data[...] = self.initializer(rng, self.shape)

    def freeze(self) -> None:
        self.trainable = False
        self.requires_grad = False
        self.grad = None


class Module:
    _buffer_names: Tuple[str, ...] = ()

    def __init__(self):
        self.mode = "train"
        self.frozen = False

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # *** traversal ***

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> Dict[str, Parameter]:
        return {n: p for n, p in self.named_parameters() if p.trainable}

    def parameter_count(self, trainable_only: bool = False) -> int:
        return sum(p.size for p in self.parameters() if p.trainable or not trainable_only)

    # *** state ***

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, buf in self.named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy values in place; with ``strict`` the names must match exactly."""
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing = sorted(expected - set(state))
        unexpected = sorted(set(state) - expected)
        if strict and missing:
            raise MissingParameterError(missing)
        if strict and unexpected:
            raise UnexpectedParameterError(unexpected)
        for name, value in state.items():
            target = params[name].data if name in params else buffers.get(name)
            if target is None:
                continue
            value = np.asarray(value)
            if value.shape != target.shape:
                raise ShapeMismatchError(f"load_state_dict[{name}]", target.shape, value.shape)
            target[...] = value

    def reset_parameters(self, seed: int) -> None:
        """Initialize every parameter from a stream keyed by (seed, parameter name)."""
        for name, p in self.named_parameters():
            p.reset(np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))]))
        for _, module in self.named_modules():
            module.reset_buffers()

    def reset_buffers(self) -> None:
        pass

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, module in self.named_modules():
            for name in module._buffer_names:
                setattr(module, name, getattr(module, name).astype(dtype))
        return self

    def freeze(self) -> "Module":
        for _, module in self.named_modules():
            module.frozen = True
        for p in self.parameters():
            p.freeze()
        return self

    def set_mode(self, mode: str) -> "Module":
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        for _, module in self.named_modules():
            module.mode = mode
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def grads(self) -> Dict[str, Optional[np.ndarray]]:
        return {n: p.grad for n, p in self.named_parameters() if p.trainable}
