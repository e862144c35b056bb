"""Finite-difference checks over every differentiable building block.

Each builder draws its inputs and parameters from the generator it is given,
converts everything to double precision and returns a closure computing a
random weighted sum of the op's output (a plain sum would zero some gradients,
e.g. through softmax).
"""

import logging
from collections import OrderedDict
from typing import Callable, Dict, List, Tuple

import numpy as np

from ..core import ops
from ..core.gradcheck import GraphBuilder, grad_check
from ..core.tensor import Tensor
from ..layers.conv import Conv2dParams, SeparableConv2dParams, conv2d, separable_conv2d
from ..layers.excite import SqueezeExciteParams, squeeze_excite
from ..layers.linear import DenseParams, dense, global_avg_pool
from ..layers.module import Module
from ..layers.norm import BatchNormState, batch_norm
from ..models.schemas import GradCheckReport
from ..network.attention import SelfAttentionParams, channel_attention_forward, self_attention_forward
from ..network.blocks.mbblock import MBBlockV3Params, mbblock_forward
from ..network.ftt import FTTStage

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-3
DEFAULT_SEEDS = 5


def _input(rng: np.random.Generator, dtype, shape, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, dtype=dtype)


def _weighted_sum(rng: np.random.Generator, dtype, shape) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.uniform(-1.0, 1.0, size=shape), dtype=dtype)
    return lambda y: ops.sum_all(y * weights)


def _module(module: Module, rng: np.random.Generator, dtype, mode: str = "train") -> Module:
    module.reset_parameters(int(rng.integers(2**31)))
    module.astype(dtype)
    module.set_mode(mode)
    return module


def _with_params(module: Module, **inputs: Tensor) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = OrderedDict(inputs)
    params.update(module.named_parameters())
    return params


def _randomize(module: Module, rng: np.random.Generator, *suffixes: str, low=-0.5, high=0.5) -> None:
    """Move zero/one-initialized parameters (biases, BN affine, gamma) off their initial values."""
    for name, p in module.named_parameters():
        if name.endswith(suffixes):
            p.data[...] = rng.uniform(low, high, size=p.shape)


# *** builders ***

def build_batch_dot(rng, dtype):
    a, b = _input(rng, dtype, (2, 3, 4)), _input(rng, dtype, (2, 4, 5))
    loss = _weighted_sum(rng, dtype, (2, 3, 5))
    return (lambda: loss(ops.batch_dot(a, b))), {"a": a, "b": b}


def build_softmax(rng, dtype):
    x = _input(rng, dtype, (3, 5))
    loss = _weighted_sum(rng, dtype, (3, 5))
    return (lambda: loss(ops.softmax(x, axis=1))), {"x": x}


def _build_conv(stride: int):
    def build(rng, dtype):
        p = _module(Conv2dParams(3, 4, kernel_size=3, stride=stride), rng, dtype)
        _randomize(p, rng, "bias")
        x = _input(rng, dtype, (2, 3, 5, 5))
        out = 5 if stride == 1 else 3
        loss = _weighted_sum(rng, dtype, (2, 4, out, out))
        return (lambda: loss(conv2d(x, p))), _with_params(p, x=x)
    return build


def build_separable_conv2d(rng, dtype):
    p = _module(SeparableConv2dParams(3, 4, stride=2), rng, dtype)
    _randomize(p, rng, "bias")
    x = _input(rng, dtype, (2, 3, 6, 6))
    loss = _weighted_sum(rng, dtype, (2, 4, 3, 3))
    return (lambda: loss(separable_conv2d(x, p.depthwise, p.pointwise, p.stride))), _with_params(p, x=x)


def _build_batch_norm(mode: str):
    def build(rng, dtype):
        s = _module(BatchNormState(4), rng, dtype, mode)
        _randomize(s, rng, "gamma", low=0.5, high=1.5)
        _randomize(s, rng, "beta")
        if mode == "infer":
            s.running_mean = rng.uniform(-0.5, 0.5, 4).astype(dtype)
            s.running_var = rng.uniform(0.5, 1.5, 4).astype(dtype)
        x = _input(rng, dtype, (3, 4, 3, 3))
        loss = _weighted_sum(rng, dtype, (3, 4, 3, 3))
        return (lambda: loss(batch_norm(x, s))), _with_params(s, x=x)
    return build


def _build_activation(fn, low: float, high: float):
    def build(rng, dtype):
        x = _input(rng, dtype, (4, 6), low, high)
        loss = _weighted_sum(rng, dtype, (4, 6))
        return (lambda: loss(fn(x))), {"x": x}
    return build


def build_squeeze_excite(rng, dtype):
    p = _module(SqueezeExciteParams(8, 4), rng, dtype)
    _randomize(p, rng, "bias")
    x = _input(rng, dtype, (2, 8, 3, 3))
    loss = _weighted_sum(rng, dtype, (2, 8, 3, 3))
    return (lambda: loss(squeeze_excite(x, p))), _with_params(p, x=x)


def build_dense(rng, dtype):
    p = _module(DenseParams(5, 3), rng, dtype)
    _randomize(p, rng, "bias")
    x = _input(rng, dtype, (4, 5))
    loss = _weighted_sum(rng, dtype, (4, 3))
    return (lambda: loss(dense(x, p.weight, p.bias))), _with_params(p, x=x)


def build_global_avg_pool(rng, dtype):
    x = _input(rng, dtype, (2, 3, 4, 4))
    loss = _weighted_sum(rng, dtype, (2, 3))
    return (lambda: loss(global_avg_pool(x))), {"x": x}


def build_bce(rng, dtype):
    p = _input(rng, dtype, (6, 1), 0.05, 0.95)
    y = Tensor(rng.integers(0, 2, size=(6, 1)), dtype=dtype)
    return (lambda: ops.binary_cross_entropy(p, y)), {"p": p}


def build_self_attention(rng, dtype):
    p = _module(SelfAttentionParams(8), rng, dtype)
    _randomize(p, rng, "bias")
    # gamma = 0 would zero every projection gradient
    p.gamma.data[...] = rng.uniform(0.5, 1.0, size=1)
    x = _input(rng, dtype, (1, 8, 4, 4))
    loss = _weighted_sum(rng, dtype, (1, 8, 4, 4))
    return (lambda: loss(self_attention_forward(x, p)[0])), _with_params(p, x=x)


def build_channel_attention(rng, dtype):
    x = _input(rng, dtype, (1, 4, 3, 3))
    loss = _weighted_sum(rng, dtype, (1, 4, 3, 3))
    return (lambda: loss(channel_attention_forward(x)[0])), {"x": x}


def _build_mbblock(in_channels: int, out_channels: int, stride: int):
    def build(rng, dtype):
        p = _module(MBBlockV3Params(in_channels, out_channels, expansion=2, se_ratio=4, stride=stride), rng, dtype)
        _randomize(p, rng, "bias", "beta")
        x = _input(rng, dtype, (2, in_channels, 4, 4))
        side = 4 // stride
        loss = _weighted_sum(rng, dtype, (2, out_channels, side, side))
        return (lambda: loss(mbblock_forward(x, p, stride))), _with_params(p, x=x)
    return build


def build_ftt_stage(rng, dtype):
    stage = _module(FTTStage(8, 16), rng, dtype)
    _randomize(stage, rng, "bias", "beta")
    stage.attention.gamma.data[...] = rng.uniform(0.5, 1.0, size=1)
    x = _input(rng, dtype, (2, 8, 4, 4))
    loss = _weighted_sum(rng, dtype, (2, 16, 2, 2))
    return (lambda: loss(stage(x))), _with_params(stage, x=x)


class _Composite(Module):
    def __init__(self):
        super().__init__()
        self.conv = Conv2dParams(3, 4, kernel_size=3, bias=False)
        self.bn = BatchNormState(4)
        self.head = DenseParams(4, 1)


def build_composite(rng, dtype):
    """conv -> BN -> h-swish -> GAP -> dense -> sigmoid -> BCE."""
    net = _module(_Composite(), rng, dtype)
    _randomize(net, rng, "beta", "bias")
    x = _input(rng, dtype, (3, 3, 5, 5))
    y = Tensor(np.array([[0.0], [1.0], [1.0]]), dtype=dtype)

    def loss():
        h = ops.h_swish(batch_norm(conv2d(x, net.conv), net.bn))
        return ops.binary_cross_entropy(ops.sigmoid(dense(global_avg_pool(h), net.head.weight, net.head.bias)), y)
    return loss, _with_params(net, x=x)


GRADIENT_SUITE: List[Tuple[str, GraphBuilder]] = [
    ("batch_dot", build_batch_dot),
    ("softmax", build_softmax),
    ("conv2d", _build_conv(1)),
    ("conv2d_stride2", _build_conv(2)),
    ("separable_conv2d", build_separable_conv2d),
    ("batch_norm_train", _build_batch_norm("train")),
    ("batch_norm_infer", _build_batch_norm("infer")),
    ("relu", _build_activation(ops.relu, -1.0, 1.0)),
    ("relu6", _build_activation(ops.relu6, -2.0, 8.0)),
    ("hard_sigmoid", _build_activation(ops.hard_sigmoid, -5.0, 5.0)),
    ("h_swish", _build_activation(ops.h_swish, -5.0, 5.0)),
    ("sigmoid", _build_activation(ops.sigmoid, -3.0, 3.0)),
    ("squeeze_excite", build_squeeze_excite),
    ("dense", build_dense),
    ("global_avg_pool", build_global_avg_pool),
    ("bce", build_bce),
    ("self_attention", build_self_attention),
    ("channel_attention", build_channel_attention),
    ("mbblock_v3_residual", _build_mbblock(8, 8, 1)),
    ("mbblock_v3_stride2", _build_mbblock(8, 16, 2)),
    ("ftt_stage", build_ftt_stage),
    ("composite", build_composite),
]


def run_gradient_suite(
    tolerance: float = DEFAULT_TOLERANCE,
    seeds: int = DEFAULT_SEEDS,
    only: Tuple[str, ...] = (),
) -> Dict[str, List[GradCheckReport]]:
    """Run every builder for seeds 0..seeds-1; returns op name -> per-seed reports."""
    results: Dict[str, List[GradCheckReport]] = OrderedDict()
    for name, builder in GRADIENT_SUITE:
        if only and name not in only:
            continue
        results[name] = [grad_check(builder, tolerance, seed=s, op_name=name) for s in range(seeds)]
        worst = max(r.max_relative_error for r in results[name])
        log.info("gradcheck %-20s max_rel_err=%.3e", name, worst)
    return results
