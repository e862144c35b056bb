"""Finite-difference verification of analytic gradients.

A builder receives a seeded generator and a dtype and returns a closure that
builds the scalar loss, plus the named tensors to differentiate. The check runs
in double precision with central differences.
"""

import logging
from typing import Callable, Dict, Mapping, Tuple

import numpy as np

from ..errors import NonFiniteError
from ..models.schemas import GradCheckReport
from .ops import track_kinks
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

LossClosure = Callable[[], Tensor]
GraphBuilder = Callable[[np.random.Generator, type], Tuple[LossClosure, Mapping[str, Tensor]]]

DEFAULT_STEP = 1e-3
_ERROR_FLOOR = 1e-8


def _evaluate(loss_fn: LossClosure) -> Tuple[float, list]:
    with no_grad(), track_kinks() as regions:
        value = float(loss_fn().data)
    return value, regions


def _crossed(base: list, shifted: list) -> bool:
    if len(base) != len(shifted):
        return True
    return any(not np.array_equal(a, b) for a, b in zip(base, shifted))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), floored so exact zeros compare as equal."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), _ERROR_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def grad_check(
    builder: GraphBuilder,
    tolerance: float = 1e-3,
    *,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    op_name: str = "graph",
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    Perturbations that move any piecewise-linear activation across one of its kinks
    are excluded (the difference quotient is meaningless there) and counted in
    ``skipped_elements``. Non-finite losses or gradients raise ``NonFiniteError``.
    """
    rng = np.random.default_rng(seed)
    loss_fn, params = builder(rng, np.float64)
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check: {name} must be float64, got {p.dtype}")
        p.grad = None

    with track_kinks() as base_regions:
        loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError(f"{op_name}: loss is not finite ({loss.data})")
    backward(loss)

    per_parameter: Dict[str, float] = {}
    skipped = 0
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"{op_name}: analytic gradient of {name} is not finite")
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.size)
        keep = np.ones(flat.size, dtype=bool)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up, up_regions = _evaluate(loss_fn)
            flat[i] = original - step
            down, down_regions = _evaluate(loss_fn)
            flat[i] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"{op_name}: loss is not finite when probing {name}[{i}]")
            if _crossed(base_regions, up_regions) or _crossed(base_regions, down_regions):
                keep[i] = False
                skipped += 1
                continue
            numeric[i] = (up - down) / (2 * step)
        per_parameter[name] = relative_error(analytic.reshape(-1)[keep], numeric[keep])

    worst = max(per_parameter.values(), default=0.0)
    report = GradCheckReport(
        op_name=op_name,
        max_relative_error=worst,
        per_parameter_errors=per_parameter,
        tolerance=tolerance,
        passed=worst < tolerance,
        skipped_elements=skipped,
        seed=seed,
    )
    log.debug("grad_check %s seed=%d max_rel_err=%.3e skipped=%d", op_name, seed, worst, skipped)
    return report
