"""Loss, optimizers, early stopping and the epoch loop shared by both training phases."""

import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..core import ops
from ..core.tensor import Tensor, backward, no_grad
from ..errors import InvalidLabelError, NonFiniteLossError, ShapeMismatchError
from ..layers.module import Module, Parameter
from ..models.schemas import EpochRecord, OptimizerConfig, OptimizerSnapshot
from ..utils.audit import audit_logger
from ..utils.datasets import DatasetSplit

log = logging.getLogger(__name__)

Augmenter = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def bce_loss(probabilities: Tensor, labels: Union[Tensor, np.ndarray]) -> Tensor:
    """-mean(y log p + (1-y) log(1-p)) with p clamped 1e-7 away from 0 and 1."""
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise InvalidLabelError("bce_loss labels must be 0 or 1")
    if y.size != probabilities.size:
        raise ShapeMismatchError("bce_loss", probabilities.shape, y.shape)
    y = np.asarray(y, dtype=probabilities.dtype).reshape(probabilities.shape)
    return ops.binary_cross_entropy(probabilities, Tensor(y))


# *** optimizers ***

@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    # buffer name ("velocity", "m", "v") -> parameter name -> array
    buffers: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: OptimizerConfig) -> "OptimizerState":
        return cls(
            kind=cfg.kind, learning_rate=cfg.learning_rate, momentum=cfg.momentum,
            beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
        )

    def _buffer(self, slot: str, name: str, like: np.ndarray) -> np.ndarray:
        slot_buffers = self.buffers.setdefault(slot, {})
        if name not in slot_buffers:
            slot_buffers[name] = np.zeros_like(like)
        return slot_buffers[name]

    def snapshot(self) -> OptimizerSnapshot:
        return OptimizerSnapshot(
            kind=self.kind, step_count=self.step_count, learning_rate=self.learning_rate,
            momentum=self.momentum, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon,
        )

    def flat_buffers(self) -> Dict[str, np.ndarray]:
        """``<slot>.<parameter name>`` -> array, the layout stored in checkpoints."""
        return {f"{slot}.{name}": arr for slot, named in self.buffers.items() for name, arr in named.items()}

    @classmethod
    def restore(cls, snapshot: OptimizerSnapshot, flat: Mapping[str, np.ndarray]) -> "OptimizerState":
        state = cls(**snapshot.model_dump())
        for key, arr in flat.items():
            slot, name = key.split(".", 1)
            state.buffers.setdefault(slot, {})[name] = np.array(arr, copy=True)
        return state


def _updatable(params: Mapping[str, Parameter], grads: Mapping[str, Optional[np.ndarray]]):
    for name, p in params.items():
        if not getattr(p, "trainable", True):
            continue
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatchError(f"optimizer[{name}]", p.shape, g.shape)
        yield name, p, g


def sgd_step(params: Mapping[str, Parameter], grads: Mapping[str, Optional[np.ndarray]], state: OptimizerState) -> None:
    """v <- momentum * v + g;  p <- p - lr * v."""
    for name, p, g in _updatable(params, grads):
        v = state._buffer("velocity", name, p.data)
        v *= state.momentum
        v += g
        p.data -= (state.learning_rate * v).astype(p.dtype)
    state.step_count += 1


def adam_step(params: Mapping[str, Parameter], grads: Mapping[str, Optional[np.ndarray]], state: OptimizerState) -> None:
    """Bias-corrected Adam."""
    t = state.step_count + 1
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, p, g in _updatable(params, grads):
        m = state._buffer("m", name, p.data)
        v = state._buffer("v", name, p.data)
        m[...] = state.beta1 * m + (1 - state.beta1) * g
        v[...] = state.beta2 * v + (1 - state.beta2) * g * g
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data -= update.astype(p.dtype)
    state.step_count = t


def optimizer_step(params, grads, state: OptimizerState) -> None:
    (adam_step if state.kind == "adam" else sgd_step)(params, grads, state)


def clip_grad_norm(grads: Mapping[str, Optional[np.ndarray]], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    present = [g for g in grads.values() if g is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in present))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in present:
            g *= scale
    return total


# *** early stopping ***

class StopDecision(str, Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class TrainState:
    patience: int = 20
    max_epochs: int = 200
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    history: List[EpochRecord] = field(default_factory=list)


def early_stopping_update(state: TrainState, val_loss: float) -> StopDecision:
    """Count one epoch; strictly lower validation loss resets the patience counter."""
    if not math.isfinite(val_loss):
        raise NonFiniteLossError(f"validation loss is {val_loss} at epoch {state.epoch + 1}")
    state.epoch += 1
    if val_loss < state.best_val_loss:
        state.best_val_loss = val_loss
        state.best_epoch = state.epoch
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= state.patience or state.epoch >= state.max_epochs:
        return StopDecision.STOP
    return StopDecision.CONTINUE


def batch_indices(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive mini-batches; a trailing batch of one joins the previous batch."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


@dataclass
class TrainResult:
    state: TrainState
    optimizer: OptimizerState
    best_state_dict: Dict[str, np.ndarray]


class Trainer:
    """Mini-batch training with per-epoch reshuffling and early stopping on validation loss.

    At the end the model holds the parameters of its best validation epoch.
    """

    def __init__(
        self,
        model: Module,
        optimizer: OptimizerConfig,
        batch_size: int,
        max_epochs: int,
        patience: int,
        seed: int,
        phase: str = "train",
        augment: Optional[Augmenter] = None,
        epoch_log: Optional[Union[str, Path]] = None,
    ):
        self.model = model
        self.optimizer_config = optimizer
        self.optimizer = OptimizerState.from_config(optimizer)
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.phase = phase
        self.augment = augment
        self.epoch_log = Path(epoch_log) if epoch_log else None

    def _train_epoch(self, split: DatasetSplit, epoch: int) -> float:
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(len(split))
        params = self.model.trainable_parameters()
        total, seen = 0.0, 0
        self.model.set_mode("train")
        for step, idx in enumerate(batch_indices(order, self.batch_size)):
            images = split.images[idx]
            if self.augment is not None:
                images = self.augment(images, np.random.default_rng([self.seed, epoch, step]))
            self.model.zero_grad()
            probs = self.model(Tensor(images))
            loss = bce_loss(probs, split.labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(f"{self.phase}: training loss is {value} at epoch {epoch + 1}, step {step}")
            backward(loss)
            grads = {name: p.grad for name, p in params.items()}
            if self.optimizer_config.max_grad_norm is not None:
                clip_grad_norm(grads, self.optimizer_config.max_grad_norm)
            optimizer_step(params, grads, self.optimizer)
            total += value * len(idx)
            seen += len(idx)
        return total / seen

    def _validate(self, split: DatasetSplit) -> Tuple[float, float]:
        self.model.set_mode("infer")
        probs = []
        with no_grad():
            for start in range(0, len(split), self.batch_size):
                probs.append(self.model(Tensor(split.images[start:start + self.batch_size])).data.reshape(-1))
        p = np.concatenate(probs).astype(np.float64)
        y = split.labels.astype(np.float64)
        pc = np.clip(p, ops.BCE_CLAMP, 1 - ops.BCE_CLAMP)
        loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)))
        acc = float(np.mean((p >= 0.5) == (y == 1)))
        return loss, acc

    def _write_log(self, record: EpochRecord) -> None:
        if self.epoch_log is None:
            return
        row = pd.DataFrame([record.model_dump()], columns=["epoch", "train_loss", "val_loss", "val_acc"])
        row.to_csv(self.epoch_log, mode="a", header=False, index=False)

    def fit(self, train: DatasetSplit, validation: DatasetSplit) -> TrainResult:
        if self.epoch_log is not None:
            self.epoch_log.parent.mkdir(parents=True, exist_ok=True)
            self.epoch_log.write_text("")
        state = TrainState(patience=self.patience, max_epochs=self.max_epochs)
        best_weights = self.model.state_dict()
        best_optimizer = copy.deepcopy(self.optimizer)
        log.info("%s: %d training / %d validation images, batch %d", self.phase, len(train), len(validation), self.batch_size)

        while True:
            train_loss = self._train_epoch(train, state.epoch)
            val_loss, val_acc = self._validate(validation)
            decision = early_stopping_update(state, val_loss)
            record = EpochRecord(epoch=state.epoch, train_loss=train_loss, val_loss=val_loss, val_acc=val_acc)
            state.history.append(record)
            self._write_log(record)
            audit_logger.log_epoch(self.phase, record.model_dump())
            log.debug("%s epoch %d: train=%.5f val=%.5f acc=%.4f", self.phase, state.epoch, train_loss, val_loss, val_acc)
            if state.best_epoch == state.epoch:
                best_weights = self.model.state_dict()
                best_optimizer = copy.deepcopy(self.optimizer)
            if decision is StopDecision.STOP:
                break

        self.model.load_state_dict(best_weights)
        log.info("%s: stopped after %d epochs, best epoch %d (val_loss=%.5f)",
                 self.phase, state.epoch, state.best_epoch, state.best_val_loss)
        return TrainResult(state=state, optimizer=best_optimizer, best_state_dict=best_weights)
