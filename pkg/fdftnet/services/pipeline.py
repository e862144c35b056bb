"""Two-phase protocol: pretrain a backbone, then fine-tune the detector around it frozen."""

import logging
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from ..errors import CheckpointMismatchError, ConfigError, DataError
from ..models.schemas import EvalResult, ModelConfig
from ..network.backbone import Backbone, build_backbone
from ..network.model import DAFDFtNet, assemble
from ..utils.checkpoint import Checkpoint
from ..utils.datasets import DatasetSplit, require_split, to_model_input
from .augment import augment_batch
from .evaluation import DEFAULT_EVAL_BATCH, predict
from .metrics import DEFAULT_THRESHOLD, evaluate_scores
from .trainer import OptimizerState, Trainer

log = logging.getLogger(__name__)

FINETUNE_SHARE_WARNING = 0.10


def _prepare(split: DatasetSplit, config: ModelConfig) -> DatasetSplit:
    if split.resolution != config.input_resolution:
        raise DataError(
            f"{split.role} split is {split.resolution}x{split.resolution}, "
            f"the model expects {config.input_resolution}x{config.input_resolution}"
        )
    if config.pixel_range == "unit":
        return split
    return DatasetSplit(split.role, to_model_input(split.images, config.pixel_range), split.labels,
                        split.ids, split.resolution)


def pretrain(
    backbone: Optional[Backbone],
    data: Mapping[str, DatasetSplit],
    config: ModelConfig,
    seed: int = 0,
    epoch_log: Optional[Union[str, Path]] = None,
) -> Checkpoint:
    """Train a backbone end to end on train/validation; returns its best-validation-loss checkpoint."""
    train = _prepare(require_split(data, "train"), config)
    validation = _prepare(require_split(data, "validation"), config)
    if backbone is None:
        backbone = build_backbone(config.backbone_kind, config, seed)
    t = config.training
    trainer = Trainer(
        backbone, t.pretrain_optimizer, t.pretrain_batch_size, t.pretrain_epochs, t.patience,
        seed=seed, phase="pretrain", epoch_log=epoch_log,
    )
    result = trainer.fit(train, validation)
    return Checkpoint.from_module(
        backbone,
        history=result.state.history,
        optimizer=result.optimizer.snapshot(),
        optimizer_buffers=result.optimizer.flat_buffers(),
    )


def finetune(
    backbone_ckpt: Checkpoint,
    data: Mapping[str, DatasetSplit],
    config: ModelConfig,
    seed: int = 0,
    epoch_log: Optional[Union[str, Path]] = None,
) -> Checkpoint:
    """Assemble the detector, freeze the backbone and train the rest on the fine-tune split with Cutout."""
    if backbone_ckpt.kind != "backbone":
        raise CheckpointMismatchError(f"fine-tuning needs a backbone checkpoint, got {backbone_ckpt.kind!r}")
    finetune_split = _prepare(require_split(data, "finetune"), config)
    validation = _prepare(require_split(data, "validation"), config)
    train = data.get("train")
    if train is not None and len(train) and len(finetune_split) > FINETUNE_SHARE_WARNING * len(train):
        log.warning(
            "fine-tune split (%d) exceeds %.0f%% of the train split (%d)",
            len(finetune_split), 100 * FINETUNE_SHARE_WARNING, len(train),
        )

    model = assemble(backbone_ckpt, config, seed)
    cutout = config.cutout
    augment = (lambda images, rng: augment_batch(images, cutout, rng)) if cutout.enabled else None
    t = config.training
    trainer = Trainer(
        model, t.finetune_optimizer, t.finetune_batch_size, t.finetune_epochs, t.patience,
        seed=seed, phase="finetune", augment=augment, epoch_log=epoch_log,
    )
    result = trainer.fit(finetune_split, validation)
    return Checkpoint.from_module(
        model,
        history=result.state.history,
        optimizer=result.optimizer.snapshot(),
        optimizer_buffers=result.optimizer.flat_buffers(),
    )


def module_from_checkpoint(ckpt: Checkpoint) -> Union[Backbone, DAFDFtNet]:
    """Rebuild the backbone or detector a checkpoint was taken from."""
    config = ckpt.config
    if ckpt.kind == "backbone":
        module: Union[Backbone, DAFDFtNet] = Backbone(config)
    elif ckpt.kind == "model":
        module = DAFDFtNet(config)
    else:
        raise ConfigError(f"unknown checkpoint kind {ckpt.kind!r}")
    module.load_state_dict(ckpt.parameters())
    if isinstance(module, DAFDFtNet):
        module.freeze_backbone()
    return module


def optimizer_from_checkpoint(ckpt: Checkpoint) -> Optional[OptimizerState]:
    if ckpt.metadata.optimizer is None:
        return None
    return OptimizerState.restore(ckpt.metadata.optimizer, ckpt.optimizer_buffers())


def score_checkpoint(
    ckpt: Checkpoint,
    split: DatasetSplit,
    workers: int = 1,
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> np.ndarray:
    """Fake-probabilities of a backbone (its own sigmoid head, the baseline) or of a full detector."""
    module = module_from_checkpoint(ckpt)
    split = _prepare(split, ckpt.config)
    return predict(module, split.images, batch_size=batch_size, workers=workers)


def evaluate_checkpoint(
    ckpt: Checkpoint,
    split: DatasetSplit,
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
    batch_size: int = DEFAULT_EVAL_BATCH,
) -> EvalResult:
    scores = score_checkpoint(ckpt, split, workers=workers, batch_size=batch_size)
    result = evaluate_scores(scores, split.labels, threshold)
    log.info("%s checkpoint on %s: acc=%.4f auroc=%.4f", ckpt.kind, split.role, result.accuracy, result.auroc)
    return result
