"""``pretrain`` and ``finetune`` commands."""

import argparse
import logging
from pathlib import Path

from ..errors import CheckpointMismatchError
from ..models.schemas import CUTOUT_PRESETS, CutoutConfig, ModelConfig, OptimizerConfig, TrainingConfig
from ..network.backbone import BACKBONE_KINDS
from ..services.pipeline import finetune, pretrain
from ..utils.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .common import (
    add_data_arguments,
    add_seed_argument,
    data_input,
    ftt_channels,
    load_data,
    resolve_seed,
    write_manifest,
)

log = logging.getLogger(__name__)


def epoch_log_path(out: Path) -> Path:
    return out.with_name(out.name + ".epochs.csv")


def _add_optimizer_arguments(parser: argparse.ArgumentParser, batch_size: int) -> None:
    parser.add_argument("--epochs", type=int, default=200, help="Maximum number of epochs")
    parser.add_argument("--patience", type=int, default=20, help="Epochs without validation improvement before stopping")
    parser.add_argument("--batch-size", type=int, default=batch_size, help="Mini-batch size")
    parser.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    parser.add_argument("--lr", type=float, default=None, help="Learning rate (default depends on phase and optimizer)")
    parser.add_argument("--max-grad-norm", type=float, default=None, help="Clip the global gradient norm")


def add_finetune_arguments(parser: argparse.ArgumentParser) -> None:
    """Detector, Cutout and fine-tune optimizer flags (shared with ``ablate``)."""
    parser.add_argument("--backbone-ckpt", type=Path, required=True, help="Pretrained backbone checkpoint")
    parser.add_argument("--ftt-repeats", type=int, default=3, help="M: self-attention stages in the FTT")
    parser.add_argument("--mb-repeats", type=int, default=4, help="N: MBblockV3 blocks after fusion")
    parser.add_argument("--mb-channels", type=int, default=128, help="MBblockV3 output width")
    parser.add_argument("--preset", choices=sorted(CUTOUT_PRESETS), default="deepfake",
                        help="Cutout preset: deepfake (beta=5) or gan (beta=10)")
    parser.add_argument("--cutout-alpha", type=int, default=3, help="Cutout masks per image")
    parser.add_argument("--cutout-beta", type=int, default=None, help="Largest mask multiplier (overrides --preset)")
    parser.add_argument("--no-cutout", action="store_true", help="Disable Cutout")
    _add_optimizer_arguments(parser, batch_size=16)


def pretrain_config(args: argparse.Namespace) -> ModelConfig:
    training = TrainingConfig(
        pretrain_optimizer=OptimizerConfig.defaults(
            "pretrain", args.optimizer, learning_rate=args.lr, max_grad_norm=args.max_grad_norm,
        ),
        pretrain_batch_size=args.batch_size,
        pretrain_epochs=args.epochs,
        patience=args.patience,
    )
    return ModelConfig(
        backbone_kind=args.backbone,
        input_resolution=args.resolution,
        pixel_range=args.pixel_range,
        training=training,
    )


def finetune_config(base: ModelConfig, args: argparse.Namespace, use_channel_attention: bool) -> ModelConfig:
    """The backbone's config with the detector, Cutout and fine-tune settings from ``args``."""
    overrides = {"alpha": args.cutout_alpha, "enabled": not args.no_cutout}
    if args.cutout_beta is not None:
        overrides["beta"] = args.cutout_beta
    cutout = CutoutConfig.preset(args.preset, **overrides)
    training = base.training.model_copy(update={
        "finetune_optimizer": OptimizerConfig.defaults(
            "finetune", args.optimizer, learning_rate=args.lr, max_grad_norm=args.max_grad_norm,
        ),
        "finetune_batch_size": args.batch_size,
        "finetune_epochs": args.epochs,
        "patience": args.patience,
    })
    record = base.model_dump()
    record.update(
        ftt_repeats=args.ftt_repeats,
        ftt_channels=ftt_channels(args.ftt_repeats),
        mbblock_repeats=args.mb_repeats,
        mbblock_channels=args.mb_channels,
        use_channel_attention=use_channel_attention,
        cutout=cutout.model_dump(),
        training=training.model_dump(),
    )
    return ModelConfig.model_validate(record)


def load_backbone(path: Path) -> Checkpoint:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "backbone":
        raise CheckpointMismatchError(f"{path} holds a {ckpt.kind!r} checkpoint, not a backbone")
    return ckpt


def cmd_pretrain(args: argparse.Namespace) -> int:
    seed = resolve_seed(args)
    cfg = pretrain_config(args)
    data = load_data(args, cfg.input_resolution, seed)
    epoch_log = epoch_log_path(args.out)
    ckpt = pretrain(None, data, cfg, seed=seed, epoch_log=epoch_log)
    save_checkpoint(ckpt, args.out)
    write_manifest(
        args, args.out, cfg, inputs=data_input(args),
        outputs={"checkpoint": str(args.out), "epoch_log": str(epoch_log)},
    )
    best = min(ckpt.history, key=lambda r: r.val_loss)
    print(f"{cfg.backbone_kind} backbone: {len(ckpt.history)} epochs, best epoch {best.epoch} "
          f"(val_loss {best.val_loss:.5f}, val ACC (%): {100.0 * best.val_acc:.2f})")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    seed = resolve_seed(args)
    backbone_ckpt = load_backbone(args.backbone_ckpt)
    cfg = finetune_config(backbone_ckpt.config, args, use_channel_attention=not args.no_channel_attention)
    data = load_data(args, cfg.input_resolution, seed)
    epoch_log = epoch_log_path(args.out)
    ckpt = finetune(backbone_ckpt, data, cfg, seed=seed, epoch_log=epoch_log)
    save_checkpoint(ckpt, args.out)
    write_manifest(
        args, args.out, cfg,
        inputs={"backbone_ckpt": str(args.backbone_ckpt), **data_input(args)},
        outputs={"checkpoint": str(args.out), "epoch_log": str(epoch_log)},
    )
    label = "DA-FDFtNet" if cfg.use_channel_attention else "FDFtNet"
    best = min(ckpt.history, key=lambda r: r.val_loss)
    print(f"{label} (M={cfg.ftt_repeats}, N={cfg.mbblock_repeats}): {len(ckpt.history)} epochs, "
          f"best epoch {best.epoch} (val_loss {best.val_loss:.5f}, val ACC (%): {100.0 * best.val_acc:.2f})")
    print(f"checkpoint: {args.out}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("pretrain", help="Train a backbone end to end")
    add_data_arguments(p, with_resolution=True)
    p.add_argument("--backbone", choices=BACKBONE_KINDS, required=True, help="Backbone architecture")
    p.add_argument("--out", type=Path, required=True, help="Checkpoint file to write")
    p.add_argument("--pixel-range", choices=("unit", "signed"), default="unit", help="Pixel scaling fed to the network")
    _add_optimizer_arguments(p, batch_size=64)
    add_seed_argument(p)
    p.set_defaults(handler=cmd_pretrain)

    p = subparsers.add_parser("finetune", help="Fine-tune the detector around a frozen pretrained backbone")
    add_finetune_arguments(p)
    add_data_arguments(p)
    p.add_argument("--out", type=Path, required=True, help="Checkpoint file to write")
    p.add_argument("--no-channel-attention", action="store_true",
                   help="Drop the channel attention head (the FDFtNet ablation)")
    add_seed_argument(p)
    p.set_defaults(handler=cmd_finetune)
