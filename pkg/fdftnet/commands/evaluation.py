"""``eval`` and ``ablate`` commands."""

import argparse
import logging
from pathlib import Path

from ..config import config
from ..errors import SingleClassError
from ..services.metrics import (
    DEFAULT_THRESHOLD,
    ablation_compare,
    accuracy,
    evaluate_scores,
    format_metrics,
    write_eval_result,
)
from ..services.pipeline import evaluate_checkpoint, finetune, score_checkpoint
from ..utils.audit import audit_logger
from ..utils.checkpoint import load_checkpoint, save_checkpoint
from ..utils.datasets import require_split
from .common import add_data_arguments, add_seed_argument, data_input, load_data, resolve_seed, write_manifest
from .training import add_finetune_arguments, epoch_log_path, finetune_config, load_backbone

log = logging.getLogger(__name__)

# label -> (file stem, channel attention on)
ABLATION_ARMS = {
    "DA-FDFtNet": ("da_fdftnet", True),
    "FDFtNet": ("fdftnet", False),
}


def _add_eval_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--role", choices=config.DATASET_ROLES, default="test", help="Split to evaluate on")
    parser.add_argument("--workers", type=int, default=config.EVAL_WORKERS, help="Threads used to shard evaluation")
    parser.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="Score at or above which an image is called fake")


def cmd_eval(args: argparse.Namespace) -> int:
    seed = resolve_seed(args)
    ckpt = load_checkpoint(args.ckpt)
    data = load_data(args, ckpt.config.input_resolution, seed)
    split = require_split(data, args.role)
    scores = score_checkpoint(ckpt, split, workers=args.workers)

    try:
        result = evaluate_scores(scores, split.labels, args.threshold)
    except SingleClassError as e:
        print(format_metrics(accuracy(scores, split.labels, args.threshold), None))
        log.error("%s split: %s", args.role, e.detail)
        audit_logger.log_error("eval", e, {"checkpoint": str(args.ckpt), "role": args.role})
        return e.exit_code

    out = args.out or args.ckpt.with_name(f"{args.ckpt.name}.{args.role}.eval.csv")
    write_eval_result(result, out, checkpoint=str(args.ckpt), kind=ckpt.kind, role=args.role)
    write_manifest(
        args, out, ckpt.config,
        inputs={"ckpt": str(args.ckpt), **data_input(args)},
        outputs={"result": str(out)},
    )
    print(format_metrics(result.accuracy, result.auroc))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    """Fine-tune with and without channel attention under one seed and one backbone, then compare."""
    seed = resolve_seed(args)
    backbone_ckpt = load_backbone(args.backbone_ckpt)
    data = load_data(args, backbone_ckpt.config.input_resolution, seed)
    test = require_split(data, args.role)
    out_dir: Path = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    results, outputs = {}, {}
    cfg = None
    for label, (stem, attention) in ABLATION_ARMS.items():
        cfg = finetune_config(backbone_ckpt.config, args, use_channel_attention=attention)
        ckpt_path = out_dir / f"{stem}.ckpt"
        ckpt = finetune(backbone_ckpt, data, cfg, seed=seed, epoch_log=epoch_log_path(ckpt_path))
        save_checkpoint(ckpt, ckpt_path)
        results[label] = evaluate_checkpoint(ckpt, test, args.threshold, workers=args.workers)
        outputs[stem] = str(ckpt_path)
        log.info("%s: %s", label, format_metrics(results[label].accuracy, results[label].auroc))

    baseline = None
    if args.with_baseline:
        baseline = evaluate_checkpoint(backbone_ckpt, test, args.threshold, workers=args.workers)

    report = ablation_compare(results["DA-FDFtNet"], results["FDFtNet"], baseline=baseline)
    text = report.to_text()
    (out_dir / "ablation.txt").write_text(text + "\n")
    report.to_csv(out_dir / "ablation.csv")
    outputs.update(report=str(out_dir / "ablation.txt"), table=str(out_dir / "ablation.csv"))
    write_manifest(
        args, out_dir, cfg,
        inputs={"backbone_ckpt": str(args.backbone_ckpt), **data_input(args)},
        outputs=outputs,
    )
    print(text)
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("eval", help="Print ACC and AUROC of a backbone or detector checkpoint")
    p.add_argument("--ckpt", type=Path, required=True, help="Backbone or model checkpoint")
    add_data_arguments(p)
    _add_eval_arguments(p)
    p.add_argument("--out", type=Path, default=None, help="Result CSV (default: beside the checkpoint)")
    add_seed_argument(p)
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("ablate", help="Compare the detector with and without channel attention")
    add_finetune_arguments(p)
    add_data_arguments(p)
    _add_eval_arguments(p)
    p.add_argument("--out-dir", type=Path, required=True, help="Directory for checkpoints, logs and the report")
    p.add_argument("--with-baseline", action="store_true", help="Add the backbone-alone row")
    add_seed_argument(p)
    p.set_defaults(handler=cmd_ablate)
