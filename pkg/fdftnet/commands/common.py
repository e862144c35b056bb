"""Argument groups and helpers shared by the subcommands."""

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional

from ..config import config
from ..models.schemas import ModelConfig, RunManifest, SynthSpec
from ..utils.datasets import DatasetSplit, load_dataset, synth_dataset

log = logging.getLogger(__name__)

SYNTH_SOURCE = "synth"
DEFAULT_SYNTH_PER_CLASS = 1000


def add_seed_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed", type=int, default=None,
        help=f"Random seed (default: $FDFT_SEED or {config.DEFAULT_SEED})",
    )


def add_data_arguments(parser: argparse.ArgumentParser, with_resolution: bool = False) -> None:
    """``--data`` plus the synthetic-fixture knobs; the resolution flag only where no checkpoint fixes it."""
    parser.add_argument(
        "--data", required=True,
        help=f"Dataset root with <role>/<real|fake>/ directories, or '{SYNTH_SOURCE}' for the generated fixture",
    )
    if with_resolution:
        parser.add_argument("--resolution", type=int, default=64, help="Input resolution R (images are resized to RxR)")
    parser.add_argument(
        "--synth-n-per-class", type=int, default=DEFAULT_SYNTH_PER_CLASS,
        help=f"Images per class when --data synth (default: {DEFAULT_SYNTH_PER_CLASS}, a 600/180/200/20 split)",
    )
    parser.add_argument("--synth-amplitude", type=float, default=0.1, help="Checkerboard amplitude when --data synth")
    parser.add_argument("--synth-seed", type=int, default=None, help="Fixture seed when --data synth (default: --seed)")


def resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = config.DEFAULT_SEED
    return args.seed


def load_data(args: argparse.Namespace, resolution: int, seed: int) -> Dict[str, DatasetSplit]:
    """Splits named by ``--data``; the synthetic fixture is drawn from ``seed``."""
    if args.data == SYNTH_SOURCE:
        if args.synth_seed is None:
            args.synth_seed = seed
        spec = SynthSpec(
            n_per_class=args.synth_n_per_class, seed=args.synth_seed,
            amplitude=args.synth_amplitude, resolution=resolution,
        )
        return synth_dataset(spec)
    return load_dataset(args.data, resolution=resolution, workers=config.EVAL_WORKERS)


def data_input(args: argparse.Namespace) -> Dict[str, str]:
    if args.data == SYNTH_SOURCE:
        return {
            "data": f"{SYNTH_SOURCE}:n_per_class={args.synth_n_per_class},"
                    f"amplitude={args.synth_amplitude},seed={args.synth_seed}"
        }
    return {"data": str(Path(args.data).resolve())}


def ftt_channels(repeats: int) -> List[int]:
    """Stage widths 32, 64, 128, ... for ``repeats`` FTT stages."""
    return [32 * 2 ** i for i in range(repeats)]


def replayable_argv(argv: List[str], seed: int) -> List[str]:
    """``argv`` with the seed made explicit, so a rerun ignores $FDFT_SEED."""
    if any(a == "--seed" or a.startswith("--seed=") for a in argv):
        return list(argv)
    return list(argv) + ["--seed", str(seed)]


def manifest_path(output: Path) -> Path:
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


def write_manifest(
    args: argparse.Namespace,
    output: Path,
    resolved: Optional[ModelConfig] = None,
    inputs: Optional[Dict[str, str]] = None,
    outputs: Optional[Dict[str, str]] = None,
) -> Path:
    """Record what ran and with which settings beside ``output``."""
    manifest = RunManifest(
        command=args.command,
        argv=replayable_argv(args.argv, args.seed) if args.seed is not None else list(args.argv),
        seed=args.seed or 0,
        resolved_config=resolved.model_dump(mode="json") if resolved is not None else {},
        inputs=inputs or {},
        outputs=outputs or {},
        settings=config.get_settings(),
    )
    path = manifest_path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    log.info("manifest written to %s", path)
    return path
