"""``synth`` command: materialize the synthetic fixture on disk."""

import argparse
from pathlib import Path

from ..models.schemas import SynthSpec
from ..utils.datasets import synth_dataset, write_dataset
from .common import DEFAULT_SYNTH_PER_CLASS, add_seed_argument, resolve_seed, write_manifest


def cmd_synth(args: argparse.Namespace) -> int:
    seed = resolve_seed(args)
    spec = SynthSpec(
        n_per_class=args.n_per_class, seed=seed, amplitude=args.amplitude, resolution=args.resolution,
    )
    splits = synth_dataset(spec)
    root = write_dataset(splits, args.out)
    write_manifest(args, root, outputs={"dataset": str(root)})
    for role, split in splits.items():
        counts = split.class_counts()
        print(f"{role:<11} real={counts['real']:<5d} fake={counts['fake']}")
    print(f"dataset: {root}")
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("synth", help="Write the seeded real/fake fixture in the dataset layout")
    p.add_argument("--out", type=Path, required=True, help="Dataset root to create")
    p.add_argument(
        "--n-per-class", type=int, default=DEFAULT_SYNTH_PER_CLASS,
        help=f"Images per class across all roles (default: {DEFAULT_SYNTH_PER_CLASS})",
    )
    p.add_argument("--amplitude", type=float, default=0.1, help="Checkerboard amplitude added to fake images")
    p.add_argument("--resolution", type=int, default=64, help="Image side in pixels")
    add_seed_argument(p)
    p.set_defaults(handler=cmd_synth)
