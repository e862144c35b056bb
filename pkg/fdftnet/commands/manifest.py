"""``rerun`` command: replay a recorded run from its manifest."""

import argparse
import logging
from pathlib import Path

from pydantic import ValidationError

from ..config import config
from ..errors import ConfigError
from ..models.schemas import RunManifest

log = logging.getLogger(__name__)


def read_manifest(path: Path) -> RunManifest:
    try:
        return RunManifest.model_validate_json(path.read_text())
    except ValidationError as e:
        raise ConfigError(f"{path} is not a run manifest: {e.error_count()} validation error(s)") from e


def cmd_rerun(args: argparse.Namespace) -> int:
    from . import main

    manifest = read_manifest(args.manifest)
    if manifest.command == "rerun":
        raise ConfigError("a rerun manifest cannot be replayed")
    if manifest.toolkit_version != config.VERSION:
        log.warning(
            "manifest was written by toolkit %s, running %s; outputs may differ",
            manifest.toolkit_version, config.VERSION,
        )
    log.info("replaying %s: %s", manifest.command, " ".join(manifest.argv))
    return main(manifest.argv)


def register(subparsers) -> None:
    p = subparsers.add_parser("rerun", help="Re-execute a run from its manifest")
    p.add_argument("manifest", type=Path, help="Manifest JSON written beside a run's outputs")
    p.set_defaults(handler=cmd_rerun, seed=None)
