"""Commands Package.

This package contains the command-line interface of the toolkit.
It includes commands for:
- Backbone pretraining and detector fine-tuning
- Evaluation and the channel-attention ablation
- Gradient checks
- Synthetic fixture generation
- Replaying a run from its manifest

Exit codes: 0 success, 1 failed gradient check or tensor misuse,
2 bad flags or configuration, 3 data, checkpoint or metric errors,
4 non-finite training failure.
"""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from ..config import config
from ..errors import FDFTError
from ..utils.audit import audit_logger
from ..utils.logger import configure_logging
from . import evaluation, fixtures, manifest, training, verification

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdftnet",
        description="Train, evaluate and verify the attention-augmented fake-image detector",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {config.VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Echo progress to stderr")
    parser.add_argument("--log-level", default=None, help=f"Run log level (default: {config.LOG_LEVEL})")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for module in (training, evaluation, verification, fixtures, manifest):
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 after printing usage, 0 after --help / --version
        return int(e.code or 0)
    # global flags are not part of the replayed command line
    args.argv = argv[argv.index(args.command):]

    configure_logging(args.log_level, verbose=args.verbose)
    audit_logger.start_run(args.command, {"argv": args.argv})
    try:
        code = args.handler(args)
    except ValidationError as e:
        log.error("%s: invalid configuration\n%s", args.command, e)
        audit_logger.log_error(args.command, e)
        code = EXIT_CONFIG
    except FDFTError as e:
        log.error("%s: %s", args.command, e.detail)
        audit_logger.log_error(args.command, e)
        code = e.exit_code
    except OSError as e:
        log.error("%s: %s", args.command, e)
        audit_logger.log_error(args.command, e)
        code = EXIT_DATA
    audit_logger.finish_run(args.command, "success" if code == EXIT_OK else "error", {"exit_code": code})
    return code
