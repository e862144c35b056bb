"""``gradcheck`` command."""

import argparse
import logging
from pathlib import Path

import pandas as pd

from ..services.verification import DEFAULT_SEEDS, DEFAULT_TOLERANCE, GRADIENT_SUITE, run_gradient_suite
from .common import write_manifest

log = logging.getLogger(__name__)


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradient_suite(tolerance=args.tolerance, seeds=args.seeds, only=tuple(args.only or ()))
    rows = []
    failed = []
    for name, reports in results.items():
        worst = max(r.max_relative_error for r in reports)
        skipped = sum(r.skipped_elements for r in reports)
        ok = all(r.passed for r in reports)
        if not ok:
            failed.append(name)
        print(f"{name:<22} max_rel_err={worst:.3e}  skipped={skipped:<4d} {'ok' if ok else 'FAIL'}")
        for param in reports[0].per_parameter_errors:
            param_worst = max(r.per_parameter_errors[param] for r in reports)
            print(f"    {param:<30} {param_worst:.3e}")
        for r in reports:
            rows.extend(
                {"op": name, "seed": r.seed, "parameter": p, "relative_error": e, "passed": e < r.tolerance}
                for p, e in r.per_parameter_errors.items()
            )

    print(f"{len(results) - len(failed)}/{len(results)} ops passed at tolerance {args.tolerance:g}")
    if args.report:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(args.report, index=False, float_format="%.17g")
        write_manifest(args, args.report, outputs={"report": str(args.report)})
    if failed:
        log.error("gradient check failed for: %s", ", ".join(failed))
        return 1
    return 0


def register(subparsers) -> None:
    p = subparsers.add_parser("gradcheck", help="Finite-difference check of every differentiable building block")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="Largest accepted relative error")
    p.add_argument("--seeds", type=int, default=DEFAULT_SEEDS, help="Seeds per op")
    p.add_argument("--only", nargs="*", choices=[name for name, _ in GRADIENT_SUITE], help="Restrict to these ops")
    p.add_argument("--report", type=Path, default=None, help="Write per-parameter errors as CSV")
    p.set_defaults(handler=cmd_gradcheck, seed=None)
