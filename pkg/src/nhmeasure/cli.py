"""Command-line entry point: ``nhmeasure run|validate|list``.

Exit codes: 0 success, 2 parse or validation failure, 3 numerical failure,
4 I/O failure.  The default output directory is taken from the
``NHMEASURE_OUT_DIR`` environment variable, falling back to ``./runs``.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .errors import NHMeasureError, NumericalError, ParseError, ValidationError
from .scenario import bundled_path, bundled_scenarios, load_scenario, parse_text

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

OUT_DIR_ENV = "NHMEASURE_OUT_DIR"
DEFAULT_OUT_DIR = "runs"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhmeasure",
        description="Run measurement scenarios on effective non-Hermitian Hamiltonians.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="validate and run a scenario file or bundled scenario")
    run.add_argument("scenario", help="path to a YAML scenario, or the name of a bundled one")
    run.add_argument("--out-dir", default=None,
                     help=f"output directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads for momentum sweeps")
    run.add_argument("--quiet", action="store_true", help="print nothing on success")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario")
    val.add_argument("--quiet", action="store_true")

    lst = sub.add_parser("list", help="list the bundled scenarios")
    lst.add_argument("--quiet", action="store_true")
    return parser


def _err(msg: str) -> None:
    print(f"nhmeasure: {msg}", file=sys.stderr)


def _describe(name: str) -> str:
    try:
        data = parse_text(bundled_path(name).read_text())
    except ParseError:
        return ""
    desc = data.get("description", "")
    return " ".join(str(desc).split())


def _headline(summary: dict) -> str:
    res = summary["results"]
    keys = ("slope", "final_shift_Q", "max_offdiag", "min_ratio", "max_abs_z", "ket_slope")
    parts = [f"{k}={res[k]:.6g}" for k in keys if isinstance(res.get(k), float)]
    return ", ".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for name in bundled_scenarios():
            print(f"{name}\t{_describe(name)}" if not args.quiet else name)
        return EXIT_OK

    try:
        sc = load_scenario(args.scenario, seed=getattr(args, "seed", None))
    except (ParseError, ValidationError) as exc:
        _err(f"{args.scenario}: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        _err(f"cannot read {args.scenario}: {exc}")
        return EXIT_IO
    except NumericalError as exc:
        _err(f"{args.scenario}: {type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    except NHMeasureError as exc:
        _err(f"{args.scenario}: {exc}")
        return EXIT_INVALID

    if args.command == "validate":
        if not args.quiet:
            print(f"{sc.name}: ok ({sc.kind})")
        return EXIT_OK

    from .runner import run_scenario

    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
    if args.threads < 1:
        _err("--threads must be at least 1")
        return EXIT_INVALID
    try:
        summary = run_scenario(sc, out_dir, threads=args.threads)
    except OSError as exc:
        _err(f"scenario {sc.name}: I/O failure: {exc}")
        return EXIT_IO
    except (NumericalError, NHMeasureError, ArithmeticError, ValueError) as exc:
        _err(f"scenario {sc.name} ({sc.kind}): {type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    if not args.quiet:
        print(f"{sc.name}: wrote {os.path.join(out_dir, sc.name)}  {_headline(summary)}".rstrip())
        for w in summary["warnings"]:
            print(f"  warning: {w}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
