"""
Command-line application: logging setup, argument parser and subcommand dispatch
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .core.config import settings
from .core.exceptions import FluidFcfsError
from .routers import analyze, lp, permutations, schemas, simulate, trace, ttest

logger = logging.getLogger(__name__)

SUBCOMMANDS = (analyze, trace, lp, simulate, ttest, permutations, schemas)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluid-fcfs",
        description="Resource pooling, fluid trajectories, throughput-optimal designs and FCFS-ALIS simulation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--spec", default=None, help="System spec: a JSON file, inline JSON, or a shipped name such as system1")
    parser.add_argument("--out-dir", type=Path, default=settings.output_dir, help="Directory for output files")
    parser.add_argument("--format", choices=["json", "csv"], default="csv",
                        help="json writes documents only; csv also writes the tables")
    parser.add_argument("--seed", type=int, default=None, help="Seed base for simulation streams")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes for replications")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only, no progress bar")

    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in SUBCOMMANDS:
        module.register(subparsers)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    if verbose or settings.debug:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    configure_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except FluidFcfsError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Failed to run {args.command}: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
