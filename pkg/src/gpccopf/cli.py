"""
Command line: ``gpccopf {dataset,train,solve,validate,pipeline} --config run.json``.

Exit status 0 on success; failures print one JSON line on stderr and exit with the
error's code (1 config, 2 missing artifact, 3 numeric failure).
"""

from __future__ import annotations

import argparse
import logging
from collections.abc import Callable, Sequence
from pathlib import Path

from gpccopf.pipeline.config import RunConfig, load_config
from gpccopf.pipeline.stages import cmd_dataset, cmd_pipeline, cmd_solve, cmd_train, cmd_validate
from gpccopf.reporting.console import configure_logging, run_with_diagnostics

__all__ = ["build_parser", "main"]

logger = logging.getLogger(__name__)

Stage = Callable[..., list[Path]]

_COMMANDS: dict[str, tuple[Stage, str]] = {
    "dataset": (cmd_dataset, "sample injections and write the AC/DC datasets"),
    "train": (cmd_train, "train the GP surrogate"),
    "solve": (cmd_solve, "solve the chance-constrained OPF"),
    "validate": (cmd_validate, "Monte-Carlo validation and regression metrics"),
    "pipeline": (cmd_pipeline, "run every stage in order"),
}


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpccopf", description="GP-based chance-constrained AC optimal power flow"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="run configuration (JSON)")
        p.add_argument("--out", type=Path, default=None, help="override output_dir")
        p.add_argument("--seed", type=_seed, default=None, help="override every seed")
        p.add_argument(
            "--canonical",
            action="store_true",
            help="zero timing fields and omit timestamps for byte-stable outputs",
        )
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


@run_with_diagnostics()
def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    cfg: RunConfig = load_config(args.config, out=args.out, seed=args.seed)
    stage, _ = _COMMANDS[args.command]
    written = stage(cfg, canonical=args.canonical)
    for path in written:
        logger.info("wrote %s", path)
    return 0
