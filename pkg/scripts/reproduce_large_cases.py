"""
Long-running reproduction on the IEEE-39 and IEEE-118 systems.

IEEE-39 runs from the bundled case and ``ieee39_config.json``. IEEE-118 is imported from
a MATPOWER ``case118.m`` supplied on the command line, with six renewable units of
210 MW each at buses 10, 27, 47, 51, 78 and 92; the converted case and its run config
are written next to the results.

    python scripts/reproduce_large_cases.py --root runs [--case118 case118.m] [--skip39]
"""

from __future__ import annotations

import argparse
import json
import logging
from collections.abc import Sequence
from pathlib import Path

from rich.console import Console
from rich.table import Table

from gpccopf.constants import data_dir, report_path, solution_path
from gpccopf.grid import serialize_case
from gpccopf.matpower import load_matpower_case
from gpccopf.pipeline import ReportFile, RunConfig, SolutionFile, load_config
from gpccopf.pipeline.stages import cmd_pipeline
from gpccopf.reporting.console import configure_logging, run_with_diagnostics

logger = logging.getLogger("gpccopf.reproduce")

IEEE118_RES_MW = {10: 210.0, 27: 210.0, 47: 210.0, 51: 210.0, 78: 210.0, 92: 210.0}


def prepare_ieee118(matpower: Path, root: Path) -> Path:
    """Convert case118.m and write ``ieee118.json`` plus ``run.json`` under ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    case = load_matpower_case(matpower, res_mw=IEEE118_RES_MW)
    (root / "ieee118.json").write_bytes(serialize_case(case))
    template = json.loads((data_dir() / "ieee118_config.json").read_text(encoding="utf-8"))
    run = root / "run.json"
    run.write_text(json.dumps(template, indent=2) + "\n", encoding="utf-8")
    return run


def _summary(rows: list[tuple[str, RunConfig]]) -> Table:
    table = Table(title="CC-OPF reproduction")
    for col in ("case", "status", "cost", "infeasibility", "rmse", "DC rmse"):
        table.add_column(col)
    for name, cfg in rows:
        sol = SolutionFile.load(solution_path(cfg.out_dir))
        report = ReportFile.load(report_path(cfg.out_dir))
        metrics = report.validation.metrics
        table.add_row(
            name,
            sol.status,
            f"{sol.cost:.4g}",
            f"{report.validation.infeasibility:.4f}",
            "n/a" if metrics is None else f"{metrics.rmse_avg:.3g}",
            "n/a" if report.dc_rmse is None else f"{report.dc_rmse:.3g}",
        )
    return table


@run_with_diagnostics()
def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="IEEE-39 / IEEE-118 CC-OPF reproduction")
    parser.add_argument("--root", type=Path, default=Path("runs"), help="results directory")
    parser.add_argument("--case118", type=Path, default=None, help="MATPOWER case118.m")
    parser.add_argument("--skip39", action="store_true", help="do not run IEEE-39")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    runs: list[tuple[str, RunConfig]] = []
    if not args.skip39:
        runs.append(
            ("ieee39", load_config(data_dir() / "ieee39_config.json", out=args.root / "ieee39"))
        )
    if args.case118 is not None:
        runs.append(("ieee118", load_config(prepare_ieee118(args.case118, args.root / "ieee118"))))
    if not runs:
        parser.error("nothing to run: pass --case118 or drop --skip39")

    for name, cfg in runs:
        logger.info("running %s into %s", name, cfg.out_dir)
        cmd_pipeline(cfg)
    Console().print(_summary(runs))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
