"""
gpccopf.pipeline
================

File-based stage handoff behind the command line: configuration, on-disk records,
manifest bookkeeping and the stage implementations.
"""

from __future__ import annotations

from gpccopf.pipeline.artifacts import ManifestFile, ModelFile, ReportFile, SolutionFile
from gpccopf.pipeline.config import RunConfig, load_config
from gpccopf.pipeline.stages import cmd_dataset, cmd_pipeline, cmd_solve, cmd_train, cmd_validate

__all__ = [
    "ManifestFile",
    "ModelFile",
    "ReportFile",
    "SolutionFile",
    "RunConfig",
    "load_config",
    "cmd_dataset",
    "cmd_train",
    "cmd_solve",
    "cmd_validate",
    "cmd_pipeline",
]
