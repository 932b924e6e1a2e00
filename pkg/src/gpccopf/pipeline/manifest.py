"""
Stage bookkeeping in ``manifest.json``: what each stage read and what it wrote.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from pathlib import Path

from gpccopf.constants import manifest_path
from gpccopf.errors import MissingArtifactError
from gpccopf.pipeline.artifacts import ManifestFile, StageRecord
from gpccopf.reporting.warnings_bridge import StaleArtifactWarning, warn_diagnostic
from gpccopf.utils.fs_utils import sha256_file
from gpccopf.utils.time_utils import now_iso

__all__ = ["require", "check_upstream", "record_stage", "file_digests"]

logger = logging.getLogger(__name__)


def require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise MissingArtifactError.make(
            f"missing {what}", path=str(path), hint="run the upstream stage first"
        )
    return path


def file_digests(paths: Iterable[Path]) -> dict[str, str]:
    return {p.name: sha256_file(p) for p in paths}


def check_upstream(out_dir: Path, paths: Iterable[Path]) -> dict[str, str]:
    """
    Compare upstream files with the digests the manifest recorded for them. A mismatch
    warns and the stage proceeds. Returns the current digests.
    """
    manifest = ManifestFile.load(manifest_path(out_dir))
    current = file_digests(paths)
    for name, digest in current.items():
        recorded = manifest.digest_of(name)
        if recorded is not None and recorded != digest:
            warn_diagnostic(
                StaleArtifactWarning,
                "upstream artifact changed since it was recorded",
                code="artifact.stale",
                file=name,
                hint="re-run the stage that produces it",
            )
    return current


def record_stage(
    out_dir: Path,
    stage: str,
    *,
    inputs: Mapping[str, str],
    outputs: Iterable[Path],
    canonical: bool = False,
) -> None:
    path = manifest_path(out_dir)
    rec = StageRecord(
        inputs=dict(sorted(inputs.items())),
        outputs=file_digests(outputs),
        timestamp=None if canonical else now_iso(),
    )
    ManifestFile.load(path).with_stage(stage, rec).save(path)
    logger.debug("manifest: recorded stage %s", stage)
