"""
gpccopf exceptions: a base GpccopfError that wraps a Diagnostic and renders with rich,
plus one subclass per failure kind. Each kind has a stable code and a CLI exit status.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Self

from rich.console import Console, ConsoleOptions, RenderResult

from gpccopf.reporting.diagnostics import (
    ContextValue,
    Diagnostic,
    plain_context,
    render_diagnostic,
)

__all__ = [
    "GpccopfError",
    "CaseFormatError",
    "NoSlackBusError",
    "DanglingBranchError",
    "DuplicateBusError",
    "CaseValidationError",
    "ZeroImpedanceError",
    "PowerFlowDivergedError",
    "SingularJacobianError",
    "UnbalancedInjectionError",
    "SingularSusceptanceError",
    "InfeasibleSampleError",
    "UnstableDatasetError",
    "SchemaMismatchError",
    "ConstantColumnError",
    "KernelNotPDError",
    "TrainingError",
    "NlpFailure",
    "QuantileRangeError",
    "EmptyMarginBandError",
    "RankDeficientError",
    "GapTooWideError",
    "ConfigError",
    "MissingArtifactError",
]

EXIT_CONFIG = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_NUMERIC = 3


@dataclass(slots=True)
class GpccopfError(Exception):
    """
    Base gpccopf exception that carries a Diagnostic and renders nicely with Rich.
    """

    diagnostic: Diagnostic

    code: ClassVar[str] = "gpccopf.error"
    exit_code: ClassVar[int] = EXIT_NUMERIC

    @classmethod
    def make(
        cls,
        message: str,
        *,
        hint: str | None = None,
        notes: list[str] | None = None,
        **context: object,
    ) -> Self:
        return cls(
            Diagnostic(
                message=message,
                code=cls.code,
                context=plain_context(context),
                notes=notes or [],
                hint=hint,
            )
        )

    @property
    def context(self) -> dict[str, ContextValue]:
        return self.diagnostic.context

    def __str__(self) -> str:
        return self.diagnostic.one_line()

    def __rich_console__(self, console: Console, options: ConsoleOptions) -> RenderResult:
        _ = console
        _ = options
        yield render_diagnostic(self.diagnostic)


# ─────────── grid ───────────


class CaseFormatError(GpccopfError):
    code = "case.malformed"
    exit_code = EXIT_CONFIG


class NoSlackBusError(GpccopfError):
    code = "case.no_slack"
    exit_code = EXIT_CONFIG


class DanglingBranchError(GpccopfError):
    code = "case.dangling_branch"
    exit_code = EXIT_CONFIG


class DuplicateBusError(GpccopfError):
    code = "case.duplicate_bus"
    exit_code = EXIT_CONFIG


class CaseValidationError(GpccopfError):
    code = "case.invalid"
    exit_code = EXIT_CONFIG


class ZeroImpedanceError(GpccopfError):
    code = "grid.zero_impedance"


# ─────────── powerflow ───────────


class PowerFlowDivergedError(GpccopfError):
    code = "pf.diverged"


class SingularJacobianError(GpccopfError):
    code = "pf.singular_jacobian"


class UnbalancedInjectionError(GpccopfError):
    code = "pf.unbalanced"


class SingularSusceptanceError(GpccopfError):
    code = "pf.singular_susceptance"


# ─────────── dataset ───────────


class InfeasibleSampleError(GpccopfError):
    code = "dataset.infeasible_sample"


class UnstableDatasetError(GpccopfError):
    code = "dataset.unstable"


class SchemaMismatchError(GpccopfError):
    code = "dataset.schema_mismatch"
    exit_code = EXIT_CONFIG


class ConstantColumnError(GpccopfError):
    code = "dataset.constant_column"


# ─────────── gp ───────────


class KernelNotPDError(GpccopfError):
    code = "gp.non_pd"


class TrainingError(GpccopfError):
    code = "gp.training"


# ─────────── nlp / ccopf ───────────


class NlpFailure(GpccopfError):
    code = "nlp.failure"


class QuantileRangeError(GpccopfError):
    code = "ccopf.eps_range"
    exit_code = EXIT_CONFIG


class EmptyMarginBandError(GpccopfError):
    code = "ccopf.empty_band"


class RankDeficientError(GpccopfError):
    code = "ccopf.rank_deficient"


# ─────────── validate / cli ───────────


class GapTooWideError(GpccopfError):
    code = "validate.gap_too_wide"
    exit_code = EXIT_CONFIG


class ConfigError(GpccopfError):
    code = "config.invalid"
    exit_code = EXIT_CONFIG


class MissingArtifactError(GpccopfError):
    code = "artifact.missing"
    exit_code = EXIT_MISSING_ARTIFACT
