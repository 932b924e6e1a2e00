"""
gpccopf.ccopf
=============

Chance-constrained OPF: margins, linear surrogate, problem builders and the
deterministic AC-OPF baseline.
"""

from __future__ import annotations

from gpccopf.ccopf.acopf import AcOpfResult, economic_dispatch, solve_deterministic_acopf
from gpccopf.ccopf.margins import (
    Forecast,
    UncertaintySpec,
    generator_margins,
    input_covariance,
    quantile,
    reformulate_margins,
)
from gpccopf.ccopf.problem import (
    CcOpfProblem,
    CcOpfSolution,
    ModelKind,
    build_full_problem,
    build_hybrid_problem,
    output_quantiles,
    solve_cc_opf,
)
from gpccopf.ccopf.surrogate import LinearSurrogate, fit_linear_surrogate

__all__ = [
    "AcOpfResult",
    "economic_dispatch",
    "solve_deterministic_acopf",
    "Forecast",
    "UncertaintySpec",
    "generator_margins",
    "input_covariance",
    "quantile",
    "reformulate_margins",
    "CcOpfProblem",
    "CcOpfSolution",
    "ModelKind",
    "build_full_problem",
    "build_hybrid_problem",
    "output_quantiles",
    "solve_cc_opf",
    "LinearSurrogate",
    "fit_linear_surrogate",
]
