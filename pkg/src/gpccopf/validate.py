"""
gpccopf.validate
================

Monte-Carlo checks of an OPF dispatch against the exact AC power flow, regression
metrics for the surrogates, the data-gap experiment and the two deterministic baselines.

Fluctuations omega are independent Gaussians per load and renewable unit. Each sample
draws from its own substream keyed by ``(seed, sample)``, so tallies do not depend on
how samples are scheduled across workers.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import msgspec
import numpy as np
import numpy.typing as npt
import pandas as pd

from gpccopf.ccopf.acopf import solve_deterministic_acopf
from gpccopf.ccopf.margins import Forecast, UncertaintySpec
from gpccopf.ccopf.surrogate import fit_linear_surrogate
from gpccopf.constants import EPS_THREE_STD
from gpccopf.dataset import (
    DatasetLayout,
    SamplingParams,
    SampleSet,
    build_dataset,
    build_dc_dataset,
    injections_from_inputs,
    output_vector,
    residual_dataset,
    sample_injections,
    standardize,
)
from gpccopf.errors import (
    GapTooWideError,
    GpccopfError,
    NlpFailure,
    PowerFlowDivergedError,
    SchemaMismatchError,
)
from gpccopf.gp import TrainConfig, predict, train
from gpccopf.grid import GridCase
from gpccopf.nlp import SolverOptions
from gpccopf.powerflow import InjectionSet, branch_flows, gen_dispatch, solve_ac_pf
from gpccopf.reporting.warnings_bridge import ValidationWarning, warn_diagnostic
from gpccopf.utils.fs_utils import write_text_atomic
from gpccopf.utils.misc_utils import Workers, ordered_map

__all__ = [
    "RecoursePolicy",
    "AffinePolicy",
    "RegressionMetrics",
    "ValidationReport",
    "CorruptionReport",
    "BaselineReport",
    "FullRecourseReport",
    "draw_fluctuations",
    "apply_recourse",
    "tally_violations",
    "monte_carlo_validate",
    "regression_metrics",
    "corruption_experiment",
    "baseline_base_case",
    "baseline_full_recourse",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MAX_DIVERGENT_FRACTION = 0.05
MAX_GAP_FRACTION = 0.95
# limits are checked against the original bounds with this slack (p.u.)
_LIMIT_TOL = 1e-6


# ─────────── policies ───────────


class RecoursePolicy(Protocol):
    """Anything carrying set-points and participation factors (a CC-OPF solution, say)."""

    @property
    def p_g(self) -> FloatArray: ...

    @property
    def alpha(self) -> FloatArray: ...


@dataclass(frozen=True, slots=True)
class AffinePolicy:
    p_g: FloatArray
    alpha: FloatArray

    @classmethod
    def equal_share(cls, p_g: FloatArray) -> AffinePolicy:
        n = len(p_g)
        return cls(np.asarray(p_g, np.float64), np.full(n, 1.0 / n))


# ─────────── reports ───────────


class RegressionMetrics(msgspec.Struct, frozen=True):
    output_schema: list[str]
    mae: list[float]
    mse: list[float]
    rmse: list[float]
    msle: list[float | None]
    mae_avg: float
    mse_avg: float
    rmse_avg: float
    msle_avg: float | None
    # outputs whose MSLE was skipped because a value was negative
    msle_skipped: list[str] = msgspec.field(default_factory=list)


class ValidationReport(msgspec.Struct, frozen=True):
    n_samples: int
    n_divergent: int
    valid: bool
    seed: int
    constraint_names: list[str]
    upper_rates: list[float]
    lower_rates: list[float]
    infeasibility: float
    output_schema: list[str]
    lambda_upper: list[float]
    lambda_lower: list[float]
    eps_margin: float
    cost_mean: float | None
    cost_std: float | None
    metrics: RegressionMetrics | None = None

    def rate(self, name: str) -> float:
        """Combined (upper or lower) violation rate of one constraint."""
        i = self.constraint_names.index(name)
        return self.upper_rates[i] + self.lower_rates[i]


class CorruptionReport(msgspec.Struct, frozen=True):
    target_bus: int
    gap_mw: tuple[float, float]
    dropped_fraction: float
    n_train: int
    n_eval: int
    evaluated_in_gap: bool
    rmse_full: float
    rmse_hybrid: float


class BaselineReport(msgspec.Struct, frozen=True):
    name: str
    cost: float
    p_g: list[float]
    alpha: list[float]
    validation: ValidationReport


class FullRecourseReport(msgspec.Struct, frozen=True):
    n_samples: int
    n_failed: int
    eps: float
    cost_mean: float
    cost_quantile: float
    output_schema: list[str]
    output_upper: list[float]
    output_lower: list[float]


# ─────────── recourse ───────────


def _sample_rng(seed: int, sample: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, sample])))


def draw_fluctuations(uspec: UncertaintySpec, n: int, seed: int) -> FloatArray:
    """(n, n_loads + n_res) draws of omega; row i depends only on (seed, i)."""
    sigma = uspec.sigma
    out = np.empty((n, sigma.size))
    for i in range(n):
        out[i] = _sample_rng(seed, i).normal(0.0, 1.0, size=sigma.size) * sigma
    return out


def apply_recourse(
    case: GridCase,
    policy: RecoursePolicy,
    omega: FloatArray,
    *,
    forecast: Forecast | None = None,
) -> InjectionSet:
    """
    Injections after the affine response to ``omega`` (loads first, then renewables):
    p_g + alpha * Omega with Omega the net mismatch (load increases minus renewable
    increases). Reactive parts follow at constant power factor.
    """
    fc = forecast or Forecast.from_case(case)
    n_l = fc.p_l.size
    w = np.asarray(omega, np.float64)
    w_l, w_rs = w[:n_l], w[n_l:]
    total = float(w_l.sum() - w_rs.sum())
    p_g = np.asarray(policy.p_g, np.float64) + np.asarray(policy.alpha, np.float64) * total
    return InjectionSet.from_active(case, p_g, fc.p_l + w_l, fc.p_rs + w_rs)


# ─────────── violation tally ───────────


def tally_violations(
    Y: FloatArray, lo: FloatArray, hi: FloatArray, *, tol: float = _LIMIT_TOL
) -> tuple[FloatArray, FloatArray, float]:
    """Per-column upper and lower violation rates plus the union rate over all columns."""
    if Y.shape[0] == 0:
        z = np.zeros(Y.shape[1])
        return z, z.copy(), 0.0
    above = Y > hi + tol
    below = Y < lo - tol
    union = float(np.mean(np.any(above | below, axis=1)))
    return above.mean(axis=0), below.mean(axis=0), union


def _constraint_bounds(case: GridCase) -> tuple[list[str], FloatArray, FloatArray]:
    lay = DatasetLayout(case)
    lo, hi = lay.output_bounds()
    p_lo, p_hi = case.p_gen_bounds
    names = [*lay.output_schema, *(f"pg_{g.bus}" for g in case.gens)]
    return names, np.r_[lo, p_lo], np.r_[hi, p_hi]


def _evaluate(case: GridCase, inj: InjectionSet) -> tuple[FloatArray, float] | None:
    """Outputs and realised p_g stacked, plus the realised cost; None when PF fails."""
    try:
        pf = solve_ac_pf(case, inj)
    except GpccopfError as e:
        logger.debug("sample diverged: %s", e)
        return None
    p_g, _ = gen_dispatch(case, pf, inj)
    return np.r_[output_vector(case, pf, inj), p_g], case.generation_cost(p_g)


def monte_carlo_validate(
    case: GridCase,
    policy: RecoursePolicy,
    uspec: UncertaintySpec,
    n: int = 1000,
    seed: int = 0,
    *,
    forecast: Forecast | None = None,
    eps_margin: float = EPS_THREE_STD,
    workers: Workers = 1,
    outputs_path: Path | None = None,
) -> ValidationReport:
    """
    Apply the policy to ``n`` fluctuation draws, solve the AC power flow per draw and
    count violations of the original limits. Empirical margins are the (1 - eps) and
    eps sample quantiles measured from the AC solution at omega = 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fc = forecast or Forecast.from_case(case)
    lay = DatasetLayout(case)
    names, lo, hi = _constraint_bounds(case)

    base = _evaluate(case, apply_recourse(case, policy, np.zeros(uspec.sigma.size), forecast=fc))
    if base is None:
        raise PowerFlowDivergedError.make("AC power flow at the mean injections diverged")
    y_mean = base[0][: lay.n_y]

    omegas = draw_fluctuations(uspec, n, seed)
    results = ordered_map(
        lambda w: _evaluate(case, apply_recourse(case, policy, w, forecast=fc)),
        list(omegas),
        workers=workers,
    )
    ok = [r for r in results if r is not None]
    n_div = n - len(ok)
    Y = np.array([r[0] for r in ok]).reshape(len(ok), len(names))
    costs = np.array([r[1] for r in ok])
    upper, lower, union = tally_violations(Y, lo, hi)

    if ok:
        outs = Y[:, : lay.n_y]
        lam_up = np.quantile(outs, 1.0 - eps_margin, axis=0) - y_mean
        lam_lo = y_mean - np.quantile(outs, eps_margin, axis=0)
    else:
        lam_up = lam_lo = np.zeros(lay.n_y)

    valid = n_div <= MAX_DIVERGENT_FRACTION * n and bool(ok)
    if not valid:
        warn_diagnostic(
            ValidationWarning,
            "too many divergent Monte-Carlo samples; report flagged invalid",
            code="validate.divergent",
            divergent=n_div,
            total=n,
        )
    if outputs_path is not None:
        frame = pd.DataFrame(Y, columns=names)
        write_text_atomic(
            outputs_path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
        )
    logger.info(
        "MC validation: %d samples, %d divergent, infeasibility %.4f", n, n_div, union
    )
    return ValidationReport(
        n_samples=n,
        n_divergent=n_div,
        valid=valid,
        seed=seed,
        constraint_names=names,
        upper_rates=upper.tolist(),
        lower_rates=lower.tolist(),
        infeasibility=union,
        output_schema=list(lay.output_schema),
        lambda_upper=np.maximum(lam_up, 0.0).tolist(),
        lambda_lower=np.maximum(lam_lo, 0.0).tolist(),
        eps_margin=eps_margin,
        cost_mean=float(costs.mean()) if costs.size else None,
        cost_std=float(costs.std()) if costs.size else None,
    )


# ─────────── regression metrics ───────────


def regression_metrics(
    y_true: FloatArray,
    y_pred: FloatArray,
    *,
    names: Sequence[str] | None = None,
) -> RegressionMetrics:
    """
    MAE, MSE, RMSE and MSLE per output column, then their means over outputs.
    MSLE uses log(1 + y) and is skipped for columns holding a negative value.
    """
    t = np.asarray(y_true, np.float64)
    p = np.asarray(y_pred, np.float64)
    if t.shape != p.shape:
        raise SchemaMismatchError.make(
            "y_true and y_pred differ in shape", y_true=str(t.shape), y_pred=str(p.shape)
        )
    if t.ndim == 1:
        t, p = t[:, None], p[:, None]
    cols = list(names) if names is not None else [str(j) for j in range(t.shape[1])]
    if len(cols) != t.shape[1]:
        raise SchemaMismatchError.make("names do not match the column count", columns=t.shape[1])
    err = p - t
    mae = np.mean(np.abs(err), axis=0)
    mse = np.mean(err * err, axis=0)
    rmse = np.sqrt(mse)
    msle: list[float | None] = []
    skipped: list[str] = []
    for j, name in enumerate(cols):
        if np.any(t[:, j] < 0) or np.any(p[:, j] < 0):
            msle.append(None)
            skipped.append(name)
        else:
            d = np.log1p(p[:, j]) - np.log1p(t[:, j])
            msle.append(float(np.mean(d * d)))
    kept = [m for m in msle if m is not None]
    return RegressionMetrics(
        output_schema=cols,
        mae=mae.tolist(),
        mse=mse.tolist(),
        rmse=rmse.tolist(),
        msle=msle,
        mae_avg=float(mae.mean()),
        mse_avg=float(mse.mean()),
        rmse_avg=float(rmse.mean()),
        msle_avg=float(np.mean(kept)) if kept else None,
        msle_skipped=skipped,
    )


# ─────────── data-gap experiment ───────────


def _fit_and_score(
    case: GridCase, train_set: SampleSet, eval_set: SampleSet, cfg: TrainConfig
) -> tuple[float, float]:
    """RMSE (averaged over outputs) of the full and the hybrid surrogate."""
    scaled, _ = standardize(train_set)
    full = train(scaled, cfg)
    mu_full, _ = predict(full, eval_set.X)

    dc = build_dc_dataset(case, injections_from_inputs(case, train_set.X))
    lin = fit_linear_surrogate(dc)
    resid, _ = standardize(residual_dataset(train_set, lin))
    hybrid = train(resid, cfg)
    mu_res, _ = predict(hybrid, eval_set.X)
    mu_hyb = lin.predict(eval_set.X) + mu_res

    names = eval_set.output_schema
    return (
        regression_metrics(eval_set.Y, mu_full, names=names).rmse_avg,
        regression_metrics(eval_set.Y, mu_hyb, names=names).rmse_avg,
    )


def corruption_experiment(
    case: GridCase,
    params: SamplingParams,
    target_bus: int,
    gap_interval_mw: tuple[float, float],
    *,
    n_pool: int = 400,
    n_train: int = 75,
    n_eval: int = 25,
    cfg: TrainConfig | None = None,
    workers: Workers = 1,
) -> CorruptionReport:
    """
    Drop every sample whose load at ``target_bus`` falls inside the gap (MW), train the
    full and the hybrid surrogate on what is left and score both on samples inside the
    gap. A zero-width gap scores on ordinary held-out samples instead.
    """
    lo_mw, hi_mw = gap_interval_mw
    if lo_mw > hi_mw:
        raise ValueError("gap interval must satisfy lo <= hi")
    cfg = cfg or TrainConfig()
    lay = DatasetLayout(case)
    column = f"pl_{target_bus}"
    if column not in lay.input_schema:
        raise SchemaMismatchError.make("no load at the target bus", bus=target_bus)

    pool = build_dataset(case, sample_injections(case, params, n_pool), workers=workers)
    load_mw = pool.X[:, lay.input_schema.index(column)] * case.base_mva
    in_gap = (load_mw >= lo_mw) & (load_mw <= hi_mw)
    if lo_mw == hi_mw:
        in_gap[:] = False
    dropped = float(in_gap.mean()) if pool.m_s else 0.0
    if dropped > MAX_GAP_FRACTION:
        raise GapTooWideError.make(
            "gap removes nearly all samples",
            dropped_fraction=dropped,
            hint="narrow the gap interval",
        )

    kept = np.flatnonzero(~in_gap)
    train_idx = kept[:n_train]
    if in_gap.any():
        eval_idx = np.flatnonzero(in_gap)[:n_eval]
    else:
        eval_idx = kept[n_train : n_train + n_eval]
    if train_idx.size < 2 or eval_idx.size < 1:
        raise GapTooWideError.make(
            "not enough samples left for training and evaluation",
            train=int(train_idx.size),
            evaluate=int(eval_idx.size),
            hint="raise n_pool",
        )
    rmse_full, rmse_hybrid = _fit_and_score(
        case, pool.rows(train_idx), pool.rows(eval_idx), cfg
    )
    logger.info(
        "gap %.1f-%.1f MW at bus %d: dropped %.1f %%, rmse full %.3g, hybrid %.3g",
        lo_mw, hi_mw, target_bus, 100 * dropped, rmse_full, rmse_hybrid,
    )
    return CorruptionReport(
        target_bus=target_bus,
        gap_mw=(lo_mw, hi_mw),
        dropped_fraction=dropped,
        n_train=int(train_idx.size),
        n_eval=int(eval_idx.size),
        evaluated_in_gap=bool(in_gap.any()),
        rmse_full=rmse_full,
        rmse_hybrid=rmse_hybrid,
    )


# ─────────── baselines ───────────


def baseline_base_case(
    case: GridCase,
    uspec: UncertaintySpec,
    *,
    forecast: Forecast | None = None,
    n: int = 1000,
    seed: int = 0,
    eps_margin: float = EPS_THREE_STD,
    opts: SolverOptions | None = None,
    workers: Workers = 1,
) -> BaselineReport:
    """Deterministic AC-OPF at the forecast, then Monte-Carlo with equal participation."""
    fc = forecast or Forecast.from_case(case)
    mean_inj = apply_recourse(
        case, AffinePolicy.equal_share(np.zeros(len(case.gens))), np.zeros(uspec.sigma.size),
        forecast=fc,
    )
    det = solve_deterministic_acopf(case, mean_inj, opts)
    policy = AffinePolicy.equal_share(det.p_g)
    report = monte_carlo_validate(
        case, policy, uspec, n, seed, forecast=fc, eps_margin=eps_margin, workers=workers
    )
    return BaselineReport(
        name="base_case",
        cost=det.cost,
        p_g=policy.p_g.tolist(),
        alpha=policy.alpha.tolist(),
        validation=report,
    )


def baseline_full_recourse(
    case: GridCase,
    uspec: UncertaintySpec,
    *,
    forecast: Forecast | None = None,
    n: int = 100,
    seed: int = 0,
    eps: float = 0.025,
    opts: SolverOptions | None = None,
    workers: Workers = 1,
) -> FullRecourseReport:
    """
    Deterministic AC-OPF per fluctuation draw: the cost of perfect information. Reports
    the mean cost, its (1 - eps) quantile and the per-output (1 - eps) / eps quantiles.
    """
    fc = forecast or Forecast.from_case(case)
    lay = DatasetLayout(case)
    zero = AffinePolicy.equal_share(np.zeros(len(case.gens)))

    def one(w: FloatArray) -> tuple[FloatArray, float] | None:
        res = solve_deterministic_acopf(case, apply_recourse(case, zero, w, forecast=fc), opts)
        if not res.ok:
            return None
        flows = branch_flows(case, res.v, res.theta)
        return np.r_[res.v[case.pq], res.q_g, flows.s], res.cost

    results = ordered_map(one, list(draw_fluctuations(uspec, n, seed)), workers=workers)
    ok = [r for r in results if r is not None]
    if not ok:
        raise NlpFailure.make("every full-recourse AC-OPF failed", samples=n)
    Y = np.array([r[0] for r in ok])
    costs = np.array([r[1] for r in ok])
    logger.info("full recourse: %d/%d solves ok, mean cost %.6g", len(ok), n, costs.mean())
    return FullRecourseReport(
        n_samples=n,
        n_failed=n - len(ok),
        eps=eps,
        cost_mean=float(costs.mean()),
        cost_quantile=float(np.quantile(costs, 1.0 - eps)),
        output_schema=list(lay.output_schema),
        output_upper=np.quantile(Y, 1.0 - eps, axis=0).tolist(),
        output_lower=np.quantile(Y, eps, axis=0).tolist(),
    )
