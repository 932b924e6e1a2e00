"""
Chance-constrained OPF assembly.

Decisions are z = (p_g, alpha) over every generator. The GP inputs at a decision are

    mu_x    = [p_g (non-slack), p_l forecast, p_rs forecast]
    Sigma_x = input_covariance(alpha (non-slack), Sigma_w)

and every output constraint y_min <= y <= y_max is replaced by its tightened mean form
y_min + r sigma <= mu <= y_max - r sigma, with (mu, sigma^2) from the chosen propagation.
Generator limits are tightened by r_pg alpha sqrt(tr Sigma_w). The objective is the
expected generation cost sum c2 (p_g^2 + tr(Sigma_w) alpha^2) + c1 p_g + c0.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from enum import StrEnum

import numpy as np
import numpy.typing as npt

from gpccopf.ccopf.acopf import economic_dispatch
from gpccopf.ccopf.margins import (
    Forecast,
    UncertaintySpec,
    generator_margins,
    input_covariance,
    quantile,
    reformulate_margins,
)
from gpccopf.ccopf.surrogate import LinearSurrogate
from gpccopf.constants import THREE_STD
from gpccopf.dataset import DatasetLayout
from gpccopf.gp import GpModel, PosteriorSet, SparseGpModel, posterior_of
from gpccopf.grid import GridCase
from gpccopf.nlp import (
    NlpProblem,
    NlpStatus,
    SolverOptions,
    finite_difference_hessian,
    solve,
)
from gpccopf.propagate import GaussianInput, Propagation, propagate, ta1_sensitivity
from gpccopf.utils.time_utils import Stopwatch

__all__ = [
    "ModelKind",
    "CcOpfProblem",
    "CcOpfSolution",
    "build_full_problem",
    "build_hybrid_problem",
    "solve_cc_opf",
    "output_quantiles",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
MomentsFn = Callable[[FloatArray], tuple[FloatArray, FloatArray]]
MomentsJacFn = Callable[[FloatArray], tuple[FloatArray, FloatArray, FloatArray, FloatArray]]

_VAR_FLOOR = 1e-14
_FD_STEP = 1e-6


class ModelKind(StrEnum):
    FULL = "full"
    HYBRID = "hybrid"


# ─────────── decisions -> input moments ───────────


@dataclass(frozen=True)
class _Decisions:
    case: GridCase
    layout: DatasetLayout
    forecast: Forecast
    uspec: UncertaintySpec

    @property
    def n_g(self) -> int:
        return len(self.case.gens)

    @property
    def n(self) -> int:
        return 2 * self.n_g

    def split(self, z: FloatArray) -> tuple[FloatArray, FloatArray]:
        return z[: self.n_g], z[self.n_g :]

    def input_moments(self, z: FloatArray) -> GaussianInput:
        p_g, alpha = self.split(z)
        ns = self.case.non_slack_gens
        mean = np.concatenate([p_g[ns], self.forecast.p_l, self.forecast.p_rs])
        cov = input_covariance(alpha[ns], self.uspec, signs=self.uspec.signs)
        return GaussianInput(mean, cov)

    def mean_jacobian(self) -> FloatArray:
        """d mu_x / d z (only the non-slack p_g entries move)."""
        E = np.zeros((self.layout.n_x, self.n))
        ns = self.case.non_slack_gens
        E[np.arange(ns.size), ns] = 1.0
        return E

    def var_alpha_jacobian(self, directions: FloatArray, alpha: FloatArray) -> FloatArray:
        """
        d/d alpha of g^T Sigma_x(alpha) g for each row g of ``directions`` (n_y, n_x),
        placed in the alpha columns of z.
        """
        lay = self.layout
        ns = self.case.non_slack_gens
        Gp = directions[:, lay.pg]
        Gw = directions[:, lay.pl.start : lay.prs.stop]
        v = self.uspec.signs * self.uspec.sigma**2
        t1 = Gp @ alpha[ns]
        t2 = Gw @ v
        out = np.zeros((directions.shape[0], self.n))
        out[:, self.n_g + ns] = 2.0 * Gp * (self.uspec.trace * t1 + t2)[:, None]
        return out


# ─────────── moment engines ───────────


def _ta1_engine(post: PosteriorSet, dec: _Decisions, lin: LinearSurrogate | None) -> MomentsJacFn:
    E = dec.mean_jacobian()

    def fn(z: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        gin = dec.input_moments(z)
        sens = ta1_sensitivity(post, gin)
        mean, var = sens.out.mean.copy(), sens.out.var.copy()
        J_mean = sens.grad_mean @ E
        J_var = sens.grad_var @ E + dec.var_alpha_jacobian(sens.grad_mean, dec.split(z)[1])
        if lin is not None:
            mean += lin.predict(gin.mean)
            var += lin.variance(gin.cov)
            J_mean += lin.A @ E
            J_var += dec.var_alpha_jacobian(lin.A, dec.split(z)[1])
        return mean, var, J_mean, J_var

    return fn


def _fd_engine(moments: MomentsFn, n: int) -> MomentsJacFn:
    def fn(z: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        mean, var = moments(z)
        J_mean = np.empty((mean.size, n))
        J_var = np.empty((var.size, n))
        for i in range(n):
            h = _FD_STEP * max(1.0, abs(float(z[i])))
            e = np.zeros(n)
            e[i] = h
            mp, vp = moments(z + e)
            mm, vm = moments(z - e)
            J_mean[:, i] = (mp - mm) / (2.0 * h)
            J_var[:, i] = (vp - vm) / (2.0 * h)
        return mean, var, J_mean, J_var

    return fn


class _Memo:
    """Last-point cache: the solver asks for objective and constraints at the same z."""

    def __init__(self, fn: MomentsJacFn) -> None:
        self._fn = fn
        self._key: bytes | None = None
        self._val: tuple[FloatArray, FloatArray, FloatArray, FloatArray] | None = None

    def __call__(self, z: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        key = np.asarray(z, np.float64).tobytes()
        if key != self._key or self._val is None:
            self._val = self._fn(z)
            self._key = key
        return self._val


# ─────────── problem ───────────


@dataclass(frozen=True)
class CcOpfProblem:
    """An :class:`NlpProblem` plus what is needed to read its solution back."""

    case: GridCase
    nlp: NlpProblem
    kind: ModelKind
    propagation: Propagation
    forecast: Forecast
    uspec: UncertaintySpec
    layout: DatasetLayout
    moments: MomentsFn
    r_out: FloatArray
    r_pg: float
    x0: FloatArray

    @property
    def n_g(self) -> int:
        return len(self.case.gens)

    def objective(self, z: FloatArray) -> float:
        return float(self.nlp.objective(z)[0])


def output_quantiles(layout: DatasetLayout, uspec: UncertaintySpec) -> FloatArray:
    """r per output: eps_v for voltages, eps_q for reactive outputs, eps_s for flows."""
    r = np.empty(layout.n_y)
    r[layout.v] = quantile(uspec.eps_v)
    r[layout.qg] = quantile(uspec.eps_q)
    r[layout.s] = quantile(uspec.eps_s)
    return r


def _warm_start(case: GridCase, forecast: Forecast) -> FloatArray:
    n_g = len(case.gens)
    p_g = economic_dispatch(case, forecast.net_demand)
    return np.concatenate([p_g, np.full(n_g, 1.0 / n_g)])


def _assemble(
    dec: _Decisions,
    engine: MomentsJacFn,
    moments: MomentsFn,
    kind: ModelKind,
    propagation: Propagation,
    *,
    exact_hessian: bool,
) -> CcOpfProblem:
    case, lay, uspec = dec.case, dec.layout, dec.uspec
    n_g, n = dec.n_g, dec.n
    c2, c1, c0 = case.cost_coeffs
    T = uspec.trace
    sq_t = math.sqrt(T)
    r_out = output_quantiles(lay, uspec)
    r_pg = quantile(uspec.eps_pg)
    y_lo, y_hi = lay.output_bounds()
    p_lo, p_hi = case.p_gen_bounds
    net = dec.forecast.net_demand
    memo = _Memo(engine)

    def objective(z: FloatArray) -> tuple[float, FloatArray]:
        p, a = dec.split(z)
        f = float(np.sum(c2 * (p * p + T * a * a) + c1 * p + c0))
        return f, np.concatenate([2.0 * c2 * p + c1, 2.0 * c2 * T * a])

    def equalities(z: FloatArray) -> tuple[FloatArray, FloatArray]:
        p, a = dec.split(z)
        J = np.zeros((2, n))
        J[0, n_g:] = 1.0
        J[1, :n_g] = 1.0
        return np.array([a.sum() - 1.0, p.sum() - net]), J

    def inequalities(z: FloatArray) -> tuple[FloatArray, FloatArray]:
        p, a = dec.split(z)
        mean, var, J_mean, J_var = memo(z)
        std = np.sqrt(np.maximum(var, _VAR_FLOOR))
        dstd = J_var / (2.0 * std)[:, None]
        margin = r_out * std
        dmargin = r_out[:, None] * dstd
        g_margin = r_pg * sq_t * a
        eye = np.eye(n)
        P, A = eye[:n_g], eye[n_g:]
        values = np.concatenate(
            [
                y_hi - mean - margin,
                mean - margin - y_lo,
                p_hi - p - g_margin,
                p - g_margin - p_lo,
                a,
            ]
        )
        J = np.vstack(
            [
                -J_mean - dmargin,
                J_mean - dmargin,
                -P - r_pg * sq_t * A,
                P - r_pg * sq_t * A,
                A,
            ]
        )
        return values, J

    base = NlpProblem(
        n=n,
        objective=objective,
        eq_constraints=equalities,
        ineq_constraints=inequalities,
        n_eq=2,
        n_in=2 * lay.n_y + 3 * n_g,
    )
    nlp = replace(base, hessian=finite_difference_hessian(base)) if exact_hessian else base
    return CcOpfProblem(
        case=case,
        nlp=nlp,
        kind=kind,
        propagation=propagation,
        forecast=dec.forecast,
        uspec=uspec,
        layout=lay,
        moments=moments,
        r_out=r_out,
        r_pg=r_pg,
        x0=_warm_start(case, dec.forecast),
    )


def build_full_problem(
    case: GridCase,
    model: GpModel | SparseGpModel | PosteriorSet,
    forecast: Forecast,
    uspec: UncertaintySpec,
    propagation: Propagation | str = Propagation.TA1,
) -> CcOpfProblem:
    lay = DatasetLayout(case)
    post = posterior_of(model)
    lay.check(post.input_schema, post.output_schema)
    method = Propagation(propagation)
    dec = _Decisions(case, lay, forecast, uspec)

    def moments(z: FloatArray) -> tuple[FloatArray, FloatArray]:
        out = propagate(model, dec.input_moments(z), method)
        return out.mean, out.var

    if method is Propagation.TA1:
        engine = _ta1_engine(post, dec, None)
    else:
        engine = _fd_engine(moments, dec.n)
    return _assemble(
        dec, engine, moments, ModelKind.FULL, method, exact_hessian=method is Propagation.TA1
    )


def build_hybrid_problem(
    case: GridCase,
    lin: LinearSurrogate,
    resid_model: GpModel | SparseGpModel | PosteriorSet,
    forecast: Forecast,
    uspec: UncertaintySpec,
) -> CcOpfProblem:
    """Constraint mean = A mu_x + b + GP mean; variance = diag(A Sigma_x A^T) + TA1 GP variance."""
    lay = DatasetLayout(case)
    post = posterior_of(resid_model)
    lay.check(lin.input_schema, lin.output_schema)
    lay.check(post.input_schema, post.output_schema)
    dec = _Decisions(case, lay, forecast, uspec)
    engine = _ta1_engine(post, dec, lin)

    def moments(z: FloatArray) -> tuple[FloatArray, FloatArray]:
        mean, var, _, _ = engine(z)
        return mean, var

    return _assemble(dec, engine, moments, ModelKind.HYBRID, Propagation.TA1, exact_hessian=True)


# ─────────── solution ───────────


@dataclass(frozen=True, slots=True)
class CcOpfSolution:
    p_g: FloatArray
    alpha: FloatArray
    mu: FloatArray
    sigma2: FloatArray
    lambda_out: FloatArray
    lambda_pg: FloatArray
    lambda_out_3std: FloatArray
    lambda_pg_3std: FloatArray
    cost: float
    status: NlpStatus
    solve_time: float
    iterations: int = 0
    kkt_residual: float = float("nan")
    output_schema: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is NlpStatus.OPTIMAL


def solve_cc_opf(
    problem: CcOpfProblem,
    x0: FloatArray | None = None,
    opts: SolverOptions | None = None,
) -> CcOpfSolution:
    """
    Solve from ``x0`` (default: economic dispatch at the forecast, uniform alpha).
    A non-optimal solve is returned with its status; callers decide whether to raise.
    """
    z0 = problem.x0 if x0 is None else np.asarray(x0, np.float64)
    watch = Stopwatch()
    sol = solve(problem.nlp, z0, opts)
    elapsed = watch.stop()
    z = sol.x
    p_g, alpha = z[: problem.n_g].copy(), z[problem.n_g :].copy()
    mu, var = problem.moments(z)
    var = np.maximum(var, 0.0)
    bounds = problem.layout.output_bounds()
    if sol.ok:
        reformulate_margins(
            mu, var, bounds, problem.r_out, names=problem.layout.output_schema
        )
    cost = problem.objective(z)
    logger.info(
        "CC-OPF (%s, %s): %s, cost %.6g, %.3f s",
        problem.kind, problem.propagation, sol.status, cost, elapsed,
    )
    return CcOpfSolution(
        p_g=p_g,
        alpha=alpha,
        mu=mu,
        sigma2=var,
        lambda_out=problem.r_out * np.sqrt(var),
        lambda_pg=generator_margins(alpha, problem.uspec, problem.r_pg),
        lambda_out_3std=THREE_STD * np.sqrt(var),
        lambda_pg_3std=generator_margins(alpha, problem.uspec, THREE_STD),
        cost=cost,
        status=sol.status,
        solve_time=elapsed,
        iterations=sol.iterations,
        kkt_residual=sol.kkt_residual,
        output_schema=problem.layout.output_schema,
    )
