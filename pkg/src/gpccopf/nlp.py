"""
gpccopf.nlp
===========

Primal-dual interior-point solver for smooth problems

    min f(x)  s.t.  c_eq(x) = 0,  c_in(x) >= 0

Inequalities get slacks s > 0 with a log barrier, and the Lagrangian is
L = f - r^T c_eq - q^T (c_in - s). Each iteration takes one Newton step on the
perturbed KKT system

    grad f - J_eq^T r - J_in^T q = 0
    S q - psi e                  = 0
    c_eq                         = 0
    c_in - s                     = 0

after condensing the slack and inequality-multiplier blocks:

    [ W + J_in^T S^-1 Q J_in   J_eq^T ] [  dx ]
    [ J_eq                     0      ] [ -dr ]

The condensed matrix is factorized with a symmetric indefinite (Bunch-Kaufman) LDL^T.
When its inertia is not (n, n_eq, 0), W is regularized with delta I. Steps keep
s and q strictly positive (fraction to the boundary). They are shortened by Armijo
backtracking on an l1 barrier merit function. The barrier parameter shrinks
monotonically once the current barrier problem is solved to sqrt(psi).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg as sla

from gpccopf.constants import NLP_TOL
from gpccopf.errors import GpccopfError, NlpFailure
from gpccopf.utils.fs_utils import write_text_atomic

__all__ = [
    "NlpStatus",
    "NlpProblem",
    "SolverOptions",
    "KktResidual",
    "NlpSolution",
    "solve",
    "kkt_residual",
    "finite_difference_hessian",
    "ITERATION_COLUMNS",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
ObjectiveFn = Callable[[FloatArray], tuple[float, FloatArray]]
ConstraintFn = Callable[[FloatArray], tuple[FloatArray, FloatArray]]
HessianFn = Callable[[FloatArray, FloatArray, FloatArray], FloatArray]

ITERATION_COLUMNS = (
    "iter",
    "f",
    "psi",
    "stationarity",
    "complementarity",
    "equality",
    "inequality",
    "alpha_primal",
    "alpha_dual",
)

_TAU = 0.995
_ARMIJO = 1e-4
_MAX_BACKTRACK = 40
_DELTA_START = 1e-8
_DELTA_MAX = 1e10
_STALL_LIMIT = 8

# callback failures that count as a rejected trial point
_EVAL_ERRORS = (ArithmeticError, ValueError, np.linalg.LinAlgError, GpccopfError)


class NlpStatus(StrEnum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    NUMERIC_FAILURE = "numeric_failure"


def _no_constraints(n: int) -> ConstraintFn:
    def fn(x: FloatArray) -> tuple[FloatArray, FloatArray]:
        return np.zeros(0), np.zeros((0, n))

    return fn


@dataclass(frozen=True, slots=True)
class NlpProblem:
    """
    Callbacks return values together with first derivatives; constraint Jacobians are
    (count, n). ``hessian(x, r, q)`` is the Hessian of the Lagrangian above. Without
    it the solver falls back to damped BFGS.
    """

    n: int
    objective: ObjectiveFn
    eq_constraints: ConstraintFn | None = None
    ineq_constraints: ConstraintFn | None = None
    hessian: HessianFn | None = None
    n_eq: int = 0
    n_in: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("problem needs at least one decision variable")

    def eq(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        return (self.eq_constraints or _no_constraints(self.n))(x)

    def ineq(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        return (self.ineq_constraints or _no_constraints(self.n))(x)


@dataclass(frozen=True, slots=True)
class SolverOptions:
    tol: float = NLP_TOL
    max_iter: int = 200
    psi0: float = 0.1
    psi_shrink: float = 0.2
    raise_on_failure: bool = False
    log_path: Path | None = None

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not 0 < self.psi_shrink < 1:
            raise ValueError("psi_shrink must lie in (0, 1)")
        if not self.psi0 > 0 or self.max_iter < 1:
            raise ValueError("psi0 must be > 0 and max_iter >= 1")


@dataclass(frozen=True, slots=True)
class KktResidual:
    """Infinity norms of the four perturbed-KKT blocks."""

    stationarity: float
    complementarity: float
    equality: float
    inequality: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.complementarity, self.equality, self.inequality)

    @property
    def primal(self) -> float:
        return max(self.equality, self.inequality)


@dataclass(frozen=True, slots=True)
class NlpSolution:
    x: FloatArray
    r: FloatArray
    q: FloatArray
    s: FloatArray
    status: NlpStatus
    kkt_residual: float
    iterations: int
    f: float
    psi: float
    barrier_history: tuple[float, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.status is NlpStatus.OPTIMAL


# ─────────── residuals ───────────


def _inf(v: FloatArray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _lagrangian_grad(
    g: FloatArray, J_eq: FloatArray, J_in: FloatArray, r: FloatArray, q: FloatArray
) -> FloatArray:
    return g - J_eq.T @ r - J_in.T @ q


def kkt_residual(
    problem: NlpProblem,
    x: FloatArray,
    s: FloatArray,
    r: FloatArray,
    q: FloatArray,
    psi: float,
) -> KktResidual:
    _, g = problem.objective(x)
    c_eq, J_eq = problem.eq(x)
    c_in, J_in = problem.ineq(x)
    return KktResidual(
        stationarity=_inf(_lagrangian_grad(g, J_eq, J_in, r, q)),
        complementarity=_inf(s * q - psi),
        equality=_inf(c_eq),
        inequality=_inf(c_in - s),
    )


# ─────────── Hessians ───────────


def finite_difference_hessian(problem: NlpProblem, *, step: float = 1e-6) -> HessianFn:
    """Hessian of the Lagrangian by central differences of its gradient."""

    def grad_l(x: FloatArray, r: FloatArray, q: FloatArray) -> FloatArray:
        _, g = problem.objective(x)
        _, J_eq = problem.eq(x)
        _, J_in = problem.ineq(x)
        return _lagrangian_grad(g, J_eq, J_in, r, q)

    def hess(x: FloatArray, r: FloatArray, q: FloatArray) -> FloatArray:
        n = x.size
        H = np.empty((n, n))
        for i in range(n):
            h = step * max(1.0, abs(float(x[i])))
            e = np.zeros(n)
            e[i] = h
            H[:, i] = (grad_l(x + e, r, q) - grad_l(x - e, r, q)) / (2.0 * h)
        return 0.5 * (H + H.T)

    return hess


def _bfgs_update(B: FloatArray, dx: FloatArray, dg: FloatArray) -> FloatArray:
    """Powell-damped BFGS update; keeps B positive definite."""
    Bs = B @ dx
    sBs = float(dx @ Bs)
    if sBs <= 1e-16:
        return B
    sy = float(dx @ dg)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        dg = theta * dg + (1.0 - theta) * Bs
        sy = float(dx @ dg)
    return B - np.outer(Bs, Bs) / sBs + np.outer(dg, dg) / sy


# ─────────── linear algebra ───────────


def _inertia(d: FloatArray) -> tuple[int, int, int]:
    ev = np.linalg.eigvalsh(d)
    thresh = 1e-13 * max(1.0, float(np.max(np.abs(ev)))) if ev.size else 0.0
    return int(np.sum(ev > thresh)), int(np.sum(ev < -thresh)), int(np.sum(np.abs(ev) <= thresh))


def _ldl_solve(
    lu: FloatArray, d: FloatArray, perm: npt.NDArray[np.intp], b: FloatArray
) -> FloatArray:
    Lt = lu[perm]
    z = sla.solve_triangular(Lt, b[perm], lower=True, unit_diagonal=True)
    z = sla.solve(d, z, assume_a="sym")
    z = sla.solve_triangular(Lt.T, z, lower=False, unit_diagonal=True)
    out = np.empty_like(z)
    out[perm] = z
    return out


def _solve_condensed(
    H: FloatArray, J_eq: FloatArray, rhs: FloatArray
) -> tuple[FloatArray, float] | None:
    """Solve the condensed KKT system with inertia correction; None if it never settles."""
    n, m = H.shape[0], J_eq.shape[0]
    delta = 0.0
    delta_c = 0.0
    while delta <= _DELTA_MAX:
        K = np.block([[H + delta * np.eye(n), J_eq.T], [J_eq, -delta_c * np.eye(m)]])
        if not np.all(np.isfinite(K)):
            return None
        lu, d, perm = sla.ldl(K, lower=True)
        pos, neg, zero = _inertia(d)
        if pos == n and neg == m and zero == 0:
            sol = _ldl_solve(lu, d, perm, rhs)
            if np.all(np.isfinite(sol)):
                return sol, delta
        if zero and m:
            delta_c = max(delta_c, 1e-8)
        delta = _DELTA_START if delta == 0.0 else 10.0 * delta
    return None


# ─────────── solver ───────────


@dataclass(slots=True)
class _Iterate:
    x: FloatArray
    s: FloatArray
    r: FloatArray
    q: FloatArray
    f: float
    g: FloatArray
    c_eq: FloatArray
    J_eq: FloatArray
    c_in: FloatArray
    J_in: FloatArray


_Evaluation = tuple[float, FloatArray, FloatArray, FloatArray, FloatArray, FloatArray]


def _evaluate(problem: NlpProblem, x: FloatArray) -> _Evaluation:
    f, g = problem.objective(x)
    c_eq, J_eq = problem.eq(x)
    c_in, J_in = problem.ineq(x)
    return (
        float(f),
        np.asarray(g, np.float64),
        np.asarray(c_eq, np.float64).reshape(-1),
        np.asarray(J_eq, np.float64).reshape(-1, x.size),
        np.asarray(c_in, np.float64).reshape(-1),
        np.asarray(J_in, np.float64).reshape(-1, x.size),
    )


def _merit(
    f: float, s: FloatArray, c_eq: FloatArray, c_in: FloatArray, psi: float, nu: float
) -> float:
    if s.size and np.any(s <= 0):
        return math.inf
    barrier = float(np.sum(np.log(s))) if s.size else 0.0
    infeas = float(np.sum(np.abs(c_eq)) + np.sum(np.abs(c_in - s)))
    return f - psi * barrier + nu * infeas


def _max_step(v: FloatArray, dv: FloatArray, tau: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def _residual(it: _Iterate, psi: float) -> KktResidual:
    return KktResidual(
        stationarity=_inf(_lagrangian_grad(it.g, it.J_eq, it.J_in, it.r, it.q)),
        complementarity=_inf(it.s * it.q - psi),
        equality=_inf(it.c_eq),
        inequality=_inf(it.c_in - it.s),
    )


def _initial(problem: NlpProblem, x0: FloatArray, psi: float) -> _Iterate:
    f, g, c_eq, J_eq, c_in, J_in = _evaluate(problem, x0)
    s = np.maximum(c_in, 1e-2 * max(1.0, _inf(c_in)))
    q = psi / s
    r = np.zeros(c_eq.size)
    if c_eq.size:
        r = np.linalg.lstsq(J_eq.T, g - J_in.T @ q, rcond=None)[0]
    return _Iterate(x0.copy(), s, r, q, f, g, c_eq, J_eq, c_in, J_in)


def _write_log(path: Path, rows: list[dict[str, float]]) -> None:
    frame = pd.DataFrame(rows, columns=list(ITERATION_COLUMNS))
    write_text_atomic(path, frame.to_csv(index=False, float_format="%.10g", lineterminator="\n"))


def solve(
    problem: NlpProblem, x0: FloatArray, opts: SolverOptions | None = None
) -> NlpSolution:
    opts = opts or SolverOptions()
    x0 = np.asarray(x0, np.float64).copy()
    if x0.shape != (problem.n,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite vector of length {problem.n}")

    psi = opts.psi0
    psi_min = opts.tol / 10.0
    nu = 1.0
    it = _initial(problem, x0, psi)
    B = np.eye(problem.n)
    history: list[float] = [psi]
    rows: list[dict[str, float]] = []
    stalls = 0
    status = NlpStatus.MAX_ITER
    k = 0
    best, best_err = it, math.inf

    def finish(status: NlpStatus) -> NlpSolution:
        # failed solves report the iterate with the smallest unperturbed KKT error
        last = it if status is NlpStatus.OPTIMAL else best
        res = _residual(last, psi)
        sol = NlpSolution(
            x=last.x, r=last.r, q=last.q, s=last.s, status=status, kkt_residual=res.max,
            iterations=k, f=last.f, psi=psi, barrier_history=tuple(history),
        )
        if opts.log_path is not None:
            _write_log(opts.log_path, rows)
        log = logger.info if status is NlpStatus.OPTIMAL else logger.warning
        log("nlp: %s after %d iterations (f=%.6g, kkt=%.2e)", status, k, last.f, res.max)
        if opts.raise_on_failure and status is not NlpStatus.OPTIMAL:
            raise NlpFailure.make(
                f"interior-point solve ended with status {status}",
                status=str(status), iterations=k, kkt_residual=res.max,
            )
        return sol

    for k in range(opts.max_iter + 1):
        res0 = _residual(it, 0.0)
        if res0.max < best_err:
            best, best_err = it, res0.max
        if res0.max <= opts.tol and _residual(it, psi).max <= opts.tol:
            status = NlpStatus.OPTIMAL
            break
        if k == opts.max_iter:
            break

        # barrier update (Fiacco-McCormick); may fire more than once per iteration
        while psi > psi_min and _residual(it, psi).max <= math.sqrt(psi):
            psi = max(psi_min, opts.psi_shrink * psi)
            history.append(psi)

        if problem.hessian is not None:
            W = problem.hessian(it.x, it.r, it.q)
        else:
            W = B
        sig = it.q / it.s if it.s.size else np.zeros(0)
        r_d = _lagrangian_grad(it.g, it.J_eq, it.J_in, it.r, it.q)
        r_c = it.s * it.q - psi
        r_i = it.c_in - it.s
        H = W + it.J_in.T @ (sig[:, None] * it.J_in)
        rhs1 = -r_d - it.J_in.T @ (r_c / it.s + sig * r_i) if it.s.size else -r_d
        rhs = np.concatenate([rhs1, -it.c_eq])
        solved = _solve_condensed(H, it.J_eq, rhs)
        if solved is None:
            status = NlpStatus.NUMERIC_FAILURE
            break
        step, delta = solved
        dx = step[: problem.n]
        dr = -step[problem.n :]
        ds = it.J_in @ dx + r_i
        dq = -(r_c + it.q * ds) / it.s if it.s.size else np.zeros(0)

        tau = max(_TAU, 1.0 - psi)
        a_p = _max_step(it.s, ds, tau)
        a_d = _max_step(it.q, dq, tau)

        # merit penalty must dominate the multipliers
        nu = max(nu, 1.1 * max(_inf(it.r + dr), _inf(it.q + dq), 1.0))
        phi0 = _merit(it.f, it.s, it.c_eq, it.c_in, psi, nu)
        infeas0 = float(np.sum(np.abs(it.c_eq)) + np.sum(np.abs(r_i)))
        barrier_slope = float(np.sum(ds / it.s)) if it.s.size else 0.0
        dphi = float(it.g @ dx) - psi * barrier_slope - nu * infeas0

        alpha = a_p
        accepted = False
        for _ in range(_MAX_BACKTRACK):
            x_new = it.x + alpha * dx
            s_new = it.s + alpha * ds
            try:
                f_n, g_n, ce_n, Je_n, ci_n, Ji_n = _evaluate(problem, x_new)
            except _EVAL_ERRORS:
                alpha *= 0.5
                continue
            phi = _merit(f_n, s_new, ce_n, ci_n, psi, nu)
            if math.isfinite(phi) and phi <= phi0 + _ARMIJO * alpha * min(dphi, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            stalls += 1
            if stalls >= _STALL_LIMIT:
                status = (
                    NlpStatus.INFEASIBLE if res0.primal > opts.tol else NlpStatus.NUMERIC_FAILURE
                )
                break
            # take the short step anyway so the iterate keeps moving
            x_new = it.x + alpha * dx
            s_new = it.s + alpha * ds
            try:
                f_n, g_n, ce_n, Je_n, ci_n, Ji_n = _evaluate(problem, x_new)
            except _EVAL_ERRORS:
                status = NlpStatus.NUMERIC_FAILURE
                break
        else:
            stalls = 0

        r_new = it.r + alpha * dr
        q_new = it.q + a_d * dq
        if problem.hessian is None:
            gl_old = _lagrangian_grad(it.g, it.J_eq, it.J_in, r_new, q_new)
            gl_new = _lagrangian_grad(g_n, Je_n, Ji_n, r_new, q_new)
            B = _bfgs_update(B, x_new - it.x, gl_new - gl_old)

        it = _Iterate(x_new, s_new, r_new, q_new, f_n, g_n, ce_n, Je_n, ci_n, Ji_n)
        res = _residual(it, psi)
        rows.append(
            {
                "iter": float(k + 1),
                "f": it.f,
                "psi": psi,
                "stationarity": res.stationarity,
                "complementarity": res.complementarity,
                "equality": res.equality,
                "inequality": res.inequality,
                "alpha_primal": alpha,
                "alpha_dual": a_d,
            }
        )
        logger.debug(
            "nlp iter %3d f=%.8g psi=%.1e kkt=%.2e a_p=%.3f a_d=%.3f delta=%.1e",
            k + 1, it.f, psi, res.max, alpha, a_d, delta,
        )

    return finish(status)
