"""
Deterministic AC optimal power flow and the lossless economic dispatch used to warm-start
every OPF in the package.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt

from gpccopf.errors import GpccopfError
from gpccopf.grid import GridCase
from gpccopf.nlp import NlpProblem, NlpSolution, SolverOptions, finite_difference_hessian, solve
from gpccopf.powerflow import (
    InjectionSet,
    branch_flow_derivatives,
    bus_power_derivatives,
    gen_dispatch,
    reference_injections,
    solve_ac_pf,
)
from gpccopf.utils.time_utils import Stopwatch

__all__ = ["economic_dispatch", "AcOpfResult", "solve_deterministic_acopf"]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

_BISECT_ITERS = 200


def economic_dispatch(case: GridCase, demand: float) -> FloatArray:
    """
    Lossless equal-incremental-cost dispatch: p_i = clip((lambda - c1_i) / (2 c2_i)),
    with lambda found by bisection so that sum(p) = demand. Demand outside the total
    generator band is clipped to it.
    """
    c2, c1, _ = case.cost_coeffs
    lo, hi = case.p_gen_bounds
    target = float(np.clip(demand, lo.sum(), hi.sum()))
    if target != demand:
        logger.warning("demand %.4g outside the generation band; clipped to %.4g", demand, target)

    def output(lam: float) -> FloatArray:
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(c2 > 0, (lam - c1) / (2.0 * np.where(c2 > 0, c2, 1.0)), 0.0)
        # linear-cost units jump from p_min to p_max at their marginal cost
        p = np.where(c2 > 0, p, np.where(lam > c1, hi, lo))
        return np.clip(p, lo, hi)

    slopes = 2.0 * c2 * np.maximum(np.abs(lo), np.abs(hi)) + np.abs(c1)
    lam_lo = -float(slopes.max()) - 1.0
    lam_hi = float(slopes.max()) + 1.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lam_lo + lam_hi)
        if output(mid).sum() < target:
            lam_lo = mid
        else:
            lam_hi = mid
    p = output(lam_hi)
    # spread any residual from a linear-cost jump over units with headroom
    gap = target - float(p.sum())
    if abs(gap) > 0:
        room = hi - p if gap > 0 else p - lo
        if room.sum() > 0:
            p = p + gap * room / room.sum()
    return np.clip(p, lo, hi)


@dataclass(frozen=True, slots=True)
class AcOpfResult:
    p_g: FloatArray
    q_g: FloatArray
    v: FloatArray
    theta: FloatArray
    cost: float
    solution: NlpSolution
    solve_time: float

    @property
    def ok(self) -> bool:
        return self.solution.ok


@dataclass(frozen=True)
class _Layout:
    """x = [theta (non-slack buses), v (PQ buses), p_g, q_g]."""

    case: GridCase

    @property
    def ns(self) -> npt.NDArray[np.intp]:
        return np.array([i for i in range(self.case.m) if i != self.case.slack], np.intp)

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        c = self.case
        return self.ns.size, c.pq.size, len(c.gens), len(c.gens)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def split(self, x: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        a, b, g, _ = self.sizes
        th = x[:a]
        vp = x[a : a + b]
        pg = x[a + b : a + b + g]
        qg = x[a + b + g :]
        return th, vp, pg, qg

    def state(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        th, vp, _, _ = self.split(x)
        theta = np.zeros(self.case.m)
        theta[self.ns] = th
        v = self.case.v_set.copy()
        v[self.case.pq] = vp
        return v, theta

    def pack(
        self, v: FloatArray, theta: FloatArray, p_g: FloatArray, q_g: FloatArray
    ) -> FloatArray:
        return np.concatenate([theta[self.ns], v[self.case.pq], p_g, q_g])


def _incidence(case: GridCase) -> FloatArray:
    C = np.zeros((case.m, len(case.gens)))
    C[case.gen_buses, np.arange(len(case.gens))] = 1.0
    return C


def _build(case: GridCase, inj: InjectionSet) -> tuple[NlpProblem, _Layout]:
    lay = _Layout(case)
    n_th, n_v, n_g, _ = lay.sizes
    c2, c1, c0 = case.cost_coeffs
    C = _incidence(case)
    demand = np.zeros(case.m, dtype=np.complex128)
    np.add.at(demand, case.load_buses, inj.p_l + 1j * inj.q_l)
    np.add.at(demand, case.res_buses, -(inj.p_rs + 1j * inj.q_rs))
    pq = case.pq
    v_lo = np.array([case.buses[int(i)].v_min for i in pq])
    v_hi = np.array([case.buses[int(i)].v_max for i in pq])
    p_lo, p_hi = case.p_gen_bounds
    q_lo = np.array([g.q_min for g in case.gens])
    q_hi = np.array([g.q_max for g in case.gens])
    s_max = np.array([br.s_max for br in case.branches])
    f_idx, t_idx = case.branch_from, case.branch_to
    # position of each bus in theta / v blocks (-1 when fixed)
    th_pos = np.full(case.m, -1)
    th_pos[lay.ns] = np.arange(n_th)
    v_pos = np.full(case.m, -1)
    v_pos[pq] = n_th + np.arange(n_v)
    pg0 = n_th + n_v
    qg0 = pg0 + n_g

    def objective(x: FloatArray) -> tuple[float, FloatArray]:
        pg = lay.split(x)[2]
        grad = np.zeros(x.size)
        grad[pg0:qg0] = 2.0 * c2 * pg + c1
        return float(np.sum(c2 * pg * pg + c1 * pg + c0)), grad

    def equalities(x: FloatArray) -> tuple[FloatArray, FloatArray]:
        v, theta = lay.state(x)
        _, _, pg, qg = lay.split(x)
        S, dVm, dVa = bus_power_derivatives(case, v, theta)
        mis = S - (C @ (pg + 1j * qg) - demand)
        J = np.zeros((2 * case.m, x.size))
        J[: case.m, :n_th] = dVa[:, lay.ns].real
        J[case.m :, :n_th] = dVa[:, lay.ns].imag
        J[: case.m, n_th:pg0] = dVm[:, pq].real
        J[case.m :, n_th:pg0] = dVm[:, pq].imag
        J[: case.m, pg0:qg0] = -C
        J[case.m :, qg0:] = -C
        return np.r_[mis.real, mis.imag], J

    def inequalities(x: FloatArray) -> tuple[FloatArray, FloatArray]:
        v, theta = lay.state(x)
        _, vp, pg, qg = lay.split(x)
        flows, dp, dq = branch_flow_derivatives(case, v, theta)
        n = x.size
        eye = np.eye(n)
        rows = [
            vp - v_lo,
            v_hi - vp,
            pg - p_lo,
            p_hi - pg,
            qg - q_lo,
            q_hi - qg,
            s_max**2 - flows.p**2 - flows.q**2,
        ]
        J_box = np.vstack(
            [
                eye[n_th:pg0],
                -eye[n_th:pg0],
                eye[pg0:qg0],
                -eye[pg0:qg0],
                eye[qg0:],
                -eye[qg0:],
            ]
        )
        J_flow = np.zeros((case.n, n))
        ds = -2.0 * (flows.p[:, None] * dp + flows.q[:, None] * dq)  # columns: v_k, v_j, t
        for k in range(case.n):
            fk, tk = int(f_idx[k]), int(t_idx[k])
            if v_pos[fk] >= 0:
                J_flow[k, v_pos[fk]] += ds[k, 0]
            if v_pos[tk] >= 0:
                J_flow[k, v_pos[tk]] += ds[k, 1]
            if th_pos[fk] >= 0:
                J_flow[k, th_pos[fk]] += ds[k, 2]
            if th_pos[tk] >= 0:
                J_flow[k, th_pos[tk]] -= ds[k, 2]
        return np.concatenate(rows), np.vstack([J_box, J_flow])

    base = NlpProblem(
        n=lay.n,
        objective=objective,
        eq_constraints=equalities,
        ineq_constraints=inequalities,
        n_eq=2 * case.m,
        n_in=2 * n_v + 4 * n_g + case.n,
    )
    return replace(base, hessian=finite_difference_hessian(base)), lay


def _warm_start(case: GridCase, inj: InjectionSet, lay: _Layout) -> FloatArray:
    net = float(inj.p_l.sum() - inj.p_rs.sum())
    p_g = economic_dispatch(case, net)
    lo, hi = case.p_gen_bounds
    q_lo = np.array([g.q_min for g in case.gens])
    q_hi = np.array([g.q_max for g in case.gens])
    q_g = 0.5 * (q_lo + q_hi)
    dispatch = InjectionSet(p_g, inj.p_l, inj.q_l, inj.p_rs, inj.q_rs)
    try:
        pf = solve_ac_pf(case, dispatch)
        v, theta = pf.v, pf.theta
        p_g, q_g = gen_dispatch(case, pf, dispatch)
    except GpccopfError:
        v, theta = case.v_set.copy(), np.zeros(case.m)
    x0 = lay.pack(v, theta, np.clip(p_g, lo, hi), np.clip(q_g, q_lo, q_hi))
    # keep the voltage iterate strictly inside its box
    pq = case.pq
    v_lo = np.array([case.buses[int(i)].v_min for i in pq])
    v_hi = np.array([case.buses[int(i)].v_max for i in pq])
    n_th = lay.sizes[0]
    x0[n_th : n_th + pq.size] = np.clip(x0[n_th : n_th + pq.size], v_lo + 1e-4, v_hi - 1e-4)
    return x0


def solve_deterministic_acopf(
    case: GridCase,
    inj_mean: InjectionSet | None = None,
    opts: SolverOptions | None = None,
) -> AcOpfResult:
    """
    min sum c(p_g) over (theta, v_pq, p_g, q_g) subject to the AC balance at every bus,
    voltage, generator and apparent-flow limits. Generator-bus voltages stay at v_set.
    """
    inj = inj_mean or reference_injections(case)
    problem, lay = _build(case, inj)
    x0 = _warm_start(case, inj, lay)
    watch = Stopwatch()
    sol = solve(problem, x0, opts)
    elapsed = watch.stop()
    v, theta = lay.state(sol.x)
    _, _, p_g, q_g = lay.split(sol.x)
    cost = case.generation_cost(p_g)
    logger.info("AC-OPF: %s, cost %.6g", sol.status, cost)
    return AcOpfResult(p_g.copy(), q_g.copy(), v, theta, cost, sol, elapsed)
