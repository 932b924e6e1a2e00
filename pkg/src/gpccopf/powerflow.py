"""
gpccopf.powerflow
=================

AC power flow (polar Newton-Raphson), the lossless DC approximation and branch flows.

Every solver here is a pure function of ``(case, injections)``; many solves may run
concurrently against one shared :class:`~gpccopf.grid.GridCase`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla

from gpccopf.constants import PF_MAX_ITER, PF_TOL
from gpccopf.errors import (
    PowerFlowDivergedError,
    SingularJacobianError,
    SingularSusceptanceError,
    UnbalancedInjectionError,
)
from gpccopf.grid import GridCase, admittance_matrix, branch_admittances

__all__ = [
    "InjectionSet",
    "BranchFlows",
    "PfSolution",
    "reference_injections",
    "scheduled_power",
    "power_mismatch",
    "pf_jacobian",
    "bus_power_derivatives",
    "branch_flow_derivatives",
    "solve_ac_pf",
    "branch_flows",
    "gen_dispatch",
    "dc_bus_injections",
    "solve_dc_pf",
    "dc_branch_flows",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
ComplexArray = npt.NDArray[np.complex128]

_MAX_ANGLE_SPREAD = np.pi / 2
_DC_BALANCE_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class InjectionSet:
    """
    Active/reactive injections aligned with ``case.gens``, ``case.loads`` and
    ``case.res_units``. The slack entry of ``p_g`` is a schedule only; the solved value
    comes back in :func:`gen_dispatch`.
    """

    p_g: FloatArray
    p_l: FloatArray
    q_l: FloatArray
    p_rs: FloatArray
    q_rs: FloatArray

    @classmethod
    def from_active(
        cls, case: GridCase, p_g: FloatArray, p_l: FloatArray, p_rs: FloatArray
    ) -> InjectionSet:
        """Build a set with constant power factor reactive parts (q = gamma * p)."""
        gl = np.array([ld.gamma for ld in case.loads], np.float64)
        gr = np.array([r.gamma for r in case.res_units], np.float64)
        p_l = np.asarray(p_l, np.float64)
        p_rs = np.asarray(p_rs, np.float64)
        return cls(np.asarray(p_g, np.float64), p_l, gl * p_l, p_rs, gr * p_rs)


@dataclass(frozen=True, slots=True)
class BranchFlows:
    """From-end flows per branch (p.u.)."""

    p: FloatArray
    q: FloatArray

    @property
    def s(self) -> FloatArray:
        return np.hypot(self.p, self.q)


@dataclass(frozen=True, slots=True)
class PfSolution:
    v: FloatArray
    theta: FloatArray
    p: FloatArray
    q: FloatArray
    flows: BranchFlows
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> ComplexArray:
        return self.v * np.exp(1j * self.theta)


def reference_injections(case: GridCase) -> InjectionSet:
    """
    Case reference point: loads and renewables at p_ref, generators sharing the lossless
    net demand in proportion to the midpoint of their active band.
    """
    lo, hi = case.p_gen_bounds
    mid = 0.5 * (lo + hi)
    net = float(case.p_load_ref.sum() - case.p_res_ref.sum())
    p_g = mid * (net / float(mid.sum()))
    return InjectionSet.from_active(case, p_g, case.p_load_ref, case.p_res_ref)


def scheduled_power(case: GridCase, inj: InjectionSet) -> ComplexArray:
    """Net scheduled complex injection per bus (generator reactive output excluded)."""
    s = np.zeros(case.m, dtype=np.complex128)
    np.add.at(s, case.gen_buses, inj.p_g)
    np.add.at(s, case.load_buses, -(inj.p_l + 1j * inj.q_l))
    np.add.at(s, case.res_buses, inj.p_rs + 1j * inj.q_rs)
    return s


# ─────────── Newton-Raphson ───────────


def _unpack(case: GridCase, x: FloatArray, v0: FloatArray) -> tuple[FloatArray, FloatArray]:
    pvpq = np.r_[case.pv, case.pq]
    theta = np.zeros(case.m)
    v = v0.copy()
    theta[pvpq] = x[: pvpq.size]
    v[case.pq] = x[pvpq.size :]
    return v, theta


def _mismatch(
    Y: ComplexArray, V: ComplexArray, s_sched: ComplexArray, case: GridCase
) -> FloatArray:
    dS = V * np.conj(Y @ V) - s_sched
    pvpq = np.r_[case.pv, case.pq]
    return np.r_[dS[pvpq].real, dS[case.pq].imag]


def _dS_dV(Y: ComplexArray, V: ComplexArray) -> tuple[ComplexArray, ComplexArray]:
    """Partials of bus power injections w.r.t. voltage magnitude and angle."""
    Ibus = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(Ibus)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dVm = diagV @ np.conj(Y @ diagVnorm) + np.conj(diagI) @ diagVnorm
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    return dS_dVm, dS_dVa


def _jacobian(Y: ComplexArray, V: ComplexArray, case: GridCase) -> FloatArray:
    dS_dVm, dS_dVa = _dS_dV(Y, V)
    pvpq = np.r_[case.pv, case.pq]
    pq = case.pq
    J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
    J12 = dS_dVm[np.ix_(pvpq, pq)].real
    J21 = dS_dVa[np.ix_(pq, pvpq)].imag
    J22 = dS_dVm[np.ix_(pq, pq)].imag
    return np.block([[J11, J12], [J21, J22]])


def power_mismatch(case: GridCase, x: FloatArray, inj: InjectionSet) -> FloatArray:
    """
    Mismatch of the active equations at the state vector x = [theta(pv, pq), v(pq)];
    slack and PV magnitudes are held at their set-points.
    """
    v, theta = _unpack(case, np.asarray(x, np.float64), case.v_set)
    V = v * np.exp(1j * theta)
    return _mismatch(admittance_matrix(case), V, scheduled_power(case, inj), case)


def pf_jacobian(case: GridCase, x: FloatArray) -> FloatArray:
    """Analytic Jacobian of :func:`power_mismatch` (independent of the injections)."""
    v, theta = _unpack(case, np.asarray(x, np.float64), case.v_set)
    return _jacobian(admittance_matrix(case), v * np.exp(1j * theta), case)


def bus_power_derivatives(
    case: GridCase, v: FloatArray, theta: FloatArray
) -> tuple[ComplexArray, ComplexArray, ComplexArray]:
    """Bus injections S(V) with dS/dv and dS/dtheta (dense, all buses)."""
    Y = admittance_matrix(case)
    V = np.asarray(v, np.float64) * np.exp(1j * np.asarray(theta, np.float64))
    dS_dVm, dS_dVa = _dS_dV(Y, V)
    return V * np.conj(Y @ V), dS_dVm, dS_dVa


def solve_ac_pf(
    case: GridCase,
    inj: InjectionSet,
    *,
    tol: float = PF_TOL,
    max_iter: int = PF_MAX_ITER,
) -> PfSolution:
    """
    Full Newton-Raphson from a flat start (v = 1, theta = 0, generator buses at v_set).
    Converged when the infinity norm of the active mismatch is <= ``tol``.
    """
    Y = admittance_matrix(case)
    s_sched = scheduled_power(case, inj)
    pvpq = np.r_[case.pv, case.pq]
    pq = case.pq
    n_a = pvpq.size

    Vm = case.v_set.copy()
    Va = np.zeros(case.m)
    V = Vm * np.exp(1j * Va)
    f = _mismatch(Y, V, s_sched, case)
    err = float(np.max(np.abs(f), initial=0.0))

    it = 0
    while err > tol:
        if it >= max_iter:
            raise PowerFlowDivergedError.make(
                "power flow did not converge",
                iterations=it,
                max_mismatch=err,
                hint="check that the injections are feasible for this network",
            )
        it += 1
        J = _jacobian(Y, V, case)
        try:
            lu = sla.lu_factor(J, check_finite=True)
        except (ValueError, sla.LinAlgError) as e:
            raise SingularJacobianError.make("singular power-flow Jacobian", iteration=it) from e
        if np.min(np.abs(np.diag(lu[0])), initial=np.inf) < 1e-14 * max(1.0, np.abs(J).max()):
            raise SingularJacobianError.make("singular power-flow Jacobian", iteration=it)
        dx = sla.lu_solve(lu, f)
        Va[pvpq] -= dx[:n_a]
        Vm[pq] -= dx[n_a:]
        V = Vm * np.exp(1j * Va)
        f = _mismatch(Y, V, s_sched, case)
        err = float(np.max(np.abs(f), initial=0.0))
        logger.debug("newton iteration %d: max mismatch %.3e", it, err)
        if not np.isfinite(err):
            raise PowerFlowDivergedError.make(
                "power flow produced non-finite voltages", iterations=it, max_mismatch=err
            )

    spread = np.abs(Va[case.branch_from] - Va[case.branch_to])
    if spread.size and spread.max() > _MAX_ANGLE_SPREAD:
        raise PowerFlowDivergedError.make(
            "non-physical angle separation across a branch",
            iterations=it,
            max_mismatch=err,
            angle=float(spread.max()),
        )

    S = V * np.conj(Y @ V)
    return PfSolution(
        v=Vm,
        theta=Va,
        p=S.real.copy(),
        q=S.imag.copy(),
        flows=branch_flows(case, Vm, Va),
        iterations=it,
        max_mismatch=err,
    )


def branch_flows(case: GridCase, v: FloatArray, theta: FloatArray) -> BranchFlows:
    """
    Series-branch flows at the from-end:
    p_kj = g v_k^2 - v_k v_j (g cos t + b sin t), q_kj = -b v_k^2 - v_k v_j (g sin t - b cos t),
    with y = g + jb = 1 / (r + jx) and t = theta_k - theta_j.
    """
    y = branch_admittances(case)
    g, b = y.real, y.imag
    f, t = case.branch_from, case.branch_to
    vk, vj = v[f], v[t]
    # pi model without the charging half: line charging lives in the bus shunts, so
    # q_kj is zero when both ends share a state
    dt = theta[f] - theta[t]
    c, s = np.cos(dt), np.sin(dt)
    p = g * vk * vk - vk * vj * (g * c + b * s)
    q = -b * vk * vk - vk * vj * (g * s - b * c)
    return BranchFlows(p=p, q=q)


def branch_flow_derivatives(
    case: GridCase, v: FloatArray, theta: FloatArray
) -> tuple[BranchFlows, FloatArray, FloatArray]:
    """
    From-end flows with their partials w.r.t. (v_k, v_j, t) per branch, returned as
    (n, 3) arrays for p and q.
    """
    y = branch_admittances(case)
    g, b = y.real, y.imag
    f, t = case.branch_from, case.branch_to
    vk, vj = v[f], v[t]
    dt = theta[f] - theta[t]
    c, s = np.cos(dt), np.sin(dt)
    gc_bs = g * c + b * s
    gs_bc = g * s - b * c
    flows = BranchFlows(p=g * vk * vk - vk * vj * gc_bs, q=-b * vk * vk - vk * vj * gs_bc)
    dp = np.column_stack([2 * g * vk - vj * gc_bs, -vk * gc_bs, vk * vj * gs_bc])
    dq = np.column_stack([-2 * b * vk - vj * gs_bc, -vk * gs_bc, -vk * vj * gc_bs])
    return flows, dp, dq


def gen_dispatch(
    case: GridCase, sol: PfSolution, inj: InjectionSet
) -> tuple[FloatArray, FloatArray]:
    """
    Realised generator outputs (p_g, q_g). Generator output at a bus is the solved net
    injection plus local load minus local renewable output.
    """
    local = np.zeros(case.m, dtype=np.complex128)
    np.add.at(local, case.load_buses, inj.p_l + 1j * inj.q_l)
    np.add.at(local, case.res_buses, -(inj.p_rs + 1j * inj.q_rs))
    gb = case.gen_buses
    p_g = sol.p[gb] + local[gb].real
    q_g = sol.q[gb] + local[gb].imag
    return p_g, q_g


# ─────────── DC approximation ───────────


def dc_bus_injections(case: GridCase, inj: InjectionSet) -> FloatArray:
    """Per-bus active injections with the slack balancing the rest (lossless)."""
    p = scheduled_power(case, inj).real
    others = np.arange(case.m) != case.slack
    p[case.slack] = -float(np.sum(p[others]))
    return p


def _susceptance(case: GridCase) -> FloatArray:
    bx = np.array([1.0 / br.x for br in case.branches], np.float64)
    f, t = case.branch_from, case.branch_to
    B = np.zeros((case.m, case.m))
    np.add.at(B, (f, t), -bx)
    np.add.at(B, (t, f), -bx)
    np.add.at(B, (f, f), bx)
    np.add.at(B, (t, t), bx)
    return B


def solve_dc_pf(case: GridCase, p: FloatArray) -> FloatArray:
    """Voltage angles of the lossless model B theta = p with theta[slack] = 0."""
    p = np.asarray(p, np.float64)
    total = float(np.sum(p))
    if abs(total) > _DC_BALANCE_TOL:
        raise UnbalancedInjectionError.make("DC injections do not sum to zero", imbalance=total)
    keep = np.arange(case.m) != case.slack
    B = _susceptance(case)[np.ix_(keep, keep)]
    theta = np.zeros(case.m)
    if not keep.any():
        return theta
    lu, piv = sla.lu_factor(B)
    if np.min(np.abs(np.diag(lu))) < 1e-12 * np.abs(B).max():
        raise SingularSusceptanceError.make(
            "reduced susceptance matrix is singular", hint="the grid is probably disconnected"
        )
    theta[keep] = sla.lu_solve((lu, piv), p[keep])
    return theta


def dc_branch_flows(case: GridCase, theta: FloatArray) -> FloatArray:
    x = np.array([br.x for br in case.branches], np.float64)
    return (theta[case.branch_from] - theta[case.branch_to]) / x
