from __future__ import annotations

import numpy as np
import pytest

from gpccopf.ccopf import economic_dispatch, solve_deterministic_acopf
from gpccopf.errors import NlpFailure
from gpccopf.nlp import SolverOptions
from gpccopf.powerflow import InjectionSet, gen_dispatch, reference_injections, solve_ac_pf
from tests.utils import three_bus, two_bus


def test_dispatch_equalizes_marginal_costs() -> None:
    case = three_bus()
    p = economic_dispatch(case, 0.6)
    c2, c1, _ = case.cost_coeffs
    assert p.sum() == pytest.approx(0.6, abs=1e-10)
    np.testing.assert_allclose(p, [0.95 / 3, 0.85 / 3], atol=1e-9)
    marginal = 2 * c2 * p + c1
    assert marginal[0] == pytest.approx(marginal[1], abs=1e-8)


def test_dispatch_single_generator() -> None:
    np.testing.assert_allclose(economic_dispatch(two_bus(), 0.1), [0.1])


def test_dispatch_clips_to_generation_band() -> None:
    case = three_bus()
    np.testing.assert_allclose(economic_dispatch(case, 10.0), [2.0, 2.0])
    np.testing.assert_allclose(economic_dispatch(case, -1.0), [0.0, 0.0])


def test_deterministic_opf_three_bus() -> None:
    case = three_bus()
    inj = reference_injections(case)
    result = solve_deterministic_acopf(case, inj, SolverOptions(tol=1e-7))
    assert result.ok
    assert result.solve_time >= 0

    p_lo, p_hi = case.p_gen_bounds
    assert np.all(result.p_g >= p_lo - 1e-6)
    assert np.all(result.p_g <= p_hi + 1e-6)
    assert np.all((result.v >= 0.9 - 1e-6) & (result.v <= 1.1 + 1e-6))
    np.testing.assert_allclose(result.v[case.gen_buses], case.v_set[case.gen_buses])

    net = float(inj.p_l.sum() - inj.p_rs.sum())
    # resistive branches: generation covers demand plus losses
    assert result.p_g.sum() >= net - 1e-6
    lossless = case.generation_cost(economic_dispatch(case, net))
    assert result.cost >= lossless - 1e-6
    assert result.cost == pytest.approx(case.generation_cost(result.p_g))


def test_opf_point_is_a_power_flow_solution() -> None:
    case = three_bus()
    inj = reference_injections(case)
    result = solve_deterministic_acopf(case, inj, SolverOptions(tol=1e-8))
    dispatch = InjectionSet(result.p_g, inj.p_l, inj.q_l, inj.p_rs, inj.q_rs)
    pf = solve_ac_pf(case, dispatch)
    np.testing.assert_allclose(pf.v, result.v, atol=1e-5)
    np.testing.assert_allclose(pf.theta, result.theta, atol=1e-5)
    _, q_g = gen_dispatch(case, pf, dispatch)
    np.testing.assert_allclose(q_g, result.q_g, atol=1e-5)


def test_failed_opf_raises_when_asked() -> None:
    case = three_bus()
    with pytest.raises(NlpFailure):
        solve_deterministic_acopf(
            case, reference_injections(case), SolverOptions(max_iter=1, raise_on_failure=True)
        )
