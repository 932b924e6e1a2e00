from __future__ import annotations

import numpy as np
import pytest

from gpccopf.ccopf import (
    CcOpfProblem,
    Forecast,
    LinearSurrogate,
    ModelKind,
    UncertaintySpec,
    build_full_problem,
    build_hybrid_problem,
    economic_dispatch,
    input_covariance,
    output_quantiles,
    quantile,
    solve_cc_opf,
)
from gpccopf.dataset import DatasetLayout, SampleSet, standardize
from gpccopf.errors import SchemaMismatchError
from gpccopf.gp import GpModel
from gpccopf.grid import GridCase
from gpccopf.nlp import SolverOptions
from gpccopf.propagate import GaussianInput, Propagation, em, ta1
from tests.utils import three_bus, toy_model, two_bus

H = 1e-6


def _synthetic_model(case: GridCase, *, seed: int = 0, m_s: int = 40) -> GpModel:
    """GP on smooth made-up outputs that sit well inside the case's limits."""
    lay = DatasetLayout(case)
    forecast = Forecast.from_case(case)
    ns = case.non_slack_gens
    centre = np.concatenate(
        [economic_dispatch(case, forecast.net_demand)[ns], forecast.p_l, forecast.p_rs]
    )
    rng = np.random.default_rng(seed)
    X = centre + rng.uniform(-0.3, 0.3, size=(m_s, lay.n_x))
    lo, hi = lay.output_bounds()
    W = rng.uniform(-0.1, 0.1, size=(lay.n_y, lay.n_x))
    Y = 0.5 * (lo + hi) + X @ W.T + 0.02 * np.sin(X.sum(axis=1))[:, None]
    scaled, _ = standardize(SampleSet(lay.input_schema, lay.output_schema, X, Y))
    return toy_model(scaled, ell2=4.0, sz2=1e-3)


def _setup(case: GridCase) -> tuple[Forecast, UncertaintySpec]:
    forecast = Forecast.from_case(case)
    return forecast, UncertaintySpec.from_fractions(forecast)


def _interior(problem: CcOpfProblem) -> np.ndarray:
    n_g = problem.n_g
    z = problem.x0.copy()
    z[:n_g] += np.linspace(-0.05, 0.05, n_g)
    z[n_g:] = np.linspace(1.0, 2.0, n_g) / np.linspace(1.0, 2.0, n_g).sum()
    return z


def _fd_jacobian(fn, z: np.ndarray) -> np.ndarray:  # type: ignore[no-untyped-def]
    cols = []
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = H
        cols.append((fn(z + e)[0] - fn(z - e)[0]) / (2 * H))
    return np.column_stack(cols)


# ─────────── assembly ───────────


def test_expected_cost_example() -> None:
    case = two_bus()
    forecast = Forecast.from_case(case)
    uspec = UncertaintySpec(np.array([0.2]), np.zeros(0))
    problem = build_full_problem(case, _synthetic_model(case), forecast, uspec)
    assert problem.objective(np.array([2.0, 0.5])) == pytest.approx(4.01)


def test_constraint_counts() -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    problem = build_full_problem(case, _synthetic_model(case), forecast, uspec)
    lay = DatasetLayout(case)
    n_g = len(case.gens)
    assert problem.kind is ModelKind.FULL
    assert problem.nlp.n == 2 * n_g
    assert problem.nlp.n_eq == 2
    assert problem.nlp.n_in == 2 * lay.n_y + 3 * n_g
    values, J = problem.nlp.ineq(_interior(problem))
    assert values.shape == (problem.nlp.n_in,)
    assert J.shape == (problem.nlp.n_in, 2 * n_g)


def test_output_quantiles_per_family() -> None:
    case = three_bus()
    forecast = Forecast.from_case(case)
    uspec = UncertaintySpec.from_fractions(forecast, eps_v=0.01, eps_q=0.05, eps_s=0.1)
    lay = DatasetLayout(case)
    r = output_quantiles(lay, uspec)
    np.testing.assert_allclose(r[lay.v], quantile(0.01))
    np.testing.assert_allclose(r[lay.qg], quantile(0.05))
    np.testing.assert_allclose(r[lay.s], quantile(0.1))


def test_balance_equalities() -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    problem = build_full_problem(case, _synthetic_model(case), forecast, uspec)
    z = np.array([0.3, 0.2, 0.25, 0.75])
    c_eq, _ = problem.nlp.eq(z)
    np.testing.assert_allclose(c_eq, [0.0, 0.5 - forecast.net_demand], atol=1e-12)


@pytest.mark.parametrize("hybrid", [False, True])
def test_derivatives_match_finite_differences(hybrid: bool) -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    model = _synthetic_model(case)
    if hybrid:
        lay = DatasetLayout(case)
        A = np.random.default_rng(1).uniform(-0.2, 0.2, size=(lay.n_y, lay.n_x))
        lin = LinearSurrogate(lay.input_schema, lay.output_schema, A, np.zeros(lay.n_y))
        problem = build_hybrid_problem(case, lin, model, forecast, uspec)
    else:
        problem = build_full_problem(case, model, forecast, uspec)
    z = _interior(problem)

    _, g = problem.nlp.objective(z)
    fd_g = _fd_jacobian(lambda w: (np.array([problem.nlp.objective(w)[0]]),), z)[0]
    np.testing.assert_allclose(g, fd_g, rtol=1e-6, atol=1e-8)

    _, J = problem.nlp.ineq(z)
    np.testing.assert_allclose(J, _fd_jacobian(problem.nlp.ineq, z), rtol=1e-4, atol=1e-6)

    _, J_eq = problem.nlp.eq(z)
    np.testing.assert_allclose(J_eq, _fd_jacobian(problem.nlp.eq, z), atol=1e-8)


def test_no_fluctuations_drop_recourse_margins() -> None:
    case = three_bus()
    forecast = Forecast.from_case(case)
    uspec = UncertaintySpec(np.zeros(1), np.zeros(1))
    model = _synthetic_model(case)
    problem = build_full_problem(case, model, forecast, uspec)
    z = _interior(problem)
    p = z[: problem.n_g]

    mean, var = problem.moments(z)
    x = np.concatenate([p[case.non_slack_gens], forecast.p_l, forecast.p_rs])
    out = ta1(model, GaussianInput.point(x))
    np.testing.assert_allclose(mean, out.mean, atol=1e-12)
    np.testing.assert_allclose(var, out.var, atol=1e-12)

    values, _ = problem.nlp.ineq(z)
    n_y = DatasetLayout(case).n_y
    _, p_hi = case.p_gen_bounds
    np.testing.assert_allclose(values[2 * n_y : 2 * n_y + problem.n_g], p_hi - p, atol=1e-12)
    assert problem.objective(z) == pytest.approx(case.generation_cost(p))


def test_em_problem_uses_exact_moments() -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    model = _synthetic_model(case)
    problem = build_full_problem(case, model, forecast, uspec, Propagation.EM)
    assert problem.propagation is Propagation.EM
    z = _interior(problem)
    p, alpha = z[: problem.n_g], z[problem.n_g :]
    ns = case.non_slack_gens
    gin = GaussianInput(
        np.concatenate([p[ns], forecast.p_l, forecast.p_rs]),
        input_covariance(alpha[ns], uspec, signs=uspec.signs),
    )
    expected = em(model, gin)
    mean, var = problem.moments(z)
    np.testing.assert_allclose(mean, expected.mean, atol=1e-12)
    np.testing.assert_allclose(var, expected.var, atol=1e-12)


def test_hybrid_moments_add_linear_part() -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    lay = DatasetLayout(case)
    rng = np.random.default_rng(2)
    lin = LinearSurrogate(
        lay.input_schema,
        lay.output_schema,
        rng.uniform(-0.2, 0.2, size=(lay.n_y, lay.n_x)),
        rng.uniform(-0.1, 0.1, size=lay.n_y),
    )
    resid = _synthetic_model(case, seed=3)
    problem = build_hybrid_problem(case, lin, resid, forecast, uspec)
    assert problem.kind is ModelKind.HYBRID
    z = _interior(problem)
    p, alpha = z[: problem.n_g], z[problem.n_g :]
    ns = case.non_slack_gens
    gin = GaussianInput(
        np.concatenate([p[ns], forecast.p_l, forecast.p_rs]),
        input_covariance(alpha[ns], uspec, signs=uspec.signs),
    )
    gp = ta1(resid, gin)
    mean, var = problem.moments(z)
    np.testing.assert_allclose(mean, lin.predict(gin.mean) + gp.mean, atol=1e-12)
    np.testing.assert_allclose(var, lin.variance(gin.cov) + gp.var, atol=1e-12)


def test_schema_mismatch() -> None:
    forecast, uspec = _setup(three_bus())
    with pytest.raises(SchemaMismatchError):
        build_full_problem(three_bus(), _synthetic_model(two_bus()), forecast, uspec)


# ─────────── solve ───────────


def test_solve_three_bus() -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    problem = build_full_problem(case, _synthetic_model(case), forecast, uspec)
    sol = solve_cc_opf(problem, opts=SolverOptions(tol=1e-7))
    assert sol.ok
    assert sol.alpha.sum() == pytest.approx(1.0, abs=1e-7)
    assert np.all(sol.alpha >= -1e-8)
    assert sol.p_g.sum() == pytest.approx(forecast.net_demand, abs=1e-7)
    assert sol.output_schema == DatasetLayout(case).output_schema

    lo, hi = DatasetLayout(case).output_bounds()
    assert np.all(sol.mu + sol.lambda_out <= hi + 1e-6)
    assert np.all(sol.mu - sol.lambda_out >= lo - 1e-6)
    p_lo, p_hi = case.p_gen_bounds
    assert np.all(sol.p_g + sol.lambda_pg <= p_hi + 1e-6)
    assert np.all(sol.p_g - sol.lambda_pg >= p_lo - 1e-6)
    assert np.all(sol.lambda_out_3std >= 0)
    assert sol.cost == pytest.approx(problem.objective(np.concatenate([sol.p_g, sol.alpha])))


def test_cheaper_generator_carries_more_recourse() -> None:
    case = three_bus()
    forecast, uspec = _setup(case)
    problem = build_full_problem(case, _synthetic_model(case), forecast, uspec)
    sol = solve_cc_opf(problem, opts=SolverOptions(tol=1e-8))
    assert sol.ok
    np.testing.assert_allclose(
        sol.p_g, economic_dispatch(case, forecast.net_demand), atol=1e-4
    )
    # recourse cost is c2 T alpha^2, so alpha splits inversely to c2 while no limit binds
    c2 = case.cost_coeffs[0]
    assert sol.alpha[0] * c2[0] == pytest.approx(sol.alpha[1] * c2[1], rel=1e-3)
