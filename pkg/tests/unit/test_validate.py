from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from gpccopf.ccopf import Forecast, UncertaintySpec, economic_dispatch
from gpccopf.dataset import SamplingParams
from gpccopf.errors import GapTooWideError, SchemaMismatchError
from gpccopf.gp import TrainConfig
from gpccopf.grid import GridCase
from gpccopf.validate import (
    AffinePolicy,
    apply_recourse,
    baseline_base_case,
    corruption_experiment,
    draw_fluctuations,
    monte_carlo_validate,
    regression_metrics,
    tally_violations,
)
from tests.utils import three_bus


def _policy(case: GridCase) -> AffinePolicy:
    return AffinePolicy.equal_share(economic_dispatch(case, Forecast.from_case(case).net_demand))


# ─────────── recourse ───────────


def test_recourse_covers_net_mismatch() -> None:
    case = three_bus(res=0.1)
    policy = AffinePolicy(np.array([0.3, 0.2]), np.array([0.25, 0.75]))
    inj = apply_recourse(case, policy, np.array([0.05, 0.02]))
    np.testing.assert_allclose(inj.p_g, [0.3075, 0.2225])
    np.testing.assert_allclose(inj.p_l, [0.65])
    np.testing.assert_allclose(inj.p_rs, [0.12])
    np.testing.assert_allclose(inj.q_l, [0.13])
    shift = inj.p_g.sum() - policy.p_g.sum()
    assert shift == pytest.approx(inj.p_l.sum() - 0.6 - (inj.p_rs.sum() - 0.1))


def test_equal_share() -> None:
    policy = AffinePolicy.equal_share(np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(policy.alpha, 0.25)


def test_fluctuation_rows_depend_only_on_seed_and_index() -> None:
    uspec = UncertaintySpec(np.array([0.1, 0.2]), np.array([0.3]))
    long = draw_fluctuations(uspec, 10, seed=3)
    short = draw_fluctuations(uspec, 5, seed=3)
    assert long.shape == (10, 3)
    np.testing.assert_array_equal(long[:5], short)
    assert not np.array_equal(draw_fluctuations(uspec, 5, seed=4), short)


def test_fluctuation_scale() -> None:
    uspec = UncertaintySpec(np.array([0.1, 0.0]), np.array([0.3]))
    w = draw_fluctuations(uspec, 20_000, seed=0)
    np.testing.assert_allclose(w.std(axis=0), [0.1, 0.0, 0.3], rtol=0.03)
    np.testing.assert_array_equal(w[:, 1], 0.0)


# ─────────── tallies ───────────


def test_tally_example() -> None:
    Y = np.array([[0.5], [1.2], [-0.1], [0.9]])
    upper, lower, union = tally_violations(Y, np.zeros(1), np.ones(1))
    assert upper[0] == 0.25
    assert lower[0] == 0.25
    assert union == 0.5


def test_tally_union_counts_samples_once() -> None:
    Y = np.array([[2.0, 2.0], [0.5, 0.5]])
    upper, _, union = tally_violations(Y, np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(upper, [0.5, 0.5])
    assert union == 0.5


def test_tally_empty() -> None:
    upper, lower, union = tally_violations(np.zeros((0, 3)), np.zeros(3), np.ones(3))
    np.testing.assert_array_equal(upper, 0.0)
    np.testing.assert_array_equal(lower, 0.0)
    assert union == 0.0


def test_tally_matches_normal_tail() -> None:
    n = 100_000
    Y = np.random.default_rng(0).normal(size=(n, 1))
    z = 1.959964
    upper, lower, _ = tally_violations(Y, np.array([-z]), np.array([z]), tol=0.0)
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    se = math.sqrt(p * (1 - p) / n)
    assert abs(upper[0] - p) < 4 * se
    assert abs(lower[0] - p) < 4 * se


# ─────────── metrics ───────────


def test_metrics_example() -> None:
    m = regression_metrics(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 5.0]), names=["y"])
    assert m.mae[0] == pytest.approx(2 / 3)
    assert m.mse[0] == pytest.approx(4 / 3)
    assert m.rmse[0] == pytest.approx(math.sqrt(4 / 3))
    assert m.msle[0] == pytest.approx((math.log(6) - math.log(4)) ** 2 / 3)
    assert m.output_schema == ["y"]


def test_metrics_perfect_prediction() -> None:
    Y = np.random.default_rng(1).uniform(0, 1, size=(10, 3))
    m = regression_metrics(Y, Y)
    assert m.mae_avg == 0.0
    assert m.rmse_avg == 0.0
    assert m.msle_avg == 0.0


def test_msle_skipped_for_negative_columns() -> None:
    t = np.array([[1.0, -1.0], [2.0, 0.5]])
    m = regression_metrics(t, t + 0.1, names=["v_3", "s_1_2"])
    assert m.msle[1] is None
    assert m.msle_skipped == ["s_1_2"]
    assert m.msle_avg == pytest.approx(m.msle[0])
    assert m.mae_avg == pytest.approx(0.1)


def test_metrics_shape_mismatch() -> None:
    with pytest.raises(SchemaMismatchError):
        regression_metrics(np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(SchemaMismatchError):
        regression_metrics(np.zeros((3, 2)), np.zeros((3, 2)), names=["a"])


# ─────────── Monte Carlo ───────────


def test_no_fluctuations_no_violations(tmp_path: Path) -> None:
    case = three_bus()
    uspec = UncertaintySpec(np.zeros(1), np.zeros(1))
    path = tmp_path / "outputs.csv"
    report = monte_carlo_validate(case, _policy(case), uspec, n=10, seed=1, outputs_path=path)
    assert report.valid
    assert report.n_divergent == 0
    assert report.infeasibility == 0.0
    np.testing.assert_allclose(report.lambda_upper, 0.0, atol=1e-12)
    np.testing.assert_allclose(report.lambda_lower, 0.0, atol=1e-12)
    assert report.cost_std == pytest.approx(0.0, abs=1e-12)
    assert report.constraint_names[-2:] == ["pg_1", "pg_2"]

    frame = pd.read_csv(path)
    assert list(frame.columns) == report.constraint_names
    assert len(frame) == 10


def test_validation_is_reproducible() -> None:
    case = three_bus()
    uspec = UncertaintySpec.from_fractions(Forecast.from_case(case))
    a = monte_carlo_validate(case, _policy(case), uspec, n=20, seed=5)
    b = monte_carlo_validate(case, _policy(case), uspec, n=20, seed=5)
    assert a.upper_rates == b.upper_rates
    assert a.cost_mean == b.cost_mean
    assert a.rate("v_3") == a.upper_rates[0] + a.lower_rates[0]


def test_validation_needs_samples() -> None:
    case = three_bus()
    with pytest.raises(ValueError):
        monte_carlo_validate(case, _policy(case), UncertaintySpec(np.zeros(1), np.zeros(1)), n=0)


# ─────────── experiments ───────────


def test_gap_covering_every_sample() -> None:
    with pytest.raises(GapTooWideError):
        corruption_experiment(three_bus(), SamplingParams(seed=0), 3, (0.0, 1e6), n_pool=20)


def test_gap_arguments_checked() -> None:
    with pytest.raises(ValueError):
        corruption_experiment(three_bus(), SamplingParams(), 3, (50.0, 40.0), n_pool=5)
    with pytest.raises(SchemaMismatchError):
        corruption_experiment(three_bus(), SamplingParams(), 1, (40.0, 50.0), n_pool=5)


@pytest.mark.slow
def test_zero_width_gap_scores_held_out_samples() -> None:
    report = corruption_experiment(
        three_bus(),
        SamplingParams(seed=1),
        3,
        (60.0, 60.0),
        n_pool=60,
        n_train=40,
        n_eval=10,
        cfg=TrainConfig(restarts=1, max_iters=50),
    )
    assert not report.evaluated_in_gap
    assert report.dropped_fraction == 0.0
    assert report.n_train == 40
    assert report.n_eval == 10
    assert math.isfinite(report.rmse_full)
    assert math.isfinite(report.rmse_hybrid)


@pytest.mark.slow
def test_base_case_baseline() -> None:
    case = three_bus()
    uspec = UncertaintySpec.from_fractions(Forecast.from_case(case))
    report = baseline_base_case(case, uspec, n=20, seed=2)
    assert report.name == "base_case"
    assert report.alpha == [0.5, 0.5]
    assert report.validation.n_samples == 20
    assert 0.0 <= report.validation.infeasibility <= 1.0
