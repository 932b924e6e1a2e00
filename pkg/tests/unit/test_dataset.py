from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gpccopf.ccopf import fit_linear_surrogate
from gpccopf.constants import scaler_path
from gpccopf.dataset import (
    DatasetLayout,
    SampleSet,
    SamplingParams,
    build_dataset,
    build_dc_dataset,
    destandardize,
    generation_factors,
    injections_from_inputs,
    load_dataset,
    residual_dataset,
    sample_generation,
    sample_injections,
    save_dataset,
    standardize,
)
from gpccopf.errors import (
    ConstantColumnError,
    InfeasibleSampleError,
    SchemaMismatchError,
    UnstableDatasetError,
)
from gpccopf.grid import load_case
from gpccopf.powerflow import InjectionSet
from gpccopf.reporting.warnings_bridge import DatasetWarning
from tests.utils import three_bus, toy_set, two_bus

FLAT = SamplingParams(
    sigma_eta_corr=0.0, sigma_eta_unc=0.0, sigma_nu_corr=0.0, sigma_nu_unc=0.0
)


# ─────────── sampling ───────────


def test_degenerate_multipliers() -> None:
    case = three_bus()
    for inj in sample_injections(case, FLAT, 5):
        np.testing.assert_allclose(inj.p_l, np.exp(-1.0 + 1.0) * case.p_load_ref, rtol=1e-15)
        np.testing.assert_allclose(inj.p_rs, np.exp(0.2 + 1.0) * case.p_res_ref, rtol=1e-15)


def test_same_seed_same_samples() -> None:
    case = three_bus()
    a = sample_injections(case, SamplingParams(seed=11), 20)
    b = sample_injections(case, SamplingParams(seed=11), 20)
    for x, y in zip(a, b, strict=True):
        np.testing.assert_array_equal(x.p_g, y.p_g)
        np.testing.assert_array_equal(x.p_l, y.p_l)
        np.testing.assert_array_equal(x.p_rs, y.p_rs)


def test_prefix_independent_of_sample_count() -> None:
    case = three_bus()
    short = sample_injections(case, SamplingParams(seed=2), 5)
    long = sample_injections(case, SamplingParams(seed=2), 50)
    for x, y in zip(short, long[:5], strict=True):
        np.testing.assert_array_equal(x.p_l, y.p_l)


def test_log_multiplier_mean() -> None:
    case = two_bus()
    params = SamplingParams(seed=5)
    n = 10_000
    log_eta = np.array(
        [np.log(inj.p_l[0] / case.p_load_ref[0]) for inj in sample_injections(case, params, n)]
    )
    sd = np.hypot(params.sigma_eta_corr, params.sigma_eta_unc)
    expected = params.mu_eta_corr + params.mu_eta_unc
    assert abs(log_eta.mean() - expected) < 3 * sd / np.sqrt(n)


def test_generation_balance_holds_exactly() -> None:
    case = three_bus()
    params = SamplingParams(seed=3)
    for inj in sample_injections(case, params, 50):
        total = inj.p_g.sum() + inj.p_rs.sum()
        assert total == pytest.approx(params.rho * inj.p_l.sum(), abs=1e-12)


def test_reactive_follows_power_factor() -> None:
    case = three_bus()
    gammas_l = np.array([ld.gamma for ld in case.loads])
    gammas_r = np.array([r.gamma for r in case.res_units])
    for inj in sample_injections(case, SamplingParams(seed=4), 10):
        np.testing.assert_array_equal(inj.q_l, gammas_l * inj.p_l)
        np.testing.assert_array_equal(inj.q_rs, gammas_r * inj.p_rs)


def test_single_generator_ignores_psi() -> None:
    case = two_bus()
    p_l = np.array([[0.3], [0.5]])
    p_rs = np.zeros((2, 0))
    params = SamplingParams(rho=1.0139)
    p_g = sample_generation(p_l, p_rs, case, params)
    np.testing.assert_allclose(p_g[:, 0], 1.0139 * p_l[:, 0], rtol=1e-15)


def test_generation_factors_in_range() -> None:
    params = SamplingParams(seed=9)
    psi = np.concatenate([generation_factors(params, i, 3) for i in range(1000)])
    assert psi.min() >= 0.8
    assert psi.max() <= 1.2


def test_infeasible_sample() -> None:
    case = three_bus(res=5.0)
    with pytest.raises(InfeasibleSampleError, match="infeasible sample"):
        sample_injections(case, FLAT, 1)


def test_ieee9_loss_factor_default() -> None:
    assert SamplingParams().rho == pytest.approx(1.0139)


@pytest.mark.parametrize(
    "kwargs",
    [{"sigma_eta_corr": -0.1}, {"psi_lo": 1.2, "psi_hi": 0.8}, {"rho": 0.99}],
)
def test_sampling_params_invariants(kwargs: dict[str, float]) -> None:
    with pytest.raises(ValueError):
        SamplingParams(**kwargs)


# ─────────── datasets ───────────


def test_three_bus_schema() -> None:
    lay = DatasetLayout(three_bus())
    assert lay.input_schema == ("pg_2", "pl_3", "prs_3")
    assert lay.output_schema == ("v_3", "qg_1", "qg_2", "s_1_2", "s_2_3", "s_1_3")


def test_ieee9_input_count() -> None:
    lay = DatasetLayout(load_case("builtin:ieee9"))
    assert lay.n_x == 7
    assert lay.n_y == 6 + 3 + 9


def test_build_dataset_widths() -> None:
    case = three_bus()
    data = build_dataset(case, sample_injections(case, SamplingParams(seed=1), 30))
    assert data.X.shape == (30, 3)
    assert data.Y.shape == (30, 6)
    assert not np.isnan(data.Y).any()
    assert data.dropped == 0


def test_zero_variance_rows_identical() -> None:
    case = two_bus()
    data = build_dataset(case, sample_injections(case, FLAT, 6))
    np.testing.assert_array_equal(data.Y, np.broadcast_to(data.Y[0], data.Y.shape))


def test_divergent_rows_dropped_with_warning() -> None:
    case = two_bus()
    good = sample_injections(case, FLAT, 19)
    bad = InjectionSet.from_active(case, np.zeros(1), np.array([50.0]), np.zeros(0))
    with pytest.warns(DatasetWarning):
        data = build_dataset(case, [*good, bad])
    assert data.m_s == 19
    assert data.dropped == 1


def test_unstable_dataset() -> None:
    case = two_bus()
    bad = InjectionSet.from_active(case, np.zeros(1), np.array([50.0]), np.zeros(0))
    with pytest.raises(UnstableDatasetError, match="unstable"):
        build_dataset(case, [bad] * 5)


def test_injections_from_inputs_rebuild_rows() -> None:
    case = three_bus()
    samples = sample_injections(case, SamplingParams(seed=6), 4)
    data = build_dc_dataset(case, samples)
    again = build_dc_dataset(case, injections_from_inputs(case, data.X))
    np.testing.assert_allclose(again.Y, data.Y, atol=1e-12)


def test_dc_voltages_are_flat() -> None:
    case = three_bus()
    data = build_dc_dataset(case, sample_injections(case, SamplingParams(seed=6), 4))
    lay = DatasetLayout(case)
    np.testing.assert_array_equal(data.Y[:, lay.v], 1.0)


# ─────────── residuals ───────────


def _linear_set() -> SampleSet:
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    Y = np.column_stack([2 * X[:, 0] + 1, X[:, 0] - 3 * X[:, 1]])
    return SampleSet(("a", "b"), ("u", "w"), X, Y)


def test_linear_residuals_vanish() -> None:
    data = _linear_set()
    res = residual_dataset(data, fit_linear_surrogate(data))
    assert np.abs(res.Y).max() < 1e-10


def test_residual_reconstruction() -> None:
    data = toy_set(30, 2)
    lin = fit_linear_surrogate(data)
    res = residual_dataset(data, lin)
    assert np.max(np.abs(data.Y - (lin.predict(data.X) + res.Y))) <= 1e-12


def test_residual_schema_mismatch() -> None:
    data = toy_set(30, 2)
    other = SampleSet(("p", "q"), data.output_schema, data.X, data.Y)
    with pytest.raises(SchemaMismatchError):
        residual_dataset(data, fit_linear_surrogate(other))


def test_ieee9_residuals_shrink_flow_variance() -> None:
    case = load_case("builtin:ieee9")
    ac = build_dataset(case, sample_injections(case, SamplingParams(seed=0), 40))
    dc = build_dc_dataset(case, injections_from_inputs(case, ac.X))
    res = residual_dataset(ac, fit_linear_surrogate(dc))
    s = DatasetLayout(case).s
    assert np.all(res.Y[:, s].var(axis=0) < ac.Y[:, s].var(axis=0))


# ─────────── standardization ───────────


def test_standardize_formula() -> None:
    data = SampleSet(
        ("x",), ("v_4",), np.array([[1.0], [2.0], [3.0]]), np.array([[0.0], [1.0], [5.0]])
    )
    scaled, sc = standardize(data)
    np.testing.assert_allclose(scaled.X[:, 0], np.array([-1.0, 0.0, 1.0]) * np.sqrt(1.5))
    assert sc.x_mean[0] == pytest.approx(2.0)


def test_standardized_invariants_and_inverse() -> None:
    data = toy_set(40, 3)
    scaled, _ = standardize(data)
    assert np.all(np.abs(scaled.X.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(scaled.Y.std(axis=0) - 1) < 1e-9)
    back = destandardize(scaled)
    np.testing.assert_allclose(back.X, data.X, atol=1e-12)
    np.testing.assert_allclose(back.Y, data.Y, atol=1e-12)


def test_constant_column_named() -> None:
    data = SampleSet(("x",), ("v_4",), np.array([[1.0], [2.0], [3.0]]), np.ones((3, 1)))
    with pytest.raises(ConstantColumnError, match="constant column v_4"):
        standardize(data)


def test_csv_with_scaler_sidecar(tmp_path: Path) -> None:
    data = toy_set(12, 2)
    scaled, _ = standardize(data)
    path = tmp_path / "dataset.csv"
    save_dataset(scaled, path)
    assert scaler_path(path).exists()
    back = load_dataset(path, n_x=2)
    assert back.input_schema == data.input_schema
    assert back.output_schema == data.output_schema
    np.testing.assert_allclose(back.X, scaled.X, atol=1e-12)
    np.testing.assert_allclose(back.Y, scaled.Y, atol=1e-12)
    header = path.read_text().splitlines()[0]
    assert header == "x0,x1,y0,y1"
