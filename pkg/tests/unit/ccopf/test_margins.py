from __future__ import annotations

import math

import numpy as np
import pytest

from gpccopf.ccopf import (
    Forecast,
    UncertaintySpec,
    generator_margins,
    input_covariance,
    quantile,
    reformulate_margins,
)
from gpccopf.errors import EmptyMarginBandError, QuantileRangeError
from tests.utils import three_bus


def _bisect_quantile(eps: float) -> float:
    """Solve 1 - Phi(z) = eps on the complementary error function."""
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > eps:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _uspec(
    sigma_l: list[float], sigma_rs: list[float] | None = None, **eps: float
) -> UncertaintySpec:
    return UncertaintySpec(np.array(sigma_l), np.array(sigma_rs or []), **eps)


# ─────────── quantiles ───────────


def test_median_quantile_is_zero() -> None:
    assert quantile(0.5) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    ("eps", "expected", "tol"), [(0.025, 1.959964, 1e-5), (0.001, 3.090232, 1e-4)]
)
def test_known_quantiles(eps: float, expected: float, tol: float) -> None:
    assert quantile(eps) == pytest.approx(expected, abs=tol)


@pytest.mark.parametrize("eps", [1e-6, 0.01, 0.05, 0.2, 0.45, 0.7])
def test_quantile_matches_bisection(eps: float) -> None:
    assert quantile(eps) == pytest.approx(_bisect_quantile(eps), abs=1e-8)


def test_quantile_decreases_with_eps() -> None:
    values = [quantile(e) for e in (0.001, 0.01, 0.025, 0.1, 0.4)]
    assert all(a > b for a, b in zip(values, values[1:], strict=False))


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_quantile_rejects_out_of_range(eps: float) -> None:
    with pytest.raises(QuantileRangeError):
        quantile(eps)


# ─────────── covariance ───────────


def test_recourse_block_example() -> None:
    s = math.sqrt(0.02)
    uspec = _uspec([s, s])
    assert uspec.trace == pytest.approx(0.04)
    cov = input_covariance(np.array([0.5, 0.5]), uspec)
    np.testing.assert_allclose(cov[:2, :2], 0.01, atol=1e-15)
    np.testing.assert_allclose(cov[:2, 2:], 0.01, atol=1e-15)
    np.testing.assert_allclose(cov[2:, 2:], 0.02 * np.eye(2), atol=1e-15)


def test_covariance_is_positive_semidefinite() -> None:
    rng = np.random.default_rng(0)
    for _ in range(10):
        alpha = rng.dirichlet(np.ones(3))
        uspec = _uspec(list(rng.uniform(0, 0.3, 2)), list(rng.uniform(0, 0.3, 2)))
        cov = input_covariance(alpha, uspec, signs=uspec.signs)
        np.testing.assert_allclose(cov, cov.T, atol=0)
        assert float(np.linalg.eigvalsh(cov).min()) >= -1e-12


def test_single_uncertain_injection() -> None:
    uspec = _uspec([0.1])
    cov = input_covariance(np.array([0.4]), uspec)
    np.testing.assert_allclose(cov, [[0.16 * 0.01, 0.4 * 0.01], [0.4 * 0.01, 0.01]], atol=1e-15)


def test_covariance_is_affine_image_of_fluctuations() -> None:
    uspec = _uspec([0.1, 0.2], [0.05])
    alpha = np.array([0.3, 0.7])
    M = np.vstack([np.outer(alpha, uspec.signs), np.eye(3)])
    expected = M @ np.diag(uspec.sigma**2) @ M.T
    np.testing.assert_allclose(
        input_covariance(alpha, uspec, signs=uspec.signs), expected, atol=1e-15
    )


def test_renewables_enter_with_opposite_sign() -> None:
    uspec = _uspec([0.1], [0.2])
    np.testing.assert_array_equal(uspec.signs, [1.0, -1.0])
    cov = input_covariance(np.array([1.0]), uspec, signs=uspec.signs)
    assert cov[0, 1] == pytest.approx(0.01)
    assert cov[0, 2] == pytest.approx(-0.04)


# ─────────── margins ───────────


def test_tightened_band_example() -> None:
    lo, hi = reformulate_margins(
        np.array([1.0]), np.array([1e-4]), (np.array([0.9]), np.array([1.1])), 1.96
    )
    assert lo[0] == pytest.approx(0.9196)
    assert hi[0] == pytest.approx(1.0804)


def test_zero_variance_leaves_bounds() -> None:
    bounds = (np.array([0.9, -1.0]), np.array([1.1, 1.0]))
    lo, hi = reformulate_margins(np.zeros(2), np.zeros(2), bounds, 3.0)
    np.testing.assert_array_equal(lo, bounds[0])
    np.testing.assert_array_equal(hi, bounds[1])


def test_margin_wider_than_band() -> None:
    with pytest.raises(EmptyMarginBandError, match="margin exceeds feasible band") as info:
        reformulate_margins(
            np.zeros(2),
            np.array([1e-6, 0.04]),
            (np.array([0.9, 0.9]), np.array([1.1, 1.1])),
            2.0,
            names=("v_4", "v_5"),
        )
    assert info.value.context["constraint"] == "v_5"


def test_negative_variance_rejected() -> None:
    with pytest.raises(ValueError):
        reformulate_margins(np.zeros(1), np.array([-1.0]), (np.zeros(1), np.ones(1)), 1.0)


def test_generator_margins() -> None:
    uspec = _uspec([0.1, 0.1], [0.2])
    lam = generator_margins(np.array([0.25, 0.75]), uspec, 3.0)
    np.testing.assert_allclose(lam, 3.0 * np.array([0.25, 0.75]) * math.sqrt(0.06))


# ─────────── uncertainty description ───────────


@pytest.mark.parametrize("field", ["eps_pg", "eps_q", "eps_v", "eps_s"])
@pytest.mark.parametrize("value", [0.0, 0.5, 0.7])
def test_violation_probabilities_validated(field: str, value: float) -> None:
    with pytest.raises(ValueError):
        _uspec([0.1], **{field: value})


def test_negative_sigma_rejected() -> None:
    with pytest.raises(ValueError):
        _uspec([-0.1])


def test_fractions_of_forecast() -> None:
    forecast = Forecast.from_case(three_bus(res=0.1))
    uspec = UncertaintySpec.from_fractions(forecast, sigma_load_frac=0.1, sigma_res_frac=0.5)
    np.testing.assert_allclose(uspec.sigma, [0.06, 0.05])
    assert forecast.net_demand == pytest.approx(0.5)
