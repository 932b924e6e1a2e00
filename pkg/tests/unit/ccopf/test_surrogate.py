from __future__ import annotations

import numpy as np
import pytest

from gpccopf.ccopf import LinearSurrogate, fit_linear_surrogate
from gpccopf.dataset import (
    SampleSet,
    SamplingParams,
    build_dc_dataset,
    sample_injections,
    standardize,
)
from gpccopf.errors import RankDeficientError
from tests.utils import three_bus


def test_recovers_exact_line() -> None:
    X = np.linspace(-1.0, 1.0, 7)[:, None]
    lin = fit_linear_surrogate(SampleSet(("x",), ("y",), X, 2.0 * X + 1.0))
    np.testing.assert_allclose(lin.A, [[2.0]], atol=1e-12)
    np.testing.assert_allclose(lin.b, [1.0], atol=1e-12)


def test_solves_normal_equations() -> None:
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    Y = X @ rng.normal(size=(3, 2)) + 0.3 + 0.05 * rng.normal(size=(40, 2))
    lin = fit_linear_surrogate(SampleSet(("a", "b", "c"), ("u", "w"), X, Y))
    D = np.hstack([X, np.ones((40, 1))])
    coef = np.linalg.solve(D.T @ D, D.T @ Y)
    np.testing.assert_allclose(lin.A, coef[:3].T, atol=1e-10)
    np.testing.assert_allclose(lin.b, coef[3], atol=1e-10)


def test_constant_outputs_are_exact_rows() -> None:
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 2))
    Y = np.column_stack([np.ones(10), X[:, 0] - X[:, 1]])
    lin = fit_linear_surrogate(SampleSet(("a", "b"), ("v_3", "s_1_2"), X, Y))
    np.testing.assert_array_equal(lin.A[0], [0.0, 0.0])
    assert lin.b[0] == 1.0
    np.testing.assert_allclose(lin.predict(rng.normal(size=(4, 2)))[:, 0], 1.0)


def test_dc_voltages_predicted_flat() -> None:
    case = three_bus()
    samples = sample_injections(case, SamplingParams(seed=2), 30)
    lin = fit_linear_surrogate(build_dc_dataset(case, samples))
    v = [i for i, name in enumerate(lin.output_schema) if name.startswith("v_")]
    np.testing.assert_array_equal(lin.A[v], 0.0)
    np.testing.assert_array_equal(lin.b[v], 1.0)


def test_variance_is_quadratic_form() -> None:
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 2))
    lin = LinearSurrogate(("a", "b"), ("x", "y", "z"), A, np.zeros(3))
    M = rng.normal(size=(2, 2))
    cov = M @ M.T
    np.testing.assert_allclose(lin.variance(cov), np.diag(A @ cov @ A.T), rtol=1e-12)


def test_duplicate_inputs_are_rank_deficient() -> None:
    x = np.arange(6.0)
    X = np.column_stack([x, x])
    with pytest.raises(RankDeficientError):
        fit_linear_surrogate(SampleSet(("a", "b"), ("y",), X, x[:, None]))


def test_too_few_samples() -> None:
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(RankDeficientError):
        fit_linear_surrogate(SampleSet(("a", "b"), ("y",), X, np.ones((2, 1))))


def test_rejects_standardized_data() -> None:
    rng = np.random.default_rng(4)
    X = rng.normal(size=(10, 1))
    scaled, _ = standardize(SampleSet(("x",), ("y",), X, 3.0 * X))
    with pytest.raises(ValueError):
        fit_linear_surrogate(scaled)
