from __future__ import annotations

import numpy as np
import pytest

from gpccopf.errors import ConfigError
from gpccopf.gp import GpModel, SparseGpModel, predict
from gpccopf.propagate import (
    GaussianInput,
    Propagation,
    em,
    propagate,
    ta1,
    ta1_sensitivity,
    ta2,
)
from tests.utils import toy_hyperparams, toy_model, toy_set

H = 1e-5


def _model() -> GpModel:
    return toy_model(toy_set(20, 2, seed=1), ell2=0.8, sf2=1.2, sz2=1e-2)


def _cov(seed: int, scale: float = 0.05) -> np.ndarray:
    A = np.random.default_rng(seed).normal(size=(2, 2))
    return scale * (A @ A.T)


def test_point_input_equals_deterministic_predict() -> None:
    model = _model()
    x = np.array([0.3, -0.4])
    mu, var = predict(model, x)
    out = ta1(model, GaussianInput.point(x))
    np.testing.assert_allclose(out.mean, mu, atol=1e-10)
    np.testing.assert_allclose(out.var, var, atol=1e-10)


def test_ta1_variance_at_least_deterministic() -> None:
    model = _model()
    x = np.array([0.1, 0.2])
    _, var = predict(model, x)
    for seed in range(5):
        out = ta1(model, GaussianInput(x, _cov(seed)))
        assert np.all(out.var >= var - 1e-12)


def test_mean_gradient_matches_finite_differences() -> None:
    model = _model()
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(-1.5, 1.5, 2)
        sens = ta1_sensitivity(model, GaussianInput.point(x))
        fd = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = H
            fd[:, i] = (predict(model, x + e)[0] - predict(model, x - e)[0]) / (2 * H)
        np.testing.assert_allclose(sens.grad_mean, fd, rtol=1e-5, atol=1e-8)


def test_variance_gradient_matches_finite_differences() -> None:
    model = _model()
    S = _cov(3)
    x = np.array([0.5, -0.2])
    sens = ta1_sensitivity(model, GaussianInput(x, S))
    fd = np.empty((2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = H
        up = ta1(model, GaussianInput(x + e, S)).var
        dn = ta1(model, GaussianInput(x - e, S)).var
        fd[:, i] = (up - dn) / (2 * H)
    np.testing.assert_allclose(sens.grad_var, fd, rtol=1e-5, atol=1e-8)


def test_ta2_equals_ta1_without_uncertainty() -> None:
    model = _model()
    gin = GaussianInput.point(np.array([0.2, 0.9]))
    a, b = ta1(model, gin), ta2(model, gin)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.var, b.var)


def test_variance_hessian_matches_finite_differences() -> None:
    post = _model().posterior
    x = np.array([-0.3, 0.4])
    for p in post.outputs:
        _, H_var = p.hessians(x)
        fd = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = H
            fd[:, i] = (p.gradients(x + e)[3] - p.gradients(x - e)[3]) / (2 * H)
        np.testing.assert_allclose(H_var, fd, rtol=1e-4, atol=1e-6)


def test_ta2_adds_half_trace_correction() -> None:
    model = _model()
    S = _cov(4, scale=0.01)
    x = np.array([0.0, 0.5])
    first = ta1(model, GaussianInput(x, S))
    second = ta2(model, GaussianInput(x, S))
    for j, p in enumerate(model.posterior.outputs):
        _, H_var = p.hessians(x)
        expected = max(first.var[j] + 0.5 * float(np.trace(H_var @ S)), 0.0)
        assert second.var[j] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_all_methods_agree_in_the_deterministic_limit() -> None:
    model = _model()
    x = np.array([0.4, 0.1])
    mu, var = predict(model, x)
    gin = GaussianInput(x, 1e-12 * np.eye(2))
    for method in Propagation:
        out = propagate(model, gin, method)
        np.testing.assert_allclose(out.mean, mu, atol=1e-6)
        np.testing.assert_allclose(out.var, var, atol=1e-6)


def test_em_matches_monte_carlo() -> None:
    model = _model()
    mean = np.array([0.2, -0.3])
    S = _cov(5, scale=0.1)
    out = em(model, GaussianInput(mean, S))

    n = 200_000
    draws = np.random.default_rng(6).multivariate_normal(mean, S, size=n)
    mu, var = predict(model, draws)
    mc_mean = mu.mean(axis=0)
    se_mean = mu.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(out.mean - mc_mean) < 4 * se_mean)

    total = var + (mu - mc_mean) ** 2
    mc_var = total.mean(axis=0)
    se_var = total.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(out.var - mc_var) < 4 * se_var + 1e-6)


def test_em_rejects_sparse_models() -> None:
    data = toy_set(10, 2)
    h = toy_hyperparams(2, sz2=1e-2)
    sparse = SparseGpModel.from_hyperparams(data, [h, h], data.X[:4])
    with pytest.raises(ConfigError):
        em(sparse, GaussianInput.point(np.zeros(2)))


def test_ta1_accepts_sparse_models() -> None:
    data = toy_set(10, 2)
    h = toy_hyperparams(2, sz2=1e-2)
    sparse = SparseGpModel.from_hyperparams(data, [h, h], data.X[:4])
    out = ta1(sparse, GaussianInput(np.zeros(2), _cov(7)))
    assert np.all(out.var >= 0)


def test_unknown_method() -> None:
    with pytest.raises(ConfigError):
        propagate(_model(), GaussianInput.point(np.zeros(2)), "ta3")


@pytest.mark.parametrize(
    "cov",
    [np.array([[1.0, 0.5], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, -1.0]])],
)
def test_input_covariance_checked(cov: np.ndarray) -> None:
    with pytest.raises(ValueError):
        GaussianInput(np.zeros(2), cov)


def test_dimension_mismatch() -> None:
    with pytest.raises(ValueError):
        ta1(_model(), GaussianInput.point(np.zeros(3)))
