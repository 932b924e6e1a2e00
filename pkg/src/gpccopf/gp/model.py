"""
Full GP regression: one independent SEard GP per output column, zero prior mean on
standardized data, hyperparameters by multi-start maximum marginal likelihood.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla
from scipy.optimize import minimize

from gpccopf.dataset import SampleSet, Scaler
from gpccopf.errors import KernelNotPDError, TrainingError
from gpccopf.gp.kernel import Hyperparams, gram, stable_cholesky
from gpccopf.gp.posterior import GpPosterior, PosteriorSet, clamp_variance
from gpccopf.utils.misc_utils import ordered_map

__all__ = [
    "TrainConfig",
    "OutputGp",
    "GpModel",
    "identity_scaler",
    "log_marginal_likelihood",
    "fit_output",
    "train",
    "predict",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

_LOG_2PI = math.log(2.0 * math.pi)
# bounds on log-hyperparameters (standardized units)
_LOG_LAMBDA_BOUNDS = (-8.0, 12.0)
_LOG_SF2_BOUNDS = (-8.0, 8.0)
_LOG_SZ2_BOUNDS = (math.log(1e-8), math.log(10.0))
_FAILED = 1e25


@dataclass(frozen=True, slots=True)
class TrainConfig:
    restarts: int = 5
    init_log_range: float = 2.0  # restarts draw log-hyperparameters from U[-r, r]
    max_iters: int = 200
    seed: int = 0
    workers: int | Literal["auto"] = 1
    pin_inducing: bool = False  # sparse models only

    def __post_init__(self) -> None:
        if self.restarts < 1 or self.max_iters < 1 or self.init_log_range < 0:
            raise ValueError("restarts and max_iters must be >= 1, init_log_range >= 0")


def identity_scaler(n_x: int, n_y: int) -> Scaler:
    return Scaler(np.zeros(n_x), np.ones(n_x), np.zeros(n_y), np.ones(n_y))


# ─────────── marginal likelihood ───────────


def _sq_dist_per_dim(X: FloatArray) -> FloatArray:
    """D[d, i, j] = (X[i, d] - X[j, d])^2."""
    diff = X[:, None, :] - X[None, :, :]
    return np.moveaxis(diff * diff, -1, 0)


def log_marginal_likelihood(
    X: FloatArray, y: FloatArray, h: Hyperparams
) -> tuple[float, FloatArray]:
    """
    log p(y | X, theta) and its gradient w.r.t. the log-hyperparameters
    [log lambda_1..n_x, log sigma_f^2, log sigma_z^2].
    """
    X = np.atleast_2d(np.asarray(X, np.float64))
    y = np.asarray(y, np.float64).ravel()
    n = y.size
    if n < 1:
        raise TrainingError.make("need at least one training point")
    Kf = gram(X, X, h.lambda_diag, h.sigma_f2)
    K = Kf + h.sigma_z2 * np.eye(n)
    L, _ = stable_cholesky(K)
    alpha = sla.cho_solve((L, True), y)
    value = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG_2PI

    W = np.outer(alpha, alpha) - sla.cho_solve((L, True), np.eye(n))
    D = _sq_dist_per_dim(X)
    grad = np.empty(h.n_x + 2)
    # dK/dlog(lambda_d) = Kf * D_d / (2 lambda_d)
    grad[: h.n_x] = 0.5 * np.einsum("ij,dij->d", W * Kf, D) / (2.0 * h.lambda_diag)
    grad[h.n_x] = 0.5 * float(np.sum(W * Kf))
    grad[h.n_x + 1] = 0.5 * h.sigma_z2 * float(np.trace(W))
    return value, grad


# ─────────── model ───────────


@dataclass(frozen=True, slots=True)
class OutputGp:
    """One output column: hyperparameters plus cached Cholesky factor and weights."""

    h: Hyperparams
    y: FloatArray
    L: FloatArray
    beta: FloatArray
    jitter: float = 0.0
    nll: float = float("nan")


def fit_output(X: FloatArray, y: FloatArray, h: Hyperparams, *, nll: float = math.nan) -> OutputGp:
    """Factor K + sigma_z^2 I for fixed hyperparameters."""
    K = gram(X, X, h.lambda_diag, h.sigma_f2) + h.sigma_z2 * np.eye(X.shape[0])
    L, jitter = stable_cholesky(K)
    beta = sla.cho_solve((L, True), y)
    return OutputGp(h=h, y=np.asarray(y, np.float64), L=L, beta=beta, jitter=jitter, nll=nll)


@dataclass(frozen=True)
class GpModel:
    input_schema: tuple[str, ...]
    output_schema: tuple[str, ...]
    X: FloatArray  # standardized training inputs
    outputs: tuple[OutputGp, ...]
    scaler: Scaler
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def n_x(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_y(self) -> int:
        return len(self.outputs)

    @cached_property
    def posterior(self) -> PosteriorSet:
        sc = self.scaler
        support = self.X * sc.x_std + sc.x_mean
        outs = []
        for j, o in enumerate(self.outputs):
            sy = float(sc.y_std[j])
            n = self.X.shape[0]
            K_inv = sla.cho_solve((o.L, True), np.eye(n))
            outs.append(
                GpPosterior(
                    support=support,
                    lam=o.h.lambda_diag * sc.x_std**2,
                    sf2=o.h.sigma_f2 * sy * sy,
                    w=o.beta / sy,
                    P=0.5 * (K_inv + K_inv.T) / (sy * sy),
                    offset=float(sc.y_mean[j]),
                )
            )
        return PosteriorSet(self.input_schema, self.output_schema, tuple(outs))

    @classmethod
    def from_hyperparams(
        cls, data: SampleSet, hyperparams: list[Hyperparams] | tuple[Hyperparams, ...]
    ) -> GpModel:
        """Build a model for given hyperparameters without optimising them."""
        sc = data.scaler or identity_scaler(data.X.shape[1], data.Y.shape[1])
        outs = tuple(fit_output(data.X, data.Y[:, j], h) for j, h in enumerate(hyperparams))
        return cls(data.input_schema, data.output_schema, data.X, outs, sc)


# ─────────── training ───────────


def hyperparam_bounds(n_x: int) -> list[tuple[float, float]]:
    return [_LOG_LAMBDA_BOUNDS] * n_x + [_LOG_SF2_BOUNDS, _LOG_SZ2_BOUNDS]


def initial_log_points(n_x: int, cfg: TrainConfig, column: int) -> list[FloatArray]:
    """First start is the unit point (noise 1e-2); the rest are log-uniform draws."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, column])))
    lo = np.array([b[0] for b in hyperparam_bounds(n_x)])
    hi = np.array([b[1] for b in hyperparam_bounds(n_x)])
    starts = [np.r_[np.zeros(n_x), 0.0, math.log(1e-2)]]
    for _ in range(cfg.restarts - 1):
        r = cfg.init_log_range
        starts.append(np.clip(rng.uniform(-r, r, size=n_x + 2), lo, hi))
    return starts


def _neg_lml(theta: FloatArray, X: FloatArray, y: FloatArray) -> tuple[float, FloatArray]:
    try:
        value, grad = log_marginal_likelihood(X, y, Hyperparams.from_log(theta))
    except KernelNotPDError:
        return _FAILED, np.zeros_like(theta)
    if not np.isfinite(value):
        return _FAILED, np.zeros_like(theta)
    return -value, -grad


def _train_column(X: FloatArray, y: FloatArray, cfg: TrainConfig, column: int) -> OutputGp:
    best_theta: FloatArray | None = None
    best = math.inf
    for theta0 in initial_log_points(X.shape[1], cfg, column):
        res = minimize(
            _neg_lml,
            theta0,
            args=(X, y),
            jac=True,
            method="L-BFGS-B",
            bounds=hyperparam_bounds(X.shape[1]),
            options={"maxiter": cfg.max_iters},
        )
        val = float(res.fun)
        if val < _FAILED and val < best:
            best, best_theta = val, np.asarray(res.x)
    if best_theta is None:
        raise TrainingError.make(
            "all restarts failed to produce a PD kernel", column=column, restarts=cfg.restarts
        )
    return fit_output(X, y, Hyperparams.from_log(best_theta), nll=best)


def train(data: SampleSet, cfg: TrainConfig | None = None) -> GpModel:
    """
    Fit one GP per output column. The returned hyperparameters per column are the best
    (lowest negative log marginal likelihood) over ``cfg.restarts`` L-BFGS-B starts.
    """
    cfg = cfg or TrainConfig()
    if data.m_s < 2:
        raise TrainingError.make("need at least two training samples", m_s=data.m_s)
    X = data.X
    outs = ordered_map(
        lambda j: _train_column(X, data.Y[:, j], cfg, j),
        range(data.Y.shape[1]),
        workers=cfg.workers,
    )
    for name, o in zip(data.output_schema, outs, strict=True):
        logger.info("gp %s: best nll %.4g", name, o.nll)
    sc = data.scaler or identity_scaler(data.X.shape[1], data.Y.shape[1])
    return GpModel(data.input_schema, data.output_schema, X, tuple(outs), sc, cfg)


def predict(model: GpModel, x_star: FloatArray) -> tuple[FloatArray, FloatArray]:
    """
    Posterior mean and variance per output in physical units, via the cached Cholesky
    factor: mu = k*^T beta, sigma2 = k(x*, x*) - tau^T tau with tau = L \\ k*.
    Accepts a single input vector (returns shape (n_y,)) or a batch (n, n_x).
    """
    x = np.asarray(x_star, np.float64)
    single = x.ndim == 1
    Xs = (np.atleast_2d(x) - model.scaler.x_mean) / model.scaler.x_std
    mus = []
    vars_ = []
    for j, o in enumerate(model.outputs):
        Ks = gram(Xs, model.X, o.h.lambda_diag, o.h.sigma_f2)
        tau = sla.solve_triangular(o.L, Ks.T, lower=True)
        var = clamp_variance(o.h.sigma_f2 - np.sum(tau * tau, axis=0), scale=o.h.sigma_f2)
        sy = model.scaler.y_std[j]
        mus.append(Ks @ o.beta * sy + model.scaler.y_mean[j])
        vars_.append(var * sy * sy)
    mu = np.column_stack(mus)
    s2 = np.column_stack(vars_)
    return (mu[0], s2[0]) if single else (mu, s2)

