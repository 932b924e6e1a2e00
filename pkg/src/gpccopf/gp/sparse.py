"""
Sparse variational GP regression with inducing inputs.

Per output column, the inducing inputs Z and the hyperparameters are found jointly by
maximising the collapsed variational lower bound. With L L^T = K_mm,
A = L^-1 K_mn / sigma, B = A A^T + I = L_B L_B^T and c = L_B^-1 A y / sigma:

    mu(x*)     = k_m*^T K_mm^-1 mu_m
    sigma2(x*) = k** - k_m*^T K_mm^-1 k_m* + k_m*^T K_mm^-1 A_m K_mm^-1 k_m*

with mu_m = L L_B^-T c and A_m = L B^-1 L^T. Predictions cost O(m_m^2) per point
instead of O(m_s^2).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla
from scipy.cluster.vq import kmeans2
from scipy.optimize import minimize

from gpccopf.constants import VAR_CLAMP_LOOSE
from gpccopf.dataset import SampleSet, Scaler
from gpccopf.errors import KernelNotPDError, TrainingError
from gpccopf.gp.kernel import Hyperparams, gram, stable_cholesky
from gpccopf.gp.model import (
    TrainConfig,
    hyperparam_bounds,
    identity_scaler,
    initial_log_points,
)
from gpccopf.gp.posterior import GpPosterior, PosteriorSet, clamp_variance
from gpccopf.utils.misc_utils import ordered_map

__all__ = [
    "SparseOutput",
    "SparseGpModel",
    "elbo",
    "elbo_grad",
    "fit_sparse_output",
    "train_sparse",
    "predict_sparse",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

_LOG_2PI = math.log(2.0 * math.pi)
_FAILED = 1e25


@dataclass@dataclass(frozen=True, slots=True)
class _Factors:
    L: FloatArray
    LB: FloatArray
    A: FloatArray
    c: FloatArray
    jitter: float
    K_mm: FloatArray
    K_mn: FloatArray


def _factorize(X: FloatArray, y: FloatArray, h: Hyperparams, Z: FloatArray) -> _Factors:
    sigma = math.sqrt(h.sigma_z2)
    K_mm = gram(Z, Z, h.lambda_diag, h.sigma_f2)
    K_mn = gram(Z, X, h.lambda_diag, h.sigma_f2)
    L, jitter = stable_cholesky(0.5 * (K_mm + K_mm.T))
    A = sla.solve_triangular(L, K_mn, lower=True) / sigma
    B = A @ A.T + np.eye(Z.shape[0])
    LB = sla.cholesky(B, lower=True)
    c = sla.solve_triangular(LB, A @ y, lower=True) / sigma
    return _Factors(L=L, LB=LB, A=A, c=c, jitter=jitter, K_mm=K_mm, K_mn=K_mn)


def _bound(y: FloatArray, h: Hyperparams, f: _Factors) -> float:
    n = y.size
    trace_gap = n * h.sigma_f2 / h.sigma_z2 - float(np.sum(f.A * f.A))
    return (
        -0.5 * n * (_LOG_2PI + math.log(h.sigma_z2))
        - float(np.sum(np.log(np.diag(f.LB))))
        - 0.5 * (float(y @ y) / h.sigma_z2 - float(f.c @ f.c))
        - 0.5 * trace_gap
    )


def elbo(X: FloatArray, y: FloatArray, h: Hyperparams, Z: FloatArray) -> float:
    """Collapsed variational lower bound on log p(y | X, theta) for inducing inputs Z."""
    X = np.atleast_2d(np.asarray(X, np.float64))
    y = np.asarray(y, np.float64).ravel()
    return _bound(y, h, _factorize(X, y, h, np.atleast_2d(np.asarray(Z, np.float64))))


def _bound_grad(
    X: FloatArray, y: FloatArray, h: Hyperparams, Z: FloatArray, f: _Factors
) -> tuple[FloatArray, FloatArray]:
    """
    Gradient of the bound through dF/dK_mm, dF/dK_mn and dF/dsigma_z^2. With
    S = K_mm + K_mn K_nm / sigma_z^2 and v = S^-1 K_mn y the matrix partials are

        dF/dK_mm = (K_mm^-1 - S^-1) / 2 - v v^T / (2 s^2) - K_mm^-1 P K_mm^-1 / (2 s)
        dF/dK_mn = (K_mm^-1 - S^-1) K_mn / s + v y^T / s^2 - v v^T K_mn / s^3

    where s = sigma_z^2 and P = K_mn K_nm. The jitter added to K_mm is held fixed.
    """
    n = y.size
    m = Z.shape[0]
    s = h.sigma_z2
    K_mm, K_mn = f.K_mm, f.K_mn
    L_inv = sla.solve_triangular(f.L, np.eye(m), lower=True)
    LB_inv = sla.solve_triangular(f.LB, np.eye(m), lower=True)
    K_inv = L_inv.T @ L_inv
    S_inv = L_inv.T @ (LB_inv.T @ LB_inv) @ L_inv
    u = K_mn @ y
    v = S_inv @ u
    P = K_mn @ K_mn.T
    KiP = K_inv @ P

    G_mm = 0.5 * (K_inv - S_inv) - 0.5 * np.outer(v, v) / s**2 - 0.5 * (KiP @ K_inv) / s
    G_mm = 0.5 * (G_mm + G_mm.T)
    G_mn = (K_inv - S_inv) @ K_mn / s + np.outer(v, y) / s**2 - np.outer(v, v @ K_mn) / s**3

    M_mm = G_mm * K_mm
    M_mn = G_mn * K_mn
    d_mm = Z[:, None, :] - Z[None, :, :]
    d_mn = Z[:, None, :] - X[None, :, :]
    lam = h.lambda_diag

    grad = np.empty(h.n_x + 2)
    # dK/dlog(lambda_d) = K * (z_d - x_d)^2 / (2 lambda_d)
    grad[: h.n_x] = (
        np.einsum("ij,ijd->d", M_mm, d_mm * d_mm) + np.einsum("ij,ijd->d", M_mn, d_mn * d_mn)
    ) / (2.0 * lam)
    grad[h.n_x] = float(np.sum(M_mm) + np.sum(M_mn)) - 0.5 * n * h.sigma_f2 / s
    dF_ds = (
        -0.5 * n / s
        + 0.5 * float(np.sum(S_inv * P)) / s**2
        + 0.5 * float(y @ y) / s**2
        + 0.5 * float(v @ P @ v) / s**4
        - float(u @ v) / s**3
        + 0.5 * n * h.sigma_f2 / s**2
        - 0.5 * float(np.trace(KiP)) / s**2
    )
    grad[h.n_x + 1] = s * dF_ds

    # each inducing input enters one row and one column of K_mm
    grad_Z = -(2.0 * np.einsum("ij,ijd->id", M_mm, d_mm) + np.einsum("ij,ijd->id", M_mn, d_mn))
    return grad, grad_Z / lam


def elbo_grad(
    X: FloatArray, y: FloatArray, h: Hyperparams, Z: FloatArray
) -> tuple[float, FloatArray, FloatArray]:
    """
    The collapsed bound with its gradient w.r.t. the log-hyperparameters
    [log lambda_1..n_x, log sigma_f^2, log sigma_z^2] and w.r.t. Z (same shape as Z).
    """
    X = np.atleast_2d(np.asarray(X, np.float64))
    y = np.asarray(y, np.float64).ravel()
    Z = np.atleast_2d(np.asarray(Z, np.float64))
    f = _factorize(X, y, h, Z)
    grad, grad_Z = _bound_grad(X, y, h, Z, f)
    return _bound(y, h, f), grad, grad_Z


# ─────────── model ───────────


@dataclass(frozen=True, slots=True)
class SparseOutput:
    h: Hyperparams
    Z: FloatArray  # standardized inducing inputs (m_m, n_x)
    L: FloatArray
    LB: FloatArray
    c: FloatArray
    jitter: float = 0.0
    bound: float = float("nan")

    @property
    def m_m(self) -> int:
        return int(self.Z.shape[0])

    @property
    def weights(self) -> FloatArray:
        """K_mm^-1 mu_m."""
        tmp = sla.solve_triangular(self.LB, self.c, lower=True, trans="T")
        return sla.solve_triangular(self.L, tmp, lower=True, trans="T")

    @property
    def mu_m(self) -> FloatArray:
        return self.L @ sla.solve_triangular(self.LB, self.c, lower=True, trans="T")

    @property
    def A_m(self) -> FloatArray:
        LB_inv_Lt = sla.solve_triangular(self.LB, self.L.T, lower=True)
        return LB_inv_Lt.T @ LB_inv_Lt

    def precision(self) -> FloatArray:
        """P = K_mm^-1 - K_mm^-1 A_m K_mm^-1 = L^-T (I - B^-1) L^-1."""
        m = self.m_m
        L_inv = sla.solve_triangular(self.L, np.eye(m), lower=True)
        LB_inv = sla.solve_triangular(self.LB, np.eye(m), lower=True)
        inner = np.eye(m) - LB_inv.T @ LB_inv
        P = L_inv.T @ inner @ L_inv
        return 0.5 * (P + P.T)


def fit_sparse_output(
    X: FloatArray, y: FloatArray, h: Hyperparams, Z: FloatArray, *, bound: float = math.nan
) -> SparseOutput:
    f = _factorize(X, y, h, Z)
    return SparseOutput(
        h=h, Z=np.array(Z, np.float64), L=f.L, LB=f.LB, c=f.c, jitter=f.jitter, bound=bound
    )


@dataclass(frozen=True)
class SparseGpModel:
    input_schema: tuple[str, ...]
    output_schema: tuple[str, ...]
    outputs: tuple[SparseOutput, ...]
    scaler: Scaler
    m_s: int
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def n_x(self) -> int:
        return int(self.outputs[0].Z.shape[1])

    @property
    def n_y(self) -> int:
        return len(self.outputs)

    @property
    def m_m(self) -> int:
        return self.outputs[0].m_m

    @cached_property
    def posterior(self) -> PosteriorSet:
        sc = self.scaler
        outs = []
        for j, o in enumerate(self.outputs):
            sy = float(sc.y_std[j])
            outs.append(
                GpPosterior(
                    support=o.Z * sc.x_std + sc.x_mean,
                    lam=o.h.lambda_diag * sc.x_std**2,
                    sf2=o.h.sigma_f2 * sy * sy,
                    w=o.weights / sy,
                    P=o.precision() / (sy * sy),
                    offset=float(sc.y_mean[j]),
                )
            )
        return PosteriorSet(self.input_schema, self.output_schema, tuple(outs))

    @classmethod
    def from_hyperparams(
        cls,
        data: SampleSet,
        hyperparams: list[Hyperparams] | tuple[Hyperparams, ...],
        Z: FloatArray,
    ) -> SparseGpModel:
        """Fixed hyperparameters and inducing inputs (standardized units), no optimisation."""
        sc = data.scaler or identity_scaler(data.X.shape[1], data.Y.shape[1])
        outs = tuple(
            fit_sparse_output(data.X, data.Y[:, j], h, Z) for j, h in enumerate(hyperparams)
        )
        return cls(data.input_schema, data.output_schema, outs, sc, data.m_s)


# ─────────── training ───────────


def _initial_inducing(X: FloatArray, m_m: int, seed: int, column: int) -> FloatArray:
    if m_m == X.shape[0]:
        return X.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, column, 1]))
    centers, _ = kmeans2(X, m_m, minit="++", seed=rng)
    return np.asarray(centers, np.float64)


def _unpack(
    theta: FloatArray, n_x: int, Z0: FloatArray, pinned: bool
) -> tuple[Hyperparams, FloatArray]:
    h = Hyperparams.from_log(theta[: n_x + 2])
    Z = Z0 if pinned else theta[n_x + 2 :].reshape(Z0.shape)
    return h, Z


def _neg_bound(
    theta: FloatArray, X: FloatArray, y: FloatArray, Z0: FloatArray, pinned: bool
) -> tuple[float, FloatArray]:
    try:
        h, Z = _unpack(theta, X.shape[1], Z0, pinned)
        f = _factorize(X, y, h, Z)
        value = _bound(y, h, f)
        grad, grad_Z = _bound_grad(X, y, h, Z, f)
    except (KernelNotPDError, sla.LinAlgError, ValueError):
        return _FAILED, np.zeros_like(theta)
    full = grad if pinned else np.r_[grad, grad_Z.ravel()]
    if not (np.isfinite(value) and np.all(np.isfinite(full))):
        return _FAILED, np.zeros_like(theta)
    return -value, -full


def _train_sparse_column(
    X: FloatArray, y: FloatArray, m_m: int, cfg: TrainConfig, column: int
) -> SparseOutput:
    n_x = X.shape[1]
    Z0 = _initial_inducing(X, m_m, cfg.seed, column)
    bounds = hyperparam_bounds(n_x)
    if not cfg.pin_inducing:
        bounds = bounds + [(None, None)] * Z0.size
    best_theta: FloatArray | None = None
    best = math.inf
    for start in initial_log_points(n_x, cfg, column):
        theta0 = start if cfg.pin_inducing else np.r_[start, Z0.ravel()]
        res = minimize(
            _neg_bound,
            theta0,
            args=(X, y, Z0, cfg.pin_inducing),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_iters},
        )
        val = float(res.fun)
        if val < _FAILED and val < best:
            best, best_theta = val, np.asarray(res.x)
    if best_theta is None:
        raise TrainingError.make(
            "all restarts failed to produce a PD kernel", column=column, m_m=m_m
        )
    h, Z = _unpack(best_theta, n_x, Z0, cfg.pin_inducing)
    return fit_sparse_output(X, y, h, Z, bound=-best)


def train_sparse(data: SampleSet, m_m: int, cfg: TrainConfig | None = None) -> SparseGpModel:
    """
    Fit one sparse GP per output. Inducing inputs start at k-means++ centres of the
    training inputs (or at the inputs themselves when m_m == m_s) and are optimised
    with the hyperparameters unless ``cfg.pin_inducing`` is set.
    """
    cfg = cfg or TrainConfig()
    if not 1 <= m_m <= data.m_s:
        raise TrainingError.make(
            "inducing count must satisfy 1 <= m_m <= m_s", m_m=m_m, m_s=data.m_s
        )
    X = data.X
    outs = ordered_map(
        lambda j: _train_sparse_column(X, data.Y[:, j], m_m, cfg, j),
        range(data.Y.shape[1]),
        workers=cfg.workers,
    )
    for name, o in zip(data.output_schema, outs, strict=True):
        logger.info("sparse gp %s (m_m=%d): best bound %.4g", name, m_m, o.bound)
    sc = data.scaler or identity_scaler(X.shape[1], data.Y.shape[1])
    return SparseGpModel(data.input_schema, data.output_schema, tuple(outs), sc, data.m_s, cfg)


def predict_sparse(model: SparseGpModel, x_star: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Same contract as ``gp.model.predict``: single vector or (n, n_x) batch."""
    x = np.asarray(x_star, np.float64)
    single = x.ndim == 1
    Xs = (np.atleast_2d(x) - model.scaler.x_mean) / model.scaler.x_std
    mus = []
    vars_ = []
    for j, o in enumerate(model.outputs):
        K_ms = gram(o.Z, Xs, o.h.lambda_diag, o.h.sigma_f2)
        tmp1 = sla.solve_triangular(o.L, K_ms, lower=True)
        tmp2 = sla.solve_triangular(o.LB, tmp1, lower=True)
        raw = o.h.sigma_f2 + np.sum(tmp2 * tmp2, axis=0) - np.sum(tmp1 * tmp1, axis=0)
        var = clamp_variance(raw, scale=o.h.sigma_f2, tol=VAR_CLAMP_LOOSE)
        sy = model.scaler.y_std[j]
        mus.append((tmp2.T @ o.c) * sy + model.scaler.y_mean[j])
        vars_.append(var * sy * sy)
    mu = np.column_stack(mus)
    s2 = np.column_stack(vars_)
    return (mu[0], s2[0]) if single else (mu, s2)
