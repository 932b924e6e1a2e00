"""
gpccopf.propagate
=================

Push a Gaussian input x* ~ N(mu, Sigma) through a trained GP.

* ``ta1``: mean at mu, variance sigma2(mu) + grad_mu^T Sigma grad_mu;
* ``ta2``: adds 1/2 tr(H_sigma2 Sigma);
* ``em``: exact first and second moments for the SEard kernel.

Outputs stay independent, so only the diagonal of the output covariance is returned.
Every function accepts a full model, a sparse model or a bare ``PosteriorSet``;
moment matching is restricted to full models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla

from gpccopf.constants import VAR_CLAMP_LOOSE
from gpccopf.errors import ConfigError
from gpccopf.gp import GpModel, GpPosterior, PosteriorSet, SparseGpModel, posterior_of
from gpccopf.gp.posterior import clamp_variance

__all__ = [
    "GaussianInput",
    "GaussianOutput",
    "Ta1Sensitivity",
    "Propagation",
    "ta1",
    "ta2",
    "em",
    "propagate",
    "ta1_sensitivity",
]

FloatArray = npt.NDArray[np.float64]
Model = GpModel | SparseGpModel | PosteriorSet

_SYM_TOL = 1e-12
_EIG_TOL = -1e-10


@dataclass(frozen=True, slots=True)
class GaussianInput:
    mean: FloatArray
    cov: FloatArray

    def __post_init__(self) -> None:
        n = self.mean.size
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise ValueError(f"cov must be {n}x{n} for a mean of length {n}")
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=_SYM_TOL):
            raise ValueError("input covariance is not symmetric")
        if n and float(np.linalg.eigvalsh(self.cov).min()) < _EIG_TOL:
            raise ValueError("input covariance is not positive semidefinite")

    @classmethod
    def point(cls, mean: FloatArray) -> GaussianInput:
        m = np.asarray(mean, np.float64)
        return cls(m, np.zeros((m.size, m.size)))


@dataclass(frozen=True, slots=True)
class GaussianOutput:
    mean: FloatArray
    var: FloatArray

    @property
    def std(self) -> FloatArray:
        return np.sqrt(self.var)


@dataclass(frozen=True, slots=True)
class Ta1Sensitivity:
    """TA1 moments plus their derivatives w.r.t. the input mean; rows are outputs."""

    out: GaussianOutput
    grad_mean: FloatArray  # d mean / d mu_x, also the TA1 gradient term
    grad_var: FloatArray  # d var / d mu_x at fixed Sigma


def _check_dim(post: PosteriorSet, gin: GaussianInput) -> None:
    n_x = len(post.input_schema)
    if gin.mean.size != n_x:
        raise ValueError(f"input has dimension {gin.mean.size}, model expects {n_x}")


# ─────────── Taylor ───────────


def ta1(model: Model, gin: GaussianInput) -> GaussianOutput:
    post = posterior_of(model)
    _check_dim(post, gin)
    means = np.empty(post.n_y)
    var = np.empty(post.n_y)
    for j, p in enumerate(post.outputs):
        mu, s2, dmu, _ = p.gradients(gin.mean)
        means[j] = mu
        var[j] = s2 + float(dmu @ gin.cov @ dmu)
    return GaussianOutput(means, var)


def ta2(model: Model, gin: GaussianInput) -> GaussianOutput:
    post = posterior_of(model)
    _check_dim(post, gin)
    first = ta1(post, gin)
    if not np.any(gin.cov):
        return first
    var = np.empty_like(first.var)
    for j, p in enumerate(post.outputs):
        _, H_var = p.hessians(gin.mean)
        raw = first.var[j] + 0.5 * float(np.sum(H_var * gin.cov))
        # the second-order term can overshoot below zero far from the data
        var[j] = max(raw, 0.0)
    return GaussianOutput(first.mean, var)


def ta1_sensitivity(model: Model, gin: GaussianInput) -> Ta1Sensitivity:
    """
    TA1 moments with d/d mu_x of both. The variance derivative w.r.t. Sigma is
    grad_mean[j] grad_mean[j]^T for output j.
    """
    post = posterior_of(model)
    _check_dim(post, gin)
    n_y, n_x = post.n_y, gin.mean.size
    means = np.empty(n_y)
    var = np.empty(n_y)
    gm = np.empty((n_y, n_x))
    gv = np.empty((n_y, n_x))
    for j, p in enumerate(post.outputs):
        mu, s2, dmu, dvar = p.gradients(gin.mean)
        means[j] = mu
        Sg = gin.cov @ dmu
        var[j] = s2 + float(dmu @ Sg)
        gm[j] = dmu
        if np.any(gin.cov):
            H_mu, _ = p.hessians(gin.mean)
            gv[j] = dvar + 2.0 * (H_mu @ Sg)
        else:
            gv[j] = dvar
    return Ta1Sensitivity(GaussianOutput(means, var), gm, gv)


# ─────────── exact moments ───────────


def _em_output(p: GpPosterior, mu: FloatArray, S: FloatArray) -> tuple[float, float]:
    Z = p.support
    lam = p.lam
    n_x = lam.size
    Lam = np.diag(lam)

    # q_i = sf2 |S Lam^-1 + I|^-1/2 exp(-1/2 (mu - z_i)^T (S + Lam)^-1 (mu - z_i))
    c1 = sla.cho_factor(S + Lam, lower=True)
    logdet1 = 2.0 * float(np.sum(np.log(np.diag(c1[0])))) - float(np.sum(np.log(lam)))
    D = mu - Z
    quad = np.sum(D * sla.cho_solve(c1, D.T).T, axis=1)
    q = p.sf2 * math.exp(-0.5 * logdet1) * np.exp(-0.5 * quad)

    # Q_ij = sf2^2 |2 S Lam^-1 + I|^-1/2 exp(-1/4 d_ij^T Lam^-1 d_ij)
    #        * exp(-1/2 (zbar_ij - mu)^T (S + Lam/2)^-1 (zbar_ij - mu))
    c2 = sla.cho_factor(S + 0.5 * Lam, lower=True)
    logdet2 = (
        2.0 * float(np.sum(np.log(np.diag(c2[0])))) - float(np.sum(np.log(0.5 * lam)))
    )
    scaled = Z / np.sqrt(lam)
    sq = np.sum(scaled * scaled, axis=1)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * scaled @ scaled.T, 0.0)
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :]) - mu
    flat = zbar.reshape(-1, n_x)
    quad2 = np.sum(flat * sla.cho_solve(c2, flat.T).T, axis=1).reshape(Z.shape[0], Z.shape[0])
    Q = p.sf2 * p.sf2 * math.exp(-0.5 * logdet2) * np.exp(-0.25 * dist - 0.5 * quad2)

    m0 = float(q @ p.w)
    C = Q - np.outer(q, q)
    spread = float(p.w @ C @ p.w)
    raw = p.sf2 - float(np.sum(p.P * Q)) + spread
    scale = max(p.sf2, abs(spread))
    var = float(clamp_variance(np.array([raw]), scale=scale, tol=VAR_CLAMP_LOOSE)[0])
    return p.offset + m0, var


def em(model: Model, gin: GaussianInput) -> GaussianOutput:
    """Exact moment matching for the SEard kernel with a zero prior mean."""
    if isinstance(model, SparseGpModel):
        raise ConfigError.make(
            "moment-matching propagation needs a full GP", hint="use ta1 with sparse models"
        )
    post = posterior_of(model)
    _check_dim(post, gin)
    S = 0.5 * (gin.cov + gin.cov.T)
    pairs = [_em_output(p, gin.mean, S) for p in post.outputs]
    return GaussianOutput(np.array([m for m, _ in pairs]), np.array([v for _, v in pairs]))


class Propagation(StrEnum):
    TA1 = "ta1"
    TA2 = "ta2"
    EM = "em"


_METHODS = {Propagation.TA1: ta1, Propagation.TA2: ta2, Propagation.EM: em}


def propagate(
    model: Model, gin: GaussianInput, method: Propagation | str
) -> GaussianOutput:
    try:
        fn = _METHODS[Propagation(method)]
    except ValueError:
        raise ConfigError.make(
            f"unknown propagation method {method!r}", choices=", ".join(_METHODS)
        ) from None
    return fn(model, gin)
