"""
Squared-exponential kernel with one length-scale per input (SEard), plus the Cholesky
helper every GP path goes through.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from gpccopf.constants import JITTER_MAX, JITTER_START
from gpccopf.errors import KernelNotPDError

__all__ = ["Hyperparams", "kernel_seard", "gram", "stable_cholesky"]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class Hyperparams:
    """
    Theta = [Lambda, sigma_f^2, sigma_z^2]. ``lambda_diag`` holds squared length-scales.
    """

    lambda_diag: FloatArray
    sigma_f2: float
    sigma_z2: float

    def __post_init__(self) -> None:
        if np.any(~(self.lambda_diag > 0)) or not (self.sigma_f2 > 0 and self.sigma_z2 > 0):
            raise ValueError("hyperparameters must be strictly positive")

    @property
    def n_x(self) -> int:
        return int(self.lambda_diag.size)

    def to_log(self) -> FloatArray:
        return np.log(np.r_[self.lambda_diag, self.sigma_f2, self.sigma_z2])

    @classmethod
    def from_log(cls, theta: FloatArray) -> Hyperparams:
        e = np.exp(np.asarray(theta, np.float64))
        return cls(lambda_diag=e[:-2].copy(), sigma_f2=float(e[-2]), sigma_z2=float(e[-1]))


def kernel_seard(x_p: FloatArray, x_q: FloatArray, h: Hyperparams) -> float:
    d = np.asarray(x_p, np.float64) - np.asarray(x_q, np.float64)
    return float(h.sigma_f2 * np.exp(-0.5 * np.sum(d * d / h.lambda_diag)))


def gram(A: FloatArray, B: FloatArray, lambda_diag: FloatArray, sigma_f2: float) -> FloatArray:
    """Cross-covariance matrix k(A_i, B_j) without noise."""
    s = np.sqrt(lambda_diag)
    A2 = np.atleast_2d(A) / s
    B2 = np.atleast_2d(B) / s
    return sigma_f2 * np.exp(-0.5 * cdist(A2, B2, "sqeuclidean"))


def stable_cholesky(K: FloatArray) -> tuple[FloatArray, float]:
    """
    Lower Cholesky factor of K, retrying with diagonal jitter 1e-10 * mean(diag K)
    escalated x10 up to 1e-4. Returns ``(L, jitter_added)``.
    """
    try:
        return sla.cholesky(K, lower=True, check_finite=True), 0.0
    except (sla.LinAlgError, ValueError):
        pass
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        raise KernelNotPDError.make("non-PD kernel matrix", mean_diag=scale)
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            L = sla.cholesky(K + jitter * np.eye(K.shape[0]), lower=True)
        except sla.LinAlgError:
            rel *= 10.0
            continue
        logger.debug("cholesky needed jitter %.1e", jitter)
        return L, jitter
    raise KernelNotPDError.make(
        "non-PD kernel matrix",
        size=int(K.shape[0]),
        hint="hyperparameters are probably degenerate (tiny noise and long length-scales)",
    )
