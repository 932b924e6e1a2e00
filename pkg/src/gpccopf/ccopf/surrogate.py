"""
Linear part of the hybrid surrogate: ordinary least squares on DC power-flow samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gpccopf.dataset import SampleSet
from gpccopf.errors import RankDeficientError

__all__ = ["LinearSurrogate", "fit_linear_surrogate"]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class LinearSurrogate:
    """y = A x + b. Constant DC outputs (voltages at 1 p.u.) are stored as exact rows."""

    input_schema: tuple[str, ...]
    output_schema: tuple[str, ...]
    A: FloatArray  # (n_y, n_x)
    b: FloatArray  # (n_y,)

    def predict(self, X: FloatArray) -> FloatArray:
        x = np.asarray(X, np.float64)
        return x @ self.A.T + self.b

    def variance(self, cov: FloatArray) -> FloatArray:
        """diag(A Sigma A^T)."""
        return np.einsum("ij,jk,ik->i", self.A, cov, self.A)


def fit_linear_surrogate(dc_set: SampleSet) -> LinearSurrogate:
    if dc_set.scaler is not None:
        raise ValueError("fit the linear surrogate on physical-unit data")
    X, Y = dc_set.X, dc_set.Y
    m_s, n_x = X.shape
    if m_s <= n_x:
        raise RankDeficientError.make(
            "need more samples than inputs for least squares", m_s=m_s, n_x=n_x
        )
    design = np.hstack([X, np.ones((m_s, 1))])
    coef, _, rank, _ = np.linalg.lstsq(design, Y, rcond=None)
    if rank < n_x + 1:
        raise RankDeficientError.make(
            "rank-deficient design matrix", rank=int(rank), columns=n_x + 1
        )
    A = np.ascontiguousarray(coef[:n_x].T)
    b = np.array(coef[n_x], np.float64)
    constant = np.ptp(Y, axis=0) == 0.0
    A[constant] = 0.0
    b[constant] = Y[0, constant]
    logger.info("linear surrogate: %d outputs, %d constant", Y.shape[1], int(constant.sum()))
    return LinearSurrogate(dc_set.input_schema, dc_set.output_schema, A, b)
