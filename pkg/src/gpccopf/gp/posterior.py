"""
Physical-units view of a trained GP, shared by the full and sparse models.

Both models predict, per output, with the same algebra over a support set Z:

    mu(x)     = offset + k(x)^T w
    sigma2(x) = sigma_f^2 - k(x)^T P k(x)

For the full GP, Z is the training inputs, w = (K + sigma_z^2 I)^-1 y and P is that
inverse. For the sparse GP, Z is the inducing set, and w and P come from the variational
posterior. Input and output standardization is folded into the kernel here
(lambda * s_x^2, sigma_f^2 * s_y^2), so everything downstream works in physical units.
Gradients and Hessians are closed forms of the SEard kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from gpccopf.constants import VAR_CLAMP, VAR_CLAMP_LOOSE
from gpccopf.errors import KernelNotPDError
from gpccopf.gp.kernel import gram

__all__ = ["GpPosterior", "PosteriorSet", "clamp_variance"]

FloatArray = npt.NDArray[np.float64]


def clamp_variance(
    var: FloatArray, *, scale: float = 1.0, tol: float = VAR_CLAMP
) -> FloatArray:
    """Round tiny negative variances to 0; anything below -tol * scale is a bug."""
    v = np.asarray(var, np.float64)
    if np.any(v < -tol * max(scale, 1.0)):
        raise KernelNotPDError.make(
            "negative predictive variance", min_variance=float(np.min(v))
        )
    return np.maximum(v, 0.0)


@dataclass(frozen=True, slots=True)
class GpPosterior:
    support: FloatArray  # (n_s, n_x)
    lam: FloatArray  # (n_x,)
    sf2: float
    w: FloatArray  # (n_s,)
    P: FloatArray  # (n_s, n_s)
    offset: float = 0.0

    @property
    def n_x(self) -> int:
        return int(self.lam.size)

    def k(self, x: FloatArray) -> FloatArray:
        return gram(np.atleast_2d(x), self.support, self.lam, self.sf2)[0]

    def mean_var(self, X: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Batch prediction; X is (n, n_x)."""
        Ks = gram(np.atleast_2d(X), self.support, self.lam, self.sf2)
        mu = self.offset + Ks @ self.w
        var = self.sf2 - np.einsum("ij,jk,ik->i", Ks, self.P, Ks)
        return mu, clamp_variance(var, scale=self.sf2, tol=VAR_CLAMP_LOOSE)

    # ---- derivatives at a single point ----------------------------------------

    def _terms(self, x: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        x = np.asarray(x, np.float64)
        k = self.k(x)
        U = (x - self.support) / self.lam  # rows u_i = Lambda^-1 (x - z_i)
        J = -k[:, None] * U  # rows are grad k_i
        return k, U, J

    def gradients(self, x: FloatArray) -> tuple[float, float, FloatArray, FloatArray]:
        """(mu, sigma2, grad mu, grad sigma2) at x."""
        k, _, J = self._terms(x)
        Pk = self.P @ k
        mu = self.offset + float(k @ self.w)
        raw = np.array([self.sf2 - k @ Pk])
        var = float(clamp_variance(raw, scale=self.sf2, tol=VAR_CLAMP_LOOSE)[0])
        return mu, var, J.T @ self.w, -2.0 * (J.T @ Pk)

    def hessians(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        """(Hessian of mu, Hessian of sigma2) at x."""
        k, U, J = self._terms(x)
        Pk = self.P @ k
        inv_lam = np.diag(1.0 / self.lam)

        def weighted(c: FloatArray) -> FloatArray:
            # sum_i c_i * d2 k_i, with d2 k_i = k_i (u_i u_i^T - Lambda^-1)
            ck = c * k
            return (U.T * ck) @ U - float(ck.sum()) * inv_lam

        H_mu = weighted(self.w)
        H_var = -2.0 * (weighted(Pk) + J.T @ self.P @ J)
        return H_mu, 0.5 * (H_var + H_var.T)


@dataclass(frozen=True, slots=True)
class PosteriorSet:
    input_schema: tuple[str, ...]
    output_schema: tuple[str, ...]
    outputs: tuple[GpPosterior, ...]

    @property
    def n_y(self) -> int:
        return len(self.outputs)

    def predict(self, X: FloatArray) -> tuple[FloatArray, FloatArray]:
        """(mu, sigma2) with shape (n, n_y) for inputs of shape (n, n_x)."""
        pairs = [p.mean_var(X) for p in self.outputs]
        return np.column_stack([m for m, _ in pairs]), np.column_stack([v for _, v in pairs])
