"""
Chance-constraint reformulation pieces: quantiles, the joint covariance of decisions and
uncertain injections under affine recourse, and margin tightening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy.stats import norm

from gpccopf.errors import EmptyMarginBandError, QuantileRangeError
from gpccopf.grid import GridCase

__all__ = [
    "UncertaintySpec",
    "Forecast",
    "quantile",
    "input_covariance",
    "reformulate_margins",
    "generator_margins",
]

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True)
class Forecast:
    """Mean load and renewable injections (p.u.), aligned with case.loads / res_units."""

    p_l: FloatArray
    p_rs: FloatArray

    @classmethod
    def from_case(cls, case: GridCase) -> Forecast:
        return cls(case.p_load_ref.copy(), case.p_res_ref.copy())

    @property
    def net_demand(self) -> float:
        return float(self.p_l.sum() - self.p_rs.sum())


@dataclass(frozen=True)
class UncertaintySpec:
    """
    Independent Gaussian fluctuations omega on every load and renewable unit, plus the
    acceptable violation probability per constraint family.
    """

    sigma_l: FloatArray
    sigma_rs: FloatArray
    eps_pg: float = 0.001
    eps_q: float = 0.025
    eps_v: float = 0.025
    eps_s: float = 0.025

    def __post_init__(self) -> None:
        if np.any(self.sigma_l < 0) or np.any(self.sigma_rs < 0):
            raise ValueError("fluctuation sigmas must be >= 0")
        for name in ("eps_pg", "eps_q", "eps_v", "eps_s"):
            eps = getattr(self, name)
            if not 0 < eps < 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5), got {eps}")

    @classmethod
    def from_fractions(
        cls,
        forecast: Forecast,
        *,
        sigma_load_frac: float = 0.15,
        sigma_res_frac: float = 0.30,
        eps_pg: float = 0.001,
        eps_q: float = 0.025,
        eps_v: float = 0.025,
        eps_s: float = 0.025,
    ) -> UncertaintySpec:
        return cls(
            sigma_l=sigma_load_frac * np.abs(forecast.p_l),
            sigma_rs=sigma_res_frac * np.abs(forecast.p_rs),
            eps_pg=eps_pg,
            eps_q=eps_q,
            eps_v=eps_v,
            eps_s=eps_s,
        )

    @cached_property
    def sigma(self) -> FloatArray:
        """Fluctuation std per uncertain injection: loads first, then renewables."""
        return np.concatenate([self.sigma_l, self.sigma_rs])

    @cached_property
    def signs(self) -> FloatArray:
        """+1 for loads, -1 for renewables: the sign with which omega enters the mismatch."""
        return np.concatenate([np.ones(self.sigma_l.size), -np.ones(self.sigma_rs.size)])

    @property
    def trace(self) -> float:
        """tr(Sigma_omega)."""
        return float(np.sum(self.sigma**2))


def quantile(eps: float) -> float:
    """Standard-normal quantile Phi^-1(1 - eps)."""
    if not 0.0 < eps < 1.0:
        raise QuantileRangeError.make("violation probability must lie in (0, 1)", eps=eps)
    return float(norm.isf(eps))


def input_covariance(
    alpha: FloatArray, uspec: UncertaintySpec, *, signs: FloatArray | None = None
) -> FloatArray:
    """
    Joint covariance of (recourse-adjusted generator set-points, omega):

        [[alpha alpha^T tr(Sigma_w),  alpha (s * sigma^2)^T],
         [(s * sigma^2) alpha^T,      diag(sigma^2)        ]]

    which is M Sigma_w M^T for M = [alpha s^T; I]. ``signs`` defaults to +1, the plain
    form where every omega adds to the mismatch.
    """
    a = np.asarray(alpha, np.float64).reshape(-1)
    var = uspec.sigma**2
    s = np.ones(var.size) if signs is None else np.asarray(signs, np.float64)
    M = np.vstack([np.outer(a, s), np.eye(var.size)])
    cov = (M * var) @ M.T
    return 0.5 * (cov + cov.T)


def reformulate_margins(
    mu: FloatArray,
    sigma2: FloatArray,
    bounds: tuple[FloatArray, FloatArray],
    r: float | FloatArray,
    *,
    names: tuple[str, ...] | None = None,
) -> tuple[FloatArray, FloatArray]:
    """
    Tightened band for the mean: y_min + r sigma <= mu <= y_max - r sigma.
    ``mu`` only fixes the shape; emptiness depends on the band and the margin alone.
    """
    s2 = np.asarray(sigma2, np.float64)
    if np.any(s2 < 0):
        raise ValueError("sigma2 must be >= 0")
    lo, hi = (np.asarray(b, np.float64) for b in bounds)
    margin = np.asarray(r, np.float64) * np.sqrt(s2)
    t_lo = lo + margin
    t_hi = hi - margin
    empty = np.flatnonzero(t_lo > t_hi)
    if empty.size:
        i = int(empty[0])
        label = names[i] if names is not None else str(i)
        raise EmptyMarginBandError.make(
            "margin exceeds feasible band",
            constraint=label,
            margin=float(np.broadcast_to(margin, np.shape(mu))[i]),
            band_width=float(hi[i] - lo[i]),
        )
    return t_lo, t_hi


def generator_margins(alpha: FloatArray, uspec: UncertaintySpec, r_pg: float) -> FloatArray:
    """lambda_pg = r_pg * alpha * sqrt(tr(Sigma_w)) per generator."""
    return r_pg * np.abs(np.asarray(alpha, np.float64)) * math.sqrt(uspec.trace)
