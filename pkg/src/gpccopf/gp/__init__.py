"""
gpccopf.gp
==========

Unified import surface for the GP regression layer.
"""

from __future__ import annotations

from gpccopf.gp.kernel import Hyperparams, gram, kernel_seard, stable_cholesky
from gpccopf.gp.model import (
    GpModel,
    OutputGp,
    TrainConfig,
    log_marginal_likelihood,
    predict,
    train,
)
from gpccopf.gp.posterior import GpPosterior, PosteriorSet, clamp_variance
from gpccopf.gp.sparse import SparseGpModel, elbo, elbo_grad, predict_sparse, train_sparse

Surrogate = GpModel | SparseGpModel

__all__ = [
    "Hyperparams",
    "gram",
    "kernel_seard",
    "stable_cholesky",
    "GpModel",
    "OutputGp",
    "TrainConfig",
    "log_marginal_likelihood",
    "predict",
    "train",
    "GpPosterior",
    "PosteriorSet",
    "clamp_variance",
    "SparseGpModel",
    "elbo",
    "elbo_grad",
    "predict_sparse",
    "train_sparse",
    "Surrogate",
    "posterior_of",
]


def posterior_of(model: GpModel | SparseGpModel | PosteriorSet) -> PosteriorSet:
    return model if isinstance(model, PosteriorSet) else model.posterior
