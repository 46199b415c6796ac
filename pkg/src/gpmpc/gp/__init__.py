"""Exact and sparse Gaussian process regression."""

from gpmpc.gp.core import (
    GpDataset,
    GpHyperparams,
    GpModel,
    MvnDist,
    fit_normalized,
    gp_fit,
    gp_mean_and_gradient_many,
    gp_mean_gradient,
    gp_predict,
    kernel_matrix,
    kernel_rbf,
    log_marginal_likelihood,
    mvn_condition,
    mvn_sample,
    optimize_hyperparams,
    predict_many,
)
from gpmpc.gp.sparse import SparseGpModel, fic_fit, fic_predict, select_inducing

__all__ = [
    "GpDataset",
    "GpHyperparams",
    "GpModel",
    "MvnDist",
    "SparseGpModel",
    "fic_fit",
    "fic_predict",
    "fit_normalized",
    "gp_fit",
    "gp_mean_and_gradient_many",
    "gp_mean_gradient",
    "gp_predict",
    "kernel_matrix",
    "kernel_rbf",
    "log_marginal_likelihood",
    "mvn_condition",
    "mvn_sample",
    "optimize_hyperparams",
    "predict_many",
    "select_inducing",
]
