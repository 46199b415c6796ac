"""Uniform batch access to exact and sparse GP models."""

from __future__ import annotations

from gpmpc.gp.core import GpModel, gp_mean_and_gradient_many, predict_many
from gpmpc.gp.sparse import SparseGpModel, fic_mean_and_gradient_many, fic_predict_many


def predict(model, Xq, return_var: bool = True):
    if isinstance(model, SparseGpModel):
        return fic_predict_many(model, Xq, return_var)
    if isinstance(model, GpModel):
        return predict_many(model, Xq, return_var)
    raise TypeError(f"not a GP model: {type(model).__name__}")


def predict_with_gradient(model, Xq, return_var: bool = True):
    """Return ``(mean, var, grad)`` with ``grad`` shaped (m, d); ``var`` is ``None`` if not requested."""
    if isinstance(model, SparseGpModel):
        return fic_mean_and_gradient_many(model, Xq, return_var)
    if isinstance(model, GpModel):
        return gp_mean_and_gradient_many(model, Xq, return_var)
    raise TypeError(f"not a GP model: {type(model).__name__}")


def noise_var(model) -> float:
    return model.hyperparams.noise_std ** 2
