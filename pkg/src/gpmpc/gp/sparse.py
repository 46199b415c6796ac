"""Fully independent conditional (FIC) sparse GP and inducing-point selection.

With inducing inputs ``U`` the training covariance is replaced by
``Q_ff + diag(K_ff - Q_ff)`` where ``Q_ff = K_fu K_uu^-1 K_uf``. Test
points receive the same diagonal correction, so predictions reduce to the
exact GP when ``U`` equals the training inputs and the noise is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve, solve_triangular

from gpmpc.errors import DimensionError, FitError
from gpmpc.gp.core import (
    GpDataset,
    GpHyperparams,
    _as_point,
    _as_points,
    _clamp_var,
    jittered_cholesky,
    kernel_matrix,
)

STRATEGIES = ("subset-random", "kmeans-like", "greedy-variance")
DEFAULT_INDUCING = 20
# floor on the FIC diagonal correction, relative to sf^2, for sn == 0 data
LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SparseGpModel:
    """Fitted FIC posterior.

    Attributes
    ----------
    inducing : ndarray, shape (m, d)
        Inducing inputs.
    chol_uu : ndarray
        Lower Cholesky factor of ``K_uu`` (plus jitter).
    chol_a : ndarray
        Lower Cholesky factor of ``I + V diag(1/lam) V^T`` with ``V = chol_uu^-1 K_uf``.
    beta : ndarray, shape (m,)
        Weights so that the predictive mean is ``K_*u @ beta + offset``.
    """

    hyperparams: GpHyperparams
    inducing: NDArray
    chol_uu: NDArray
    chol_a: NDArray
    beta: NDArray
    n_train: int
    jitter: float = 0.0
    offset: float = 0.0
    dataset: GpDataset | None = None  # kept for persistence

    @property
    def dim(self) -> int:
        return self.hyperparams.dim

    @property
    def n_inducing(self) -> int:
        return self.inducing.shape[0]


def fic_fit(data: GpDataset, h: GpHyperparams, inducing: ArrayLike, offset: float = 0.0) -> SparseGpModel:
    """Build the FIC posterior for ``data`` summarized by ``inducing`` inputs."""
    if data.dim != h.dim:
        raise DimensionError(f"dataset has dimension {data.dim}, hyperparameters {h.dim}")
    U = _as_points(inducing, h.dim).copy()
    m = U.shape[0]
    if m < 1 or m > data.n:
        raise ValueError(f"need 1 <= inducing count <= n ({data.n}), got {m}")
    if not np.all(np.isfinite(U)):
        raise ValueError("inducing inputs must be finite")

    sf2 = h.signal_std**2
    Kuu = kernel_matrix(U, U, h)
    try:
        Lu, jitter = jittered_cholesky(Kuu, sf2)
    except FitError as exc:
        raise FitError("inducing covariance is singular", exc.jitter) from exc
    Kuf = kernel_matrix(U, data.X, h)
    V = solve_triangular(Lu, Kuf, lower=True, check_finite=False)
    lam = sf2 - np.sum(V * V, axis=0) + h.noise_std**2
    lam = np.maximum(lam, LAMBDA_FLOOR * sf2)

    Vl = V / lam
    A = np.eye(m) + Vl @ V.T
    La = np.linalg.cholesky(A)
    r = data.y - offset
    c = cho_solve((La, True), V @ (r / lam))
    beta = solve_triangular(Lu.T, c, lower=False, check_finite=False)
    U.setflags(write=False)
    return SparseGpModel(h, U, Lu, La, beta, data.n, jitter, float(offset), data)


def fic_predict_many(model: SparseGpModel, Xq: ArrayLike, return_var: bool = True):
    """Vectorized FIC mean (and latent variance) at each row of ``Xq``."""
    h = model.hyperparams
    Xq = _as_points(Xq, h.dim)
    Kus = kernel_matrix(model.inducing, Xq, h)
    mean = Kus.T @ model.beta + model.offset
    if not return_var:
        return mean
    W = solve_triangular(model.chol_uu, Kus, lower=True, check_finite=False)
    Z = solve_triangular(model.chol_a, W, lower=True, check_finite=False)
    sf2 = h.signal_std**2
    var = sf2 - np.sum(W * W, axis=0) + np.sum(Z * Z, axis=0)
    return mean, _clamp_var(var, sf2)


def fic_predict(model: SparseGpModel, xq: ArrayLike) -> tuple[float, float]:
    """FIC posterior mean and latent variance at one query point."""
    xq = _as_point(xq, model.dim)
    mean, var = fic_predict_many(model, xq[None, :])
    return float(mean[0]), float(var[0])


def fic_mean_and_gradient_many(model: SparseGpModel, Xq: ArrayLike, return_var: bool = True):
    """Mean, latent variance (``None`` unless requested) and mean gradient rows."""
    h = model.hyperparams
    Xq = _as_points(Xq, h.dim)
    var = fic_predict_many(model, Xq)[1] if return_var else None
    Kus = kernel_matrix(model.inducing, Xq, h)
    W = Kus * model.beta[:, None]
    mean = np.sum(W, axis=0) + model.offset
    grad = (W.T @ model.inducing - np.sum(W, axis=0)[:, None] * Xq) / h.length_scales**2
    return mean, var, grad


def _kmeans_like(X: NDArray, m: int, rng: np.random.Generator, iters: int = 50) -> NDArray:
    n = X.shape[0]
    # k-means++ seeding
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
        else:
            centers.append(X[rng.choice(n, p=d2 / total)])
        d2 = np.minimum(d2, np.sum((X - centers[-1]) ** 2, axis=1))
    C = np.array(centers)
    for _ in range(iters):
        labels = np.argmin(((X[:, None, :] - C[None, :, :]) ** 2).sum(-1), axis=1)
        newC = C.copy()
        for j in range(m):
            members = X[labels == j]
            if members.shape[0]:
                newC[j] = members.mean(axis=0)
        if np.allclose(newC, C, rtol=0, atol=1e-12):
            break
        C = newC
    return C


def greedy_variance_indices(X: NDArray, m: int, h: GpHyperparams) -> list[int]:
    """Indices chosen one at a time, each maximizing the current posterior variance.

    The posterior conditions noise-free on the points already chosen; this
    is a pivoted (incomplete) Cholesky factorization of ``K_ff``.
    """
    n = X.shape[0]
    diag = np.full(n, h.signal_std**2)
    Lrows = np.zeros((m, n))
    chosen: list[int] = []
    for j in range(m):
        resid = diag.copy()
        resid[chosen] = -np.inf
        p = int(np.argmax(resid))
        chosen.append(p)
        piv = diag[p]
        if piv <= 0:
            # remaining points are already explained exactly; keep deterministic order
            Lrows[j] = 0.0
            continue
        kp = kernel_matrix(X, X[p][None, :], h)[:, 0]
        Lrows[j] = (kp - Lrows[:j].T @ Lrows[:j, p]) / np.sqrt(piv)
        diag = np.maximum(diag - Lrows[j] ** 2, 0.0)
    return chosen


def select_inducing(
    data: GpDataset,
    count: int = DEFAULT_INDUCING,
    strategy: str = "greedy-variance",
    seed: int = 0,
    h: GpHyperparams | None = None,
) -> NDArray:
    """Choose ``count`` inducing inputs from ``data``.

    Parameters
    ----------
    strategy : {"subset-random", "kmeans-like", "greedy-variance"}
        ``subset-random`` draws training inputs without replacement (kept in
        dataset order); ``kmeans-like`` returns Lloyd centroids seeded by
        k-means++; ``greedy-variance`` repeatedly takes the training input
        with the largest posterior variance given the points chosen so far
        (requires ``h``).
    """
    if count < 1 or count > data.n:
        raise ValueError(f"inducing count must be in [1, {data.n}], got {count}")
    rng = np.random.default_rng(seed)
    if strategy == "subset-random":
        idx = np.sort(rng.choice(data.n, size=count, replace=False))
        return data.X[idx].copy()
    if strategy == "kmeans-like":
        return _kmeans_like(np.asarray(data.X), count, rng)
    if strategy == "greedy-variance":
        if h is None:
            raise ValueError("greedy-variance selection needs hyperparameters")
        return data.X[greedy_variance_indices(np.asarray(data.X), count, h)].copy()
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def fic_from_exact(model, count: int = DEFAULT_INDUCING, strategy: str = "greedy-variance",
                   seed: int = 0) -> SparseGpModel:
    """FIC approximation of a fitted exact GP (same data, hyperparameters and offset)."""
    data = model.dataset
    if data is None:
        raise ValueError("cannot sparsify a prior model")
    U = select_inducing(data, min(count, data.n), strategy, seed, model.hyperparams)
    return fic_fit(data, model.hyperparams, U, offset=model.offset)
