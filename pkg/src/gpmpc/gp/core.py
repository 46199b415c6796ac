"""Exact Gaussian process regression with a squared-exponential (RBF) kernel.

The prior mean is fixed at zero. Callers that want a non-zero constant
mean pass ``offset`` to :func:`gp_fit`; it is added back on prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from gpmpc.errors import ConsistencyError, DimensionError, FitError, OptimizationError, SingularError

JITTER_START = 1e-10
JITTER_MAX = 1e-4
VAR_CLAMP_TOL = 1e-10


@dataclass(frozen=True)
class GpHyperparams:
    """Signal std, ARD length scales and observation-noise std."""

    signal_std: float
    length_scales: NDArray
    noise_std: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_std", float(self.signal_std))
        object.__setattr__(self, "noise_std", float(self.noise_std))
        if not np.isfinite(self.signal_std) or self.signal_std <= 0:
            raise ValueError(f"signal_std must be > 0, got {self.signal_std}")
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if ls.ndim != 1 or ls.size == 0 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError(f"length_scales must be a non-empty vector of positive values, got {ls}")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    @classmethod
    def isotropic(cls, signal_std: float, length_scale: float, dim: int, noise_std: float = 0.0):
        return cls(signal_std, np.full(dim, float(length_scale)), noise_std)

    def to_log(self) -> NDArray:
        """Pack as ``[log sf, log l_1..l_d, log sn]`` (``log sn`` is -inf when sn == 0)."""
        with np.errstate(divide="ignore"):
            return np.concatenate([[np.log(self.signal_std)], np.log(self.length_scales), [np.log(self.noise_std)]])

    @classmethod
    def from_log(cls, theta: ArrayLike) -> "GpHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[0]), np.exp(theta[1:-1]), np.exp(theta[-1]))


@dataclass(frozen=True)
class GpDataset:
    """Training inputs ``X`` (n x d) and scalar targets ``y`` (n,)."""

    X: NDArray
    y: NDArray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise DimensionError(f"inputs must be a 2-D array, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"{X.shape[0]} input rows but {y.shape[0]} targets")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        X = X.copy()
        y = y.copy()
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "GpDataset":
        return GpDataset(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class MvnDist:
    """Multivariate normal with mean ``mean`` and covariance ``cov``."""

    mean: NDArray
    cov: NDArray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_psd(self, rtol: float = 1e-10) -> bool:
        if self.dim == 0:
            return True
        eig = np.linalg.eigvalsh(self.cov)
        return bool(eig.min() >= -rtol * max(np.linalg.norm(self.cov, 2), 1e-300))


@dataclass(frozen=True, eq=False)
class GpModel:
    """Fitted exact GP posterior.

    ``chol`` is the lower Cholesky factor of ``K + (noise_std**2 + jitter) I``
    and ``alpha`` solves that system against the (offset-removed) targets.
    An empty dataset (``n == 0``) represents the prior.
    """

    hyperparams: GpHyperparams
    dataset: GpDataset | None
    chol: NDArray
    alpha: NDArray
    jitter: float = 0.0
    offset: float = 0.0

    @property
    def n(self) -> int:
        return 0 if self.dataset is None else self.dataset.n

    @property
    def dim(self) -> int:
        return self.hyperparams.dim

    @property
    def X(self) -> NDArray:
        if self.dataset is None:
            return np.zeros((0, self.dim))
        return self.dataset.X

    @classmethod
    def prior(cls, h: GpHyperparams, offset: float = 0.0) -> "GpModel":
        """Model with no training data: mean ``offset``, variance ``sf**2`` everywhere."""
        return cls(h, None, np.zeros((0, 0)), np.zeros(0), 0.0, float(offset))


def _as_point(x, dim: int) -> NDArray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size != dim:
        raise DimensionError(f"expected a point of dimension {dim}, got shape {x.shape}")
    return x


def _as_points(A, dim: int) -> NDArray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None] if dim == 1 else A[None, :]
    if A.ndim != 2 or A.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {A.shape}")
    return A


def kernel_rbf(xi: ArrayLike, xj: ArrayLike, h: GpHyperparams) -> float:
    """Squared-exponential covariance between two points."""
    xi = _as_point(xi, h.dim)
    xj = _as_point(xj, h.dim)
    r = (xi - xj) / h.length_scales
    return float(h.signal_std**2 * np.exp(-0.5 * np.dot(r, r)))


def sq_dist(A: NDArray, B: NDArray, length_scales: NDArray) -> NDArray:
    """Scaled squared distances ``sum_d (a_d - b_d)^2 / l_d^2``."""
    return cdist(A / length_scales, B / length_scales, "sqeuclidean")


def kernel_matrix(A: ArrayLike, B: ArrayLike, h: GpHyperparams) -> NDArray:
    """Covariance matrix with entry ``(i, j) = kernel_rbf(A[i], B[j], h)``."""
    A = _as_points(A, h.dim)
    B = _as_points(B, h.dim)
    return h.signal_std**2 * np.exp(-0.5 * sq_dist(A, B, h.length_scales))


def jittered_cholesky(K: NDArray, base_diag: float) -> tuple[NDArray, float]:
    """Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * base_diag`` and grows by 10x up to
    ``1e-4 * base_diag``. Returns ``(L, jitter)``.
    """
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = base_diag if base_diag > 0 else 1.0
    rel = JITTER_START
    jitter = 0.0
    eye = np.eye(K.shape[0])
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise FitError("covariance matrix is not positive definite", jitter)


def _has_duplicate_rows(X: NDArray) -> bool:
    return np.unique(X, axis=0).shape[0] < X.shape[0]


def gp_fit(data: GpDataset, h: GpHyperparams, offset: float = 0.0) -> GpModel:
    """Factorize ``K + sn^2 I`` and precompute ``alpha = (K + sn^2 I)^-1 (y - offset)``.

    Raises
    ------
    DimensionError
        If the dataset dimension differs from the number of length scales.
    FitError
        If the matrix stays indefinite after the jitter ladder, or if the
        inputs contain exact duplicates while ``noise_std == 0``.
    """
    if data.dim != h.dim:
        raise DimensionError(f"dataset has dimension {data.dim}, hyperparameters {h.dim}")
    if h.noise_std == 0.0 and _has_duplicate_rows(data.X):
        raise FitError("duplicate inputs with zero noise give a singular covariance", 0.0)
    K = kernel_matrix(data.X, data.X, h)
    K[np.diag_indices_from(K)] += h.noise_std**2
    L, jitter = jittered_cholesky(K, float(np.mean(np.diag(K))))
    alpha = cho_solve((L, True), data.y - offset)
    return GpModel(h, data, L, alpha, jitter, float(offset))


def fit_normalized(data: GpDataset, h: GpHyperparams) -> GpModel:
    """Fit with the target mean removed and stored as the model offset."""
    return gp_fit(data, h, offset=float(np.mean(data.y)))


def _clamp_var(var: NDArray, prior: float) -> NDArray:
    tol = VAR_CLAMP_TOL * max(1.0, prior)
    if np.any(var < -tol):
        raise ConsistencyError(f"negative posterior variance {var.min():.3e}")
    return np.maximum(var, 0.0)


def predict_many(model: GpModel, Xq: ArrayLike, return_var: bool = True):
    """Vectorized posterior mean (and variance) at each row of ``Xq``."""
    h = model.hyperparams
    Xq = _as_points(Xq, h.dim)
    prior = h.signal_std**2
    if model.n == 0:
        mean = np.full(Xq.shape[0], model.offset)
        return (mean, np.full(Xq.shape[0], prior)) if return_var else mean
    Ks = kernel_matrix(model.X, Xq, h)
    mean = Ks.T @ model.alpha + model.offset
    if not return_var:
        return mean
    v = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    var = prior - np.sum(v * v, axis=0)
    return mean, _clamp_var(var, prior)


def gp_predict(model: GpModel, xq: ArrayLike) -> tuple[float, float]:
    """Posterior mean and latent variance at a single query point."""
    xq = _as_point(xq, model.dim)
    mean, var = predict_many(model, xq[None, :])
    return float(mean[0]), float(var[0])


def gp_mean_gradient(model: GpModel, xq: ArrayLike) -> NDArray:
    """Gradient of the posterior mean with respect to the query point."""
    h = model.hyperparams
    xq = _as_point(xq, h.dim)
    if model.n == 0:
        return np.zeros(h.dim)
    k = kernel_matrix(model.X, xq[None, :], h)[:, 0]
    w = model.alpha * k
    return (w @ (model.X - xq)) / h.length_scales**2


def gp_mean_and_gradient_many(model: GpModel, Xq: ArrayLike, return_var: bool = True):
    """Mean, variance and mean-gradient rows for a batch of queries.

    With ``return_var=False`` the variance slot is ``None``.
    """
    h = model.hyperparams
    Xq = _as_points(Xq, h.dim)
    if model.n == 0:
        m = Xq.shape[0]
        return np.full(m, model.offset), (np.full(m, h.signal_std**2) if return_var else None), np.zeros((m, h.dim))
    Ks = kernel_matrix(model.X, Xq, h)  # n x m
    W = Ks * model.alpha[:, None]
    mean = np.sum(W, axis=0) + model.offset
    grad = (W.T @ model.X - np.sum(W, axis=0)[:, None] * Xq) / h.length_scales**2
    if not return_var:
        return mean, None, grad
    v = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    var = _clamp_var(h.signal_std**2 - np.sum(v * v, axis=0), h.signal_std**2)
    return mean, var, grad


def log_marginal_likelihood(data: GpDataset, h: GpHyperparams) -> tuple[float, NDArray]:
    """Log marginal likelihood of the zero-mean GP and its gradient.

    The gradient is taken with respect to ``[log sf, log l_1..l_d, log sn]``.
    When ``noise_std == 0`` the last entry is exactly zero.
    """
    model = gp_fit(data, h)
    L, alpha = model.chol, model.alpha
    n = data.n
    value = -0.5 * data.y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)

    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv  # dL/dK = W / 2
    Kf = kernel_matrix(data.X, data.X, h)
    grad = np.empty(h.dim + 2)
    grad[0] = 0.5 * np.sum(W * (2.0 * Kf))
    for d in range(h.dim):
        diff = data.X[:, d][:, None] - data.X[:, d][None, :]
        dK = Kf * diff**2 / h.length_scales[d] ** 2
        grad[1 + d] = 0.5 * np.sum(W * dK)
    grad[-1] = 0.5 * np.trace(W) * 2.0 * h.noise_std**2
    return float(value), grad


def _lml_or_none(data, theta, fixed_noise):
    h = GpHyperparams.from_log(theta) if fixed_noise is None else GpHyperparams(
        np.exp(theta[0]), np.exp(theta[1:]), fixed_noise
    )
    try:
        val, grad = log_marginal_likelihood(data, h)
    except FitError:
        return None, None
    if fixed_noise is not None:
        grad = grad[:-1]
    return val, grad


def optimize_hyperparams(
    data: GpDataset,
    init: GpHyperparams,
    budget: int = 100,
    restarts: int = 4,
    seed: int = 0,
    log_bounds: tuple[float, float] = (-12.0, 8.0),
) -> GpHyperparams:
    """Maximize the log marginal likelihood by multi-start gradient ascent.

    Optimization runs in log-parameter space with a backtracking line
    search. The first start is ``init`` itself; further starts perturb it.
    If ``init.noise_std == 0`` the noise stays fixed at zero.

    Parameters
    ----------
    budget : int
        Gradient iterations per restart.
    restarts : int
        Total number of starts, including ``init``.

    Returns
    -------
    GpHyperparams
        Best hyperparameters found; never worse than ``init`` when ``init``
        itself can be fitted.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    fixed_noise = 0.0 if init.noise_std == 0.0 else None
    theta0 = init.to_log() if fixed_noise is None else init.to_log()[:-1]
    lo, hi = log_bounds
    rng = np.random.default_rng(seed)

    best_theta, best_val = None, -np.inf
    for r in range(max(1, restarts)):
        theta = theta0.copy() if r == 0 else np.clip(theta0 + rng.normal(0.0, 1.5, theta0.size), lo, hi)
        val, grad = _lml_or_none(data, theta, fixed_noise)
        if val is None:
            continue
        step = 0.1 / max(1.0, np.linalg.norm(grad))
        for _ in range(budget):
            gnorm = np.linalg.norm(grad)
            if gnorm < 1e-8:
                break
            accepted = False
            while step > 1e-12:
                cand = np.clip(theta + step * grad, lo, hi)
                cval, cgrad = _lml_or_none(data, cand, fixed_noise)
                # Armijo condition on the projected step
                if cval is not None and cval >= val + 1e-4 * grad @ (cand - theta):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            moved = np.linalg.norm(cand - theta)
            theta, val, grad = cand, cval, cgrad
            step *= 2.0
            if moved < 1e-10:
                break
        if val > best_val:
            best_theta, best_val = theta, val

    if best_theta is None:
        raise OptimizationError("no restart produced a factorizable covariance")
    if fixed_noise is None:
        return GpHyperparams.from_log(best_theta)
    return GpHyperparams(np.exp(best_theta[0]), np.exp(best_theta[1:]), 0.0)


def mvn_condition(joint: MvnDist, observed_idx, observed_vals: ArrayLike) -> MvnDist:
    """Condition a joint normal on observing some of its coordinates.

    Returns the distribution of the remaining coordinates (in index order).
    """
    idx = np.asarray(observed_idx, dtype=int).reshape(-1)
    vals = np.asarray(observed_vals, dtype=float).reshape(-1)
    M = joint.dim
    if idx.size != vals.size:
        raise DimensionError("observed indices and values differ in length")
    if np.unique(idx).size != idx.size or np.any(idx < 0) or np.any(idx >= M):
        raise ValueError("observed indices must be distinct and within range")
    rest = np.setdiff1d(np.arange(M), idx)
    S_oo = joint.cov[np.ix_(idx, idx)]
    S_ro = joint.cov[np.ix_(rest, idx)]
    S_rr = joint.cov[np.ix_(rest, rest)]
    try:
        L = np.linalg.cholesky(S_oo)
    except np.linalg.LinAlgError as exc:
        raise SingularError("observed covariance block is singular") from exc
    resid = vals - joint.mean[idx]
    mean = joint.mean[rest] + S_ro @ cho_solve((L, True), resid)
    cov = S_rr - S_ro @ cho_solve((L, True), S_ro.T)
    return MvnDist(mean, 0.5 * (cov + cov.T))


def psd_factor(cov: NDArray, rtol: float = 1e-10) -> NDArray:
    """Matrix ``F`` with ``F @ F.T == cov`` for a PSD ``cov`` (eigen-based)."""
    cov = np.atleast_2d(cov)
    if cov.size == 0:
        return cov
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    norm = max(np.abs(w).max(), 1e-300)
    if w.min() < -rtol * norm:
        raise ValueError(f"covariance is not PSD (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.maximum(w, 0.0))


def mvn_sample(dist: MvnDist, count: int, seed: int) -> NDArray:
    """Draw ``count`` samples (rows) deterministically from ``seed``."""
    F = psd_factor(dist.cov)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, dist.dim))
    return dist.mean + z @ F.T
