"""Mean and covariance propagation through hybrid nominal + GP dynamics.

The model is ``x+ = f(x, u) + B_d (d(z) + w)`` with ``z = [x; u]``, one
GP per column of ``B_d`` and ``w ~ N(0, diag(noise_var))``. Beliefs are
kept Gaussian at every step; covariances follow either the first-order
Taylor scheme (GP input uncertainty carried through the mean gradient) or
the mean-equivalent scheme (GP evaluated at the mean only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from gpmpc.errors import ConsistencyError, DimensionError, PropagationError
from gpmpc.gp.core import MvnDist
from gpmpc.gp.dispatch import predict, predict_with_gradient

METHODS = ("taylor", "meaneq")
PSD_TOL = 1e-8


class GaussianBelief(MvnDist):
    """State belief ``N(mean, cov)`` at one prediction step."""


@dataclass(frozen=True)
class JointBlocks:
    """Blocks of the joint covariance of ``[z; d + w]``."""

    sigma_z: NDArray
    sigma_zd: NDArray
    sigma_d: NDArray

    def assemble(self, noise_var: NDArray) -> NDArray:
        top = np.hstack([self.sigma_z, self.sigma_zd])
        bot = np.hstack([self.sigma_zd.T, self.sigma_d + np.diag(noise_var)])
        J = np.vstack([top, bot])
        return 0.5 * (J + J.T)


@dataclass(eq=False)
class HybridModel:
    """Nominal dynamics plus GP residuals routed through ``Bd``.

    Attributes
    ----------
    f : callable
        ``f(x, u) -> x_next``.
    Bd : ndarray, shape (n_x, n_d)
        Placement of GP outputs on the state.
    gps : list
        One ``GpModel`` or ``SparseGpModel`` per column of ``Bd``.
    n_u : int
        Input dimension.
    noise_var : ndarray, optional
        Diagonal of the process-noise covariance; defaults to each GP's
        observation-noise variance.
    gp_input_map : sequence of int, optional
        Indices into ``[x; u; context]`` that build the GP query, in query
        order (default: all of them, in that order).
    n_context : int
        Length of the per-step context vector (history features that are
        not part of ``z``).
    jac : callable, optional
        ``jac(x, u) -> (df/dx, df/du)``; central differences otherwise.
    """

    f: Callable[[NDArray, NDArray], NDArray]
    Bd: NDArray
    gps: list
    n_u: int
    noise_var: NDArray | None = None
    gp_input_map: Sequence[int] | None = None
    jac: Callable | None = None
    n_context: int = 0
    n_x: int = field(init=False)

    def __post_init__(self):
        self.Bd = np.atleast_2d(np.asarray(self.Bd, dtype=float))
        self.n_x = self.Bd.shape[0]
        n_d = self.Bd.shape[1]
        if len(self.gps) != n_d:
            raise DimensionError(f"Bd has {n_d} columns but {len(self.gps)} GP models were given")
        if self.noise_var is None:
            self.noise_var = np.array([g.hyperparams.noise_std**2 for g in self.gps], dtype=float)
        self.noise_var = np.asarray(self.noise_var, dtype=float).reshape(-1)
        if self.noise_var.size != n_d or np.any(self.noise_var < 0):
            raise ValueError("noise_var must hold one nonnegative entry per GP")
        n_ext = self.n_x + self.n_u + self.n_context
        if self.gp_input_map is None:
            self.gp_input_map = list(range(n_ext))
        self.gp_input_map = np.asarray(self.gp_input_map, dtype=int)
        if np.any(self.gp_input_map < 0) or np.any(self.gp_input_map >= n_ext):
            raise DimensionError("gp_input_map index out of range")

    @property
    def n_d(self) -> int:
        return self.Bd.shape[1]

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_u

    def gp_query(self, z: NDArray, context: NDArray | None = None) -> NDArray:
        ctx = np.zeros(0) if context is None else np.asarray(context, dtype=float).reshape(-1)
        if ctx.size != self.n_context:
            raise DimensionError(f"context has length {ctx.size}, model expects {self.n_context}")
        return np.concatenate([z, ctx])[self.gp_input_map]

    def gp_mean(self, x: NDArray, u: NDArray, context: NDArray | None = None) -> NDArray:
        """GP means only."""
        if self.n_d == 0:
            return np.zeros(0)
        q = self.gp_query(np.concatenate([x, u]), context)[None, :]
        return np.array([predict(gp, q, return_var=False)[0] for gp in self.gps])

    def gp_eval(self, x: NDArray, u: NDArray, context: NDArray | None = None, with_var: bool = True):
        """GP means, latent variances and mean Jacobian w.r.t. ``z``.

        Context features (history terms not part of ``z``) are treated as
        constants when differentiating.
        """
        z = np.concatenate([x, u])
        mu = np.zeros(self.n_d)
        var = np.zeros(self.n_d)
        grad = np.zeros((self.n_d, self.n_z))
        if self.n_d == 0:
            return mu, var, grad
        q = self.gp_query(z, context)
        in_z = self.gp_input_map < self.n_z
        for i, gp in enumerate(self.gps):
            m, v, g = predict_with_gradient(gp, q[None, :], with_var)
            mu[i] = m[0]
            if with_var:
                var[i] = v[0]
            np.add.at(grad[i], self.gp_input_map[in_z], g[0, in_z])
        return mu, var, grad

    def jacobians(self, x: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
        if self.jac is not None:
            A, B = self.jac(x, u)
            return np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float)).reshape(self.n_x, self.n_u)
        return finite_difference_jacobians(self.f, x, u)


def finite_difference_jacobians(f, x: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
    """Central differences with step ``1e-6 * (1 + |value|)`` per coordinate."""
    z = np.concatenate([x, u]).astype(float)
    n_x = x.size
    cols = []
    for i in range(z.size):
        hstep = 1e-6 * (1.0 + abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += hstep
        zm[i] -= hstep
        cols.append((np.asarray(f(zp[:n_x], zp[n_x:])) - np.asarray(f(zm[:n_x], zm[n_x:]))) / (2 * hstep))
    J = np.column_stack(cols)
    return J[:, :n_x], J[:, n_x:]


def psd_repair(S: NDArray, tol: float = PSD_TOL) -> NDArray:
    """Symmetrize and zero small negative eigenvalues; large ones raise."""
    S = 0.5 * (S + S.T)
    if S.size == 0:
        return S
    w, V = np.linalg.eigh(S)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -tol * scale:
        raise ConsistencyError(f"covariance has eigenvalue {w.min():.3e} below -{tol:g}")
    if w.min() < 0:
        S = (V * np.maximum(w, 0.0)) @ V.T
        S = 0.5 * (S + S.T)
    return S


def _input_cov(belief: GaussianBelief, n_u: int, sigma_u, sigma_xu) -> NDArray:
    n_x = belief.dim
    Su = np.zeros((n_u, n_u)) if sigma_u is None else np.atleast_2d(np.asarray(sigma_u, dtype=float))
    Sxu = np.zeros((n_x, n_u)) if sigma_xu is None else np.asarray(sigma_xu, dtype=float).reshape(n_x, n_u)
    Sz = np.block([[belief.cov, Sxu], [Sxu.T, Su]])
    Sz = 0.5 * (Sz + Sz.T)
    if Sz.size:
        w = np.linalg.eigvalsh(Sz)
        if w.min() < -PSD_TOL * max(1.0, np.abs(w).max()):
            raise ValueError("state-input covariance is not PSD")
    return Sz


def mean_step(model: HybridModel, belief: GaussianBelief, u_mean, context=None) -> NDArray:
    """Next mean ``f(mu_x, mu_u) + Bd mu_d(mu_x, mu_u)``."""
    x = belief.mean
    u = np.atleast_1d(np.asarray(u_mean, dtype=float))
    if u.size != model.n_u:
        raise DimensionError(f"input has length {u.size}, model expects {model.n_u}")
    nxt = np.asarray(model.f(x, u), dtype=float).reshape(-1)
    if model.n_d:
        nxt = nxt + model.Bd @ model.gp_mean(x, u, context)
    return nxt


def joint_blocks(model: HybridModel, belief: GaussianBelief, u_mean, sigma_u=None, sigma_xu=None,
                 method: str = "taylor", context=None) -> tuple[JointBlocks, NDArray]:
    """Joint covariance blocks of ``[z; d]`` and the nominal Jacobian ``[df/dx df/du]``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    x = belief.mean
    u = np.atleast_1d(np.asarray(u_mean, dtype=float))
    Sz = _input_cov(belief, model.n_u, sigma_u, sigma_xu)
    A, B = model.jacobians(x, u)
    grad_f = np.hstack([A, B])
    _, var, grad_mu = model.gp_eval(x, u, context)
    if method == "taylor":
        Szd = Sz @ grad_mu.T
        Sd = np.diag(var) + grad_mu @ Sz @ grad_mu.T
    else:
        Szd = np.zeros((model.n_z, model.n_d))
        Sd = np.diag(var)
    return JointBlocks(Sz, Szd, Sd), grad_f


def _cov_step(model, belief, u_mean, sigma_u, sigma_xu, method, context):
    blocks, grad_f = joint_blocks(model, belief, u_mean, sigma_u, sigma_xu, method, context)
    M = np.hstack([grad_f, model.Bd])
    return psd_repair(M @ blocks.assemble(model.noise_var) @ M.T)


def cov_step_taylor(model: HybridModel, belief: GaussianBelief, u_mean, sigma_u=None, sigma_xu=None,
                    context=None) -> NDArray:
    """Next covariance with the GP input uncertainty carried by the mean gradient."""
    return _cov_step(model, belief, u_mean, sigma_u, sigma_xu, "taylor", context)


def cov_step_meaneq(model: HybridModel, belief: GaussianBelief, u_mean, sigma_u=None, sigma_xu=None,
                    context=None) -> NDArray:
    """Next covariance with the GP evaluated at the mean and no state-GP cross terms."""
    return _cov_step(model, belief, u_mean, sigma_u, sigma_xu, "meaneq", context)


def cov_step_linear(A, B, model: HybridModel, belief: GaussianBelief, u_mean, sigma_u=None, sigma_xu=None,
                    method: str = "taylor", context=None) -> NDArray:
    """Covariance step for a nominal model known to be ``f = A x + B u``.

    Uses ``[A B Bd]`` directly instead of differentiating ``f``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(model.n_x, model.n_u)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    u = np.atleast_1d(np.asarray(u_mean, dtype=float))
    Sz = _input_cov(belief, model.n_u, sigma_u, sigma_xu)
    _, var, grad_mu = model.gp_eval(belief.mean, u, context)
    if method == "taylor":
        Szd = Sz @ grad_mu.T
        Sd = np.diag(var) + grad_mu @ Sz @ grad_mu.T
    else:
        Szd = np.zeros((model.n_z, model.n_d))
        Sd = np.diag(var)
    M = np.hstack([A, B, model.Bd])
    return psd_repair(M @ JointBlocks(Sz, Szd, Sd).assemble(model.noise_var) @ M.T)


def belief_rollout(model: HybridModel, belief0: GaussianBelief, controls, N: int, method: str = "taylor",
                   contexts=None) -> list[GaussianBelief]:
    """Propagate ``belief0`` for ``N`` steps.

    ``controls[k]`` is either an input vector or a tuple
    ``(u_mean, sigma_u, sigma_xu)``. Returns ``N + 1`` beliefs, the first
    being ``belief0`` itself.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if len(controls) < N:
        raise ValueError(f"need {N} controls, got {len(controls)}")
    step_cov = cov_step_taylor if method == "taylor" else cov_step_meaneq
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    beliefs = [belief0]
    for k in range(N):
        c = controls[k]
        if isinstance(c, tuple):
            u, Su, Sxu = (list(c) + [None, None])[:3]
        else:
            u, Su, Sxu = c, None, None
        ctx = None if contexts is None else contexts[k]
        b = beliefs[-1]
        try:
            mean = mean_step(model, b, u, ctx)
            cov = step_cov(model, b, u, Su, Sxu, ctx)
            beliefs.append(GaussianBelief(mean, cov))
        except (ValueError, ConsistencyError, DimensionError) as exc:
            raise PropagationError(str(exc), k) from exc
    return beliefs
