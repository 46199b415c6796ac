"""Linearized GP-MPC with a closed-form input update.

The prediction model is ``x+ = f(x, u) + Bd mu_d(x, u)`` (GP mean only).
Around a nominal trajectory the horizon is linearized into
``dX = H' dU`` with ``H' = (I - H_x)^-1 H_u`` and the quadratic cost is
minimized in closed form. Iterating the update until ``dU`` vanishes
gives the GP-NMPC solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import block_diag

from gpmpc.errors import DimensionError, SingularError
from gpmpc.propagation import GaussianBelief, HybridModel, mean_step

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 30


@dataclass(frozen=True)
class MpcWeights:
    """Stacked state weight ``Q`` (N n_x square) and input weight ``R`` (N n_u square)."""

    Q: NDArray
    R: NDArray
    N: int

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1] or M.shape[0] % self.N:
                raise DimensionError(f"{name} must be square with size a multiple of N, got {M.shape}")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def from_blocks(cls, Qk, Rk, N: int) -> "MpcWeights":
        Qk = np.atleast_2d(np.asarray(Qk, dtype=float))
        Rk = np.atleast_2d(np.asarray(Rk, dtype=float))
        return cls(np.kron(np.eye(N), Qk), np.kron(np.eye(N), Rk), N)

    @property
    def n_x(self) -> int:
        return self.Q.shape[0] // self.N

    @property
    def n_u(self) -> int:
        return self.R.shape[0] // self.N


@dataclass(frozen=True)
class LinearizedHorizon:
    """Per-step and stacked sensitivities of a horizon around ``(x_bar, u_bar)``.

    ``Hx_steps[b]`` and ``Hu_steps[b]`` are evaluated at step ``b``; the
    stacked ``H_x`` holds ``Hx_steps[b]`` in block ``(b, b-1)`` so that the
    stacked deviations satisfy ``dX = H_x dX + H_u dU``.
    """

    Hx_steps: list
    Hu_steps: list
    H_x: NDArray
    H_u: NDArray
    H_prime: NDArray
    x_bar: NDArray
    u_bar: NDArray
    x_ref: NDArray | None = None

    @property
    def N(self) -> int:
        return len(self.Hu_steps)


@dataclass
class NmpcDiagnostics:
    costs: list = field(default_factory=list)
    du_norms: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    u_bar: NDArray | None = None
    x_bar: NDArray | None = None


def linearize_step(model: HybridModel, x_bar, u_bar, context=None) -> tuple[NDArray, NDArray]:
    """``(H_x, H_u)``: nominal Jacobians plus the GP-mean Jacobian routed through ``Bd``."""
    x = np.asarray(x_bar, dtype=float).reshape(-1)
    u = np.atleast_1d(np.asarray(u_bar, dtype=float))
    A, B = model.jacobians(x, u)
    if model.n_d:
        _, _, grad = model.gp_eval(x, u, context, with_var=False)
        G = model.Bd @ grad
        A = A + G[:, : model.n_x]
        B = B + G[:, model.n_x :]
    return A, B


def _forward_substitute(Hx_steps, Hu_steps) -> NDArray:
    """Solve ``(I - H_x) H' = H_u`` row block by row block."""
    N = len(Hu_steps)
    n_x, n_u = Hu_steps[0].shape
    Hp = np.zeros((N * n_x, N * n_u))
    for b in range(N):
        rows = slice(b * n_x, (b + 1) * n_x)
        Hp[rows, b * n_u : (b + 1) * n_u] = Hu_steps[b]
        if b > 0:
            Hp[rows, : b * n_u] += Hx_steps[b] @ Hp[(b - 1) * n_x : b * n_x, : b * n_u]
    return Hp


def build_horizon(model: HybridModel, x_bar, u_bar, weights: MpcWeights | None = None, x_ref=None,
                  contexts=None) -> LinearizedHorizon:
    """Linearize every step and assemble the stacked horizon matrices.

    Parameters
    ----------
    x_bar : array, shape (N+1, n_x)
        Nominal state trajectory, starting at the current state.
    u_bar : array, shape (N, n_u)
        Nominal inputs.
    """
    x_bar = np.atleast_2d(np.asarray(x_bar, dtype=float))
    u_bar = np.asarray(u_bar, dtype=float)
    if u_bar.ndim == 1:
        u_bar = u_bar[:, None] if model.n_u == 1 else u_bar[None, :]
    N = u_bar.shape[0]
    if x_bar.shape[0] != N + 1:
        raise DimensionError(f"x_bar needs {N + 1} rows for {N} inputs, got {x_bar.shape[0]}")
    if weights is not None and weights.N != N:
        raise DimensionError(f"weights horizon {weights.N} != trajectory horizon {N}")
    Hx_steps, Hu_steps = [], []
    for b in range(N):
        ctx = None if contexts is None else contexts[b]
        Hx, Hu = linearize_step(model, x_bar[b], u_bar[b], ctx)
        Hx_steps.append(Hx)
        Hu_steps.append(Hu)
    n_x = model.n_x
    H_x = np.zeros((N * n_x, N * n_x))
    for b in range(1, N):
        H_x[b * n_x : (b + 1) * n_x, (b - 1) * n_x : b * n_x] = Hx_steps[b]
    H_u = block_diag(*Hu_steps)
    H_prime = _forward_substitute(Hx_steps, Hu_steps)
    return LinearizedHorizon(Hx_steps, Hu_steps, H_x, H_u, H_prime, x_bar, u_bar,
                             None if x_ref is None else np.asarray(x_ref, dtype=float))


def _tracking_error(h: LinearizedHorizon, x_ref) -> NDArray:
    x_ref = h.x_ref if x_ref is None else np.asarray(x_ref, dtype=float)
    if x_ref is None:
        raise ValueError("reference trajectory required")
    return (np.asarray(x_ref).reshape(h.N, -1) - h.x_bar[1:]).reshape(-1)


def solve_delta_u(h: LinearizedHorizon, weights: MpcWeights, x_tilde=None, u_ref=None) -> NDArray:
    """Closed-form minimizer of the linearized quadratic cost.

    ``du = (H'^T Q H' + R)^-1 (H'^T Q x_tilde - R (u_bar - u_ref))``; with
    ``u_ref = 0`` this penalizes the absolute input. ``x_tilde`` defaults to
    ``x_ref - x_bar[1:]`` (stacked).
    """
    if x_tilde is None:
        x_tilde = _tracking_error(h, None)
    x_tilde = np.asarray(x_tilde, dtype=float).reshape(-1)
    u_dev = h.u_bar.reshape(-1) if u_ref is None else h.u_bar.reshape(-1) - np.asarray(u_ref, dtype=float).reshape(-1)
    Hp, Q, R = h.H_prime, weights.Q, weights.R
    HtQ = Hp.T @ Q
    normal = HtQ @ Hp + R
    if np.linalg.cond(normal) > 1e14:
        raise SingularError("normal matrix H'^T Q H' + R is singular")
    return np.linalg.solve(normal, HtQ @ x_tilde - R @ u_dev)


def linearized_cost(h: LinearizedHorizon, weights: MpcWeights, du, x_tilde=None, u_ref=None) -> float:
    """Quadratic cost of the linearized horizon at ``u_bar + du``."""
    x_tilde = _tracking_error(h, None) if x_tilde is None else np.asarray(x_tilde, dtype=float).reshape(-1)
    e = x_tilde - h.H_prime @ du
    u = h.u_bar.reshape(-1) + du
    if u_ref is not None:
        u = u - np.asarray(u_ref, dtype=float).reshape(-1)
    return float(e @ weights.Q @ e + u @ weights.R @ u)


def stationarity_residual(h: LinearizedHorizon, weights: MpcWeights, du, x_tilde=None, u_ref=None) -> NDArray:
    """Gradient of :func:`linearized_cost` with respect to ``du``."""
    x_tilde = _tracking_error(h, None) if x_tilde is None else np.asarray(x_tilde, dtype=float).reshape(-1)
    Hp, Q, R = h.H_prime, weights.Q, weights.R
    u_dev = h.u_bar.reshape(-1) if u_ref is None else h.u_bar.reshape(-1) - np.asarray(u_ref, dtype=float).reshape(-1)
    return 2.0 * ((Hp.T @ Q @ Hp + R) @ du + R @ u_dev - Hp.T @ Q @ x_tilde)


def rollout_means(model: HybridModel, x0, u_seq, contexts=None) -> NDArray:
    """Mean trajectory (N+1 rows) of the GP-mean prediction model."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    traj = [x]
    zero = np.zeros((model.n_x, model.n_x))
    for k, u in enumerate(u_seq):
        ctx = None if contexts is None else contexts[k]
        x = mean_step(model, GaussianBelief(x, zero), u, ctx)
        traj.append(x)
    return np.array(traj)


def gp_nmpc_step(
    model: HybridModel,
    x_now,
    x_ref,
    weights: MpcWeights,
    u_init,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    u_ref=None,
    context_fn: Callable | None = None,
    error_fn: Callable | None = None,
) -> tuple[NDArray, NmpcDiagnostics]:
    """Iterate the closed-form update ``u_bar += du`` until ``max|du| <= tol``.

    Parameters
    ----------
    x_ref : array, shape (N, n_x)
        Desired states for steps 1..N.
    u_init : array, shape (N, n_u)
        Initial input sequence (warm start).
    u_ref : array, optional
        Input reference; ``R`` then penalizes ``u - u_ref``.
    context_fn : callable, optional
        ``context_fn(u_bar) -> list`` of per-step GP context features.
    error_fn : callable, optional
        ``error_fn(x_ref, x_bar) -> x_tilde`` (rows), e.g. to wrap angles.

    Returns
    -------
    (u_applied, diagnostics)
        ``u_applied`` is the first input of the converged (or best) sequence.
    """
    x_ref = np.asarray(x_ref, dtype=float).reshape(weights.N, model.n_x)
    u = np.array(u_init, dtype=float).reshape(weights.N, model.n_u)
    diag = NmpcDiagnostics()
    err = error_fn or (lambda r, xb: r - xb)

    def evaluate(u_seq):
        ctx = context_fn(u_seq) if context_fn is not None else None
        xb = rollout_means(model, x_now, u_seq, ctx)
        xt = np.asarray(err(x_ref, xb[1:]), dtype=float).reshape(-1)
        ud = u_seq.reshape(-1) if u_ref is None else u_seq.reshape(-1) - np.asarray(u_ref, dtype=float).reshape(-1)
        cost = float(xt @ weights.Q @ xt + ud @ weights.R @ ud)
        return xb, xt, cost, ctx

    best_u, best_cost = u.copy(), np.inf
    for _ in range(max_iter):
        xb, xt, cost, ctx = evaluate(u)
        diag.costs.append(cost)
        if cost < best_cost:
            best_u, best_cost = u.copy(), cost
        h = build_horizon(model, xb, u, weights, contexts=ctx)
        du = solve_delta_u(h, weights, xt, u_ref)
        u = u + du.reshape(weights.N, model.n_u)
        diag.iterations += 1
        step = float(np.max(np.abs(du)))
        diag.du_norms.append(step)
        if step <= tol:
            diag.converged = True
            break
    xb, _, cost, _ = evaluate(u)
    diag.costs.append(cost)
    if not diag.converged and best_cost < cost:
        u = best_u
        xb, _, _, _ = evaluate(u)
    diag.u_bar = u
    diag.x_bar = xb
    return u[0].copy(), diag


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def inv_norm_cdf(p: float) -> float:
    """Standard normal quantile by bisection on the erf-based CDF."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -inv_norm_cdf(1.0 - p) if p > 1e-300 else -40.0
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def chance_tighten_halfspace(h, b: float, sigma, p_def: float) -> float:
    """Offset ``b'`` such that ``h^T mu <= b'`` implies ``P(h^T x <= b) >= p_def``."""
    if not (0.5 <= p_def < 1.0):
        raise ValueError(f"p_def must be in [0.5, 1), got {p_def}")
    h = np.asarray(h, dtype=float).reshape(-1)
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    q = float(h @ S @ h)
    if q < -1e-10:
        raise ValueError(f"h^T Sigma h is negative ({q:.3e})")
    return float(b - inv_norm_cdf(p_def) * math.sqrt(max(q, 0.0)))
