"""Disturbance datasets from closed-loop logs and GP training helpers.

Query layout for pose disturbances: ``(x, y, theta, v_prev, w_prev, v, w,
v_last, w_last)``, i.e. pose, previous realized velocity, current command
and previous command. For FBL-state disturbances the pose is replaced by
``(z1, z2)`` and the commands by the scalar FBL input.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from gpmpc.errors import InsufficientDataError
from gpmpc.gp.core import GpDataset, GpHyperparams, GpModel, fit_normalized, optimize_hyperparams
from gpmpc.pathfollow.fbl import fbl_matrices
from gpmpc.pathfollow.robot import unicycle_f, wrap_angle

POSE_QUERY_DIM = 9
FBL_QUERY_DIM = 6


def pose_velocities(poses, T: float) -> NDArray:
    """Realized ``(v, w)`` between consecutive poses, from pose differences only.

    Row ``j`` is the velocity over the interval from pose ``j`` to ``j + 1``;
    ``v`` is the displacement projected on the heading at the start.
    """
    P = np.asarray(poses, dtype=float)
    d = np.diff(P, axis=0)
    v = (d[:, 0] * np.cos(P[:-1, 2]) + d[:, 1] * np.sin(P[:-1, 2])) / T
    w = wrap_angle(d[:, 2]) / T
    return np.column_stack([v, np.atleast_1d(w)])


def collect_disturbance_data(poses, commands, T: float) -> tuple[GpDataset, GpDataset, GpDataset]:
    """Pose-disturbance datasets ``(D_x, D_y, D_theta)``.

    Parameters
    ----------
    poses : array, shape (K+1, 3)
        Observed poses.
    commands : array, shape (K, 2)
        Applied ``(v, w)`` commands; ``commands[j]`` moves pose ``j`` to ``j + 1``.

    Targets are ``pose[j+1] - f(pose[j], u[j])`` with the heading component
    wrapped, for ``j = 1 .. K-1`` (each query needs one step of history).
    """
    P = np.asarray(poses, dtype=float)
    U = np.asarray(commands, dtype=float).reshape(-1, 2)
    if P.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 poses, got {P.shape[0]}")
    if U.shape[0] < P.shape[0] - 1:
        raise ValueError("need one command per transition")
    K = P.shape[0] - 1
    vel = pose_velocities(P, T)
    rows, targets = [], []
    for j in range(1, K):
        rows.append(np.concatenate([P[j], vel[j - 1], U[j], U[j - 1]]))
        g = P[j + 1] - unicycle_f(P[j], U[j], T)
        g[2] = wrap_angle(g[2])
        targets.append(g)
    X = np.array(rows)
    G = np.array(targets)
    return tuple(GpDataset(X, G[:, i]) for i in range(3))


def collect_fbl_data(z, u, velocities, T: float) -> tuple[GpDataset, GpDataset]:
    """FBL-state disturbance datasets ``(D_z1, D_z2)``.

    Parameters
    ----------
    z : array, shape (K+1, 2)
        Measured FBL states.
    u : array, shape (K,)
        FBL inputs; ``u[j]`` acts between ``z[j]`` and ``z[j+1]``.
    velocities : array, shape (K, 2)
        Realized velocities per interval (see :func:`pose_velocities`).
    """
    Z = np.asarray(z, dtype=float).reshape(-1, 2)
    U = np.asarray(u, dtype=float).reshape(-1)
    V = np.asarray(velocities, dtype=float).reshape(-1, 2)
    if Z.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 states, got {Z.shape[0]}")
    F, G = fbl_matrices(T)
    rows, targets = [], []
    for j in range(1, Z.shape[0] - 1):
        rows.append(np.concatenate([Z[j], V[j - 1], [U[j], U[j - 1]]]))
        targets.append(Z[j + 1] - (F @ Z[j] + G[:, 0] * U[j]))
    X = np.array(rows)
    D = np.array(targets)
    return GpDataset(X, D[:, 0]), GpDataset(X, D[:, 1])


def default_hyperparams(data: GpDataset, noise_ratio: float = 0.1) -> GpHyperparams:
    """Data-scaled starting point: signal std of the targets, length scale per input spread."""
    sf = max(float(np.std(data.y)), 1e-6)
    ls = np.maximum(np.std(data.X, axis=0), 1e-3)
    return GpHyperparams(sf, ls, noise_ratio * sf)


def train_gp(data: GpDataset, budget: int = 60, seed: int = 0, max_points: int | None = 300,
             restarts: int = 2) -> GpModel:
    """Optimize hyperparameters then fit with the target mean as offset.

    Datasets longer than ``max_points`` are thinned to evenly spaced rows.
    """
    if max_points is not None and data.n > max_points:
        idx = np.unique(np.linspace(0, data.n - 1, max_points).round().astype(int))
        data = data.subset(idx)
    centered = GpDataset(data.X, data.y - np.mean(data.y))
    h = optimize_hyperparams(centered, default_hyperparams(centered), budget=budget, restarts=restarts, seed=seed)
    return fit_normalized(data, h)
