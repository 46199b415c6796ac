"""Feedback-linearized MPC for lateral path following.

With ``z = (e_L, v sin e_H)`` the lateral error obeys a double integrator
``z+ = F z + G u`` and the steering rate is recovered from the FBL input
``u`` as ``w = u / (v cos e_H)`` plus a path-curvature feedforward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from gpmpc.errors import DimensionError, FblValidityError, SingularError
from gpmpc.gp.dispatch import predict

VALIDITY_MARGIN = 1e-6


def fbl_matrices(T: float) -> tuple[NDArray, NDArray]:
    """Exact zero-order-hold discretization ``F = [[1, T], [0, 1]]``, ``G = [[T^2/2], [T]]``."""
    if T <= 0:
        raise ValueError("T must be positive")
    return np.array([[1.0, T], [0.0, 1.0]]), np.array([[0.5 * T * T], [T]])


def fbl_batch_matrices(T: float, N: int) -> tuple[NDArray, NDArray]:
    """Stacked ``L = [F; F^2; ...; F^N]`` and block lower-triangular ``M`` with blocks ``F^(i-j) G``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    F, G = fbl_matrices(T)
    powers = [np.eye(2)]
    for _ in range(N):
        powers.append(F @ powers[-1])
    L = np.vstack(powers[1:])
    M = np.zeros((2 * N, N))
    for i in range(N):
        for j in range(i + 1):
            M[2 * i : 2 * i + 2, j] = (powers[i - j] @ G)[:, 0]
    return L, M


@dataclass(frozen=True, eq=False)
class FblmpcGains:
    """Horizon matrices and the constant factors of the closed-form update."""

    L: NDArray
    M: NDArray
    Q: NDArray
    R: NDArray
    K: NDArray  # (M^T Q M + R)^-1
    MtQ: NDArray
    T: float
    N: int


def _normal_inverse(M, Q, R) -> NDArray:
    normal = M.T @ Q @ M + R
    if np.linalg.cond(normal) > 1e14:
        raise SingularError("M^T Q M + R is singular")
    return np.linalg.inv(normal)


def fblmpc_precompute(T: float, N: int, Q, R) -> FblmpcGains:
    """Build ``L``, ``M`` and cache ``(M^T Q M + R)^-1`` and ``M^T Q``."""
    L, M = fbl_batch_matrices(T, N)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q.shape != (2 * N, 2 * N) or R.shape != (N, N):
        raise DimensionError(f"Q must be {2 * N}x{2 * N} and R {N}x{N}")
    return FblmpcGains(L, M, Q, R, _normal_inverse(M, Q, R), M.T @ Q, T, N)


def fblmpc_delta_u(L, M, Q, R, y_k, dz_k, u_prev, cache: FblmpcGains | None = None) -> NDArray:
    """Optimal increment ``-(M^T Q M + R)^-1 (M^T Q (y_k + L dz_k) + R u_prev)``.

    ``cache`` supplies the precomputed inverse and ``M^T Q``; the result is
    identical to the uncached evaluation.
    """
    y_k = np.asarray(y_k, dtype=float).reshape(-1)
    dz_k = np.asarray(dz_k, dtype=float).reshape(-1)
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    if cache is not None:
        K, MtQ = cache.K, cache.MtQ
    else:
        M = np.asarray(M, dtype=float)
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        K, MtQ = _normal_inverse(M, Q, R), M.T @ Q
    Lm = cache.L if cache is not None else np.asarray(L, dtype=float)
    Rm = cache.R if cache is not None else R
    return -K @ (MtQ @ (y_k + Lm @ dz_k) + Rm @ u_prev)


def fbl_state(e_lat: float, e_head: float, v: float) -> NDArray:
    return np.array([e_lat, v * math.sin(e_head)])


def fbl_valid(v: float, e_head: float) -> bool:
    return v != 0.0 and abs(e_head) < math.pi / 2 - VALIDITY_MARGIN


def recover_omega(u: float, v: float, e_head: float) -> float:
    """Steering rate ``u / (v cos e_H)``; raises outside the validity region."""
    if not fbl_valid(v, e_head):
        raise FblValidityError(f"transform singular at v={v}, e_H={e_head:.6f}")
    return u / (v * math.cos(e_head))


def curvature_feedforward(kappa: float, v: float, e_lat: float, e_head: float) -> float:
    """Yaw rate that keeps the path-frame heading error constant on a curved path."""
    denom = 1.0 - kappa * e_lat
    if denom <= 1e-3:
        denom = 1e-3
    return kappa * v * math.cos(e_head) / denom


@dataclass
class FblmpcState:
    """Controller memory carried between steps.

    ``u_seq`` is the previous optimal input sequence (first element applied
    at the previous step) and ``z_prev`` the FBL state measured then.
    """

    N: int
    z_prev: NDArray | None = None
    u_seq: NDArray = field(default=None)
    v_act_prev: NDArray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.u_seq is None:
            self.u_seq = np.zeros(self.N)


@dataclass
class FblStepInfo:
    u: float
    z: NDArray
    flagged: bool
    gp_mean: NDArray
    gp_var: NDArray = field(default_factory=lambda: np.zeros(2))


def _fbl_rollout(z0, u_seq, d, F, G) -> NDArray:
    out = []
    z = np.asarray(z0, dtype=float)
    for j in range(len(u_seq)):
        z = F @ z + G[:, 0] * u_seq[j] + d[j]
        out.append(z)
    return np.concatenate(out)


def gp_corrections(gp_z1, gp_z2, z, u_nom, u_last, v_act_prev, F, G) -> NDArray:
    """GP means per horizon step along the nominal FBL rollout.

    Query ``(z_j, v_act_prev, u_j, u_{j-1})``; the realized-velocity history
    is held at its last measured value over the horizon.
    """
    N = len(u_nom)
    d = np.zeros((N, 2))
    if gp_z1 is None and gp_z2 is None:
        return d
    zj = np.asarray(z, dtype=float)
    prev = u_last
    for j in range(N):
        q = np.concatenate([zj, v_act_prev, [u_nom[j], prev]])[None, :]
        for i, gp in enumerate((gp_z1, gp_z2)):
            if gp is not None:
                d[j, i] = predict(gp, q, return_var=False)[0]
        zj = F @ zj + G[:, 0] * u_nom[j] + d[j]
        prev = u_nom[j]
    return d


def gp_fblmpc_step(gp_z1, gp_z2, state: FblmpcState, e_lat: float, e_head: float, kappa: float, v: float,
                   gains: FblmpcGains, omega_max: float = 2.0) -> tuple[float, FblmpcState, FblStepInfo]:
    """One GP-FBLMPC step.

    The previous prediction ``y_k`` is rolled out from the previous measured
    state with the previous sequence and the same GP corrections that enter
    the new prediction, so ``y_{k+1} = y_k + L dz_k + M du`` holds exactly.
    With both GPs ``None`` (or zero-mean priors) this is plain FBLMPC.

    Returns
    -------
    (omega, new_state, info)
    """
    F, G = fbl_matrices(gains.T)
    z = fbl_state(e_lat, e_head, v)
    z_prev = z if state.z_prev is None else state.z_prev
    u_seq = state.u_seq
    u_nom = np.concatenate([u_seq[1:], u_seq[-1:]])
    d = gp_corrections(gp_z1, gp_z2, z, u_nom, u_seq[0], state.v_act_prev, F, G)
    y_k = _fbl_rollout(z_prev, u_seq, d, F, G)
    du = fblmpc_delta_u(gains.L, gains.M, gains.Q, gains.R, y_k, z - z_prev, u_seq, cache=gains)
    u_new = u_seq + du
    flagged = False
    try:
        omega = recover_omega(u_new[0], v, e_head) + curvature_feedforward(kappa, v, e_lat, e_head)
    except FblValidityError:
        flagged = True
        omega = -math.copysign(omega_max, e_head) if e_head != 0 else omega_max
    if abs(omega) > omega_max:
        omega = math.copysign(omega_max, omega)
    gp_var = np.zeros(2)
    q0 = np.concatenate([z, state.v_act_prev, [u_nom[0], u_seq[0]]])[None, :]
    for i, gp in enumerate((gp_z1, gp_z2)):
        if gp is not None:
            gp_var[i] = predict(gp, q0)[1][0]
    new_state = FblmpcState(state.N, z, u_new, state.v_act_prev)
    return omega, new_state, FblStepInfo(float(u_new[0]), z, flagged, d[0].copy(), gp_var)
