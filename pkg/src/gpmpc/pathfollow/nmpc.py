"""GP-NMPC for unicycle path following.

The prediction model is the discrete unicycle plus three pose-disturbance
GPs queried at ``(pose, v_prev, u, u_prev)``. The reference is sampled
along the path from the current progress at the target speed; the input
weight penalizes deviation from the speed and curvature-rate reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np
from numpy.typing import NDArray

from gpmpc.mpc import MpcWeights, NmpcDiagnostics, gp_nmpc_step
from gpmpc.pathfollow.path import PathDef
from gpmpc.pathfollow.robot import RobotPose, unicycle_f, unicycle_jac, wrap_angle
from gpmpc.propagation import HybridModel

# [x, y, th, v, w | v_prev, w_prev, v_last, w_last] -> query layout (pose, v_prev, u, u_last)
POSE_QUERY_MAP = [0, 1, 2, 5, 6, 3, 4, 7, 8]


def pathfollow_weights(N: int, q_pos: float = 10.0, q_head: float = 1.0, r_v: float = 1.0,
                       r_w: float = 0.1) -> MpcWeights:
    return MpcWeights.from_blocks(np.diag([q_pos, q_pos, q_head]), np.diag([r_v, r_w]), N)


def unicycle_model(T: float, gps=None) -> HybridModel:
    """Hybrid unicycle model; ``gps`` is ``(gp_x, gp_y, gp_theta)`` or ``None``."""
    f = partial(unicycle_f, T=T)
    jac = partial(unicycle_jac, T=T)
    if gps is None or all(g is None for g in gps):
        return HybridModel(f, np.zeros((3, 0)), [], 2, jac=jac)
    return HybridModel(f, np.eye(3), list(gps), 2, noise_var=np.zeros(3), gp_input_map=POSE_QUERY_MAP,
                       jac=jac, n_context=4)


@dataclass
class NmpcState:
    """Warm start and history carried between steps."""

    N: int
    u_seq: NDArray | None = None
    u_last: NDArray = field(default_factory=lambda: np.zeros(2))
    v_act_prev: NDArray = field(default_factory=lambda: np.zeros(2))


def path_reference(path: PathDef, s: float, theta: float, N: int, T: float) -> tuple[NDArray, NDArray]:
    """States for steps 1..N and the matching input reference ``(v, kappa v)``."""
    v = path.speed
    ss = s + v * T * np.arange(1, N + 1)
    x, y, hd = path.point_at(ss)
    th = np.empty(N)
    th[0] = theta + wrap_angle(hd[0] - theta)
    for j in range(1, N):
        th[j] = th[j - 1] + wrap_angle(hd[j] - hd[j - 1])
    kappa = path.curvature_at(ss - v * T)
    u_ref = np.column_stack([np.full(N, v), kappa * v])
    return np.column_stack([x, y, th]), u_ref


def _pose_error(x_ref, x_bar):
    e = np.asarray(x_ref) - np.asarray(x_bar)
    e[:, 2] = wrap_angle(e[:, 2])
    return e


def gp_nmpc_pathfollow_step(gp_x, gp_y, gp_theta, pose: RobotPose, path: PathDef, weights: MpcWeights,
                            T: float, N: int, state: NmpcState, s: float, v_max: float | None = None,
                            omega_max: float = 2.0, max_iter: int = 30, tol: float = 1e-4,
                            model: HybridModel | None = None) -> tuple[float, float, NmpcState, NmpcDiagnostics]:
    """One receding-horizon step; returns ``(v_cmd, w_cmd, new_state, diagnostics)``.

    History entries of the GP query (previous realized velocity and the
    previous command within the horizon) are fixed for the linearization.
    """
    if model is None:
        model = unicycle_model(T, (gp_x, gp_y, gp_theta))
    x_now = pose.as_array()
    x_ref, u_ref = path_reference(path, s, pose.theta, N, T)
    if state.u_seq is None:
        u_init = u_ref.copy()
    else:
        u_init = np.vstack([state.u_seq[1:], state.u_seq[-1:]])
    context_fn = None
    if model.n_context:
        vprev = np.asarray(state.v_act_prev, dtype=float)
        u_last = np.asarray(state.u_last, dtype=float)

        def context_fn(u_bar):
            prev = np.vstack([u_last[None, :], u_bar[:-1]])
            return [np.concatenate([vprev, prev[j]]) for j in range(N)]

    u0, diag = gp_nmpc_step(model, x_now, x_ref, weights, u_init, max_iter=max_iter, tol=tol, u_ref=u_ref,
                            context_fn=context_fn, error_fn=_pose_error)
    v_hi = 2.0 * path.speed if v_max is None else v_max
    v_cmd = float(np.clip(u0[0], 0.0, v_hi))
    w_cmd = float(np.clip(u0[1], -omega_max, omega_max))
    new_state = NmpcState(N, diag.u_bar.copy(), np.array([v_cmd, w_cmd]), state.v_act_prev)
    return v_cmd, w_cmd, new_state, diag
