"""Closed-loop path-following simulation and the train-then-deploy workflow."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from gpmpc.gp.sparse import fic_from_exact
from gpmpc.pathfollow.data import collect_disturbance_data, collect_fbl_data, pose_velocities, train_gp
from gpmpc.pathfollow.fbl import FblmpcState, fbl_state, fblmpc_precompute, gp_fblmpc_step
from gpmpc.pathfollow.nmpc import NmpcState, gp_nmpc_pathfollow_step, pathfollow_weights, unicycle_model
from gpmpc.pathfollow.path import PathDef, path_errors
from gpmpc.pathfollow.robot import RobotPose, SlipParams, disturbed_plant_step

CONTROLLERS = ("nmpc", "gp-nmpc", "fblmpc", "gp-fblmpc")


@dataclass(frozen=True)
class PathfollowSettings:
    """Controller and simulation parameters shared by every controller."""

    T: float = 0.1
    N: int = 20
    steps: int = 300
    omega_max: float = 2.0
    initial_offset: float = 0.3
    q_lat: float = 10.0
    q_rate: float = 1.0
    r_fbl: float = 0.1
    q_pos: float = 10.0
    q_head: float = 1.0
    r_v: float = 1.0
    r_w: float = 0.1
    max_iter: int = 15
    tol: float = 1e-4


@dataclass
class PathfollowLog:
    """Per-step record; state columns have ``steps + 1`` rows, command columns are NaN on the last row."""

    controller: str
    T: float
    columns: dict = field(default_factory=dict)
    solve_times: list = field(default_factory=list)
    iteration_log: list = field(default_factory=list)  # (step, iteration, cost, du_norm) for NMPC

    def __len__(self):
        return len(self.columns.get("t", []))

    @property
    def poses(self) -> NDArray:
        c = self.columns
        return np.column_stack([c["x"], c["y"], c["theta"]])

    @property
    def commands(self) -> NDArray:
        c = self.columns
        return np.column_stack([c["v_cmd"], c["w_cmd"]])[:-1]

    def metrics(self) -> dict:
        c = self.columns
        e_l = np.asarray(c["e_lat"])
        e_h = np.asarray(c["e_head"])
        out = {
            "rms_e_lat": float(np.sqrt(np.mean(e_l**2))),
            "rms_e_head": float(np.sqrt(np.mean(e_h**2))),
            "mean_abs_e_lat": float(np.mean(np.abs(e_l))),
            "max_abs_e_lat": float(np.max(np.abs(e_l))),
            "flagged_steps": int(np.nansum(c["flagged"])),
        }
        return out


def _gp_tuple(gps, n):
    if gps is None:
        return (None,) * n
    return tuple(gps)


def simulate_pathfollow(path: PathDef, controller: str, slip: SlipParams, settings: PathfollowSettings = PathfollowSettings(),
                        seed: int = 0, gps=None) -> PathfollowLog:
    """Run one closed-loop episode.

    Parameters
    ----------
    controller : {"nmpc", "gp-nmpc", "fblmpc", "gp-fblmpc"}
    gps : tuple, optional
        Three pose GPs for ``gp-nmpc`` or two FBL GPs for ``gp-fblmpc``.
        Ignored by the plain controllers.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}")
    st = settings
    T, N = st.T, st.N
    rng = np.random.default_rng(seed)
    v_nom = path.speed
    x0, y0, h0 = path.point_at(0.0)
    pose = RobotPose(x0[0] - st.initial_offset * np.sin(h0[0]), y0[0] + st.initial_offset * np.cos(h0[0]), h0[0])
    use_gp = controller.startswith("gp-")
    fbl = controller.endswith("fblmpc")

    if fbl:
        gains = fblmpc_precompute(T, N, np.kron(np.eye(N), np.diag([st.q_lat, st.q_rate])), st.r_fbl * np.eye(N))
        gz = _gp_tuple(gps if use_gp else None, 2)
        cstate = FblmpcState(N, v_act_prev=np.array([v_nom, 0.0]))
    else:
        weights = pathfollow_weights(N, st.q_pos, st.q_head, st.r_v, st.r_w)
        gpose = _gp_tuple(gps if use_gp else None, 3)
        model = unicycle_model(T, gpose)
        cstate = NmpcState(N, v_act_prev=np.array([v_nom, 0.0]))

    names = ["t", "x", "y", "theta", "e_lat", "e_head", "s", "z1", "z2", "v_cmd", "w_cmd", "u_fbl",
             "v_act", "w_act", "gp_mean_0", "gp_mean_1", "gp_mean_2", "gp_var_0", "gp_var_1", "gp_var_2",
             "iterations", "converged", "flagged"]
    cols = {n: [] for n in names}
    log = PathfollowLog(controller, T, cols)
    s_hint = 0.0
    prev_pose = None
    for k in range(st.steps + 1):
        e_lat, e_head, s = path_errors(pose, path, s_hint)
        s_hint = s
        z = fbl_state(e_lat, e_head, v_nom)
        for n_, val in (("t", k * T), ("x", pose.x), ("y", pose.y), ("theta", pose.theta), ("e_lat", e_lat),
                        ("e_head", e_head), ("s", s), ("z1", z[0]), ("z2", z[1])):
            cols[n_].append(float(val))
        if k == st.steps:
            for n_ in names[9:]:
                cols[n_].append(np.nan)
            break
        if prev_pose is not None:
            cstate.v_act_prev = pose_velocities(np.vstack([prev_pose.as_array(), pose.as_array()]), T)[0]
        t0 = time.perf_counter()
        last_cmd = np.array(cstate.u_last, dtype=float) if not fbl else None
        if fbl:
            kappa = float(path.curvature_at(s))
            w_cmd, cstate, info = gp_fblmpc_step(gz[0], gz[1], cstate, e_lat, e_head, kappa, v_nom, gains,
                                                 st.omega_max)
            v_cmd = v_nom
            u_fbl, iters, conv, flag = info.u, 0, 1, int(info.flagged)
            gpm = [info.gp_mean[0], info.gp_mean[1], np.nan]
            gpv = [info.gp_var[0], info.gp_var[1], np.nan]
        else:
            v_cmd, w_cmd, cstate, diag = gp_nmpc_pathfollow_step(
                None, None, None, pose, path, weights, T, N, cstate, s, omega_max=st.omega_max,
                max_iter=st.max_iter, tol=st.tol, model=model)
            u_fbl, iters, conv, flag = np.nan, diag.iterations, int(diag.converged), 0
            log.iteration_log.extend((k, i, c, d) for i, (c, d) in enumerate(zip(diag.costs, diag.du_norms)))
            gpm = [np.nan] * 3
            gpv = [np.nan] * 3
            if model.n_d:
                ctx = np.concatenate([cstate.v_act_prev, last_cmd])
                mu, var, _ = model.gp_eval(pose.as_array(), np.array([v_cmd, w_cmd]), ctx)
                gpm, gpv = list(mu), list(var)
        log.solve_times.append(time.perf_counter() - t0)
        prev_pose = pose
        pose, (v_act, w_act) = disturbed_plant_step(pose, (v_cmd, w_cmd), slip, rng, T)
        for n_, val in (("v_cmd", v_cmd), ("w_cmd", w_cmd), ("u_fbl", u_fbl), ("v_act", v_act), ("w_act", w_act),
                        ("gp_mean_0", gpm[0]), ("gp_mean_1", gpm[1]), ("gp_mean_2", gpm[2]),
                        ("gp_var_0", gpv[0]), ("gp_var_1", gpv[1]), ("gp_var_2", gpv[2]),
                        ("iterations", iters), ("converged", conv), ("flagged", flag)):
            cols[n_].append(float(val))
    log.columns = {n_: np.asarray(v, dtype=float) for n_, v in cols.items()}
    return log


def log_datasets(log: PathfollowLog, kind: str) -> tuple:
    """Disturbance datasets from a closed-loop log: three for ``kind="pose"``, two for ``kind="fbl"``."""
    T = log.T
    poses = log.poses
    if kind == "pose":
        return collect_disturbance_data(poses, log.commands, T)
    if kind == "fbl":
        c = log.columns
        z = np.column_stack([c["z1"], c["z2"]])
        return collect_fbl_data(z, c["u_fbl"][:-1], pose_velocities(poses, T), T)
    raise ValueError(f"unknown dataset kind {kind!r}")


def train_from_log(log: PathfollowLog, kind: str, seed: int = 0, budget: int = 60, max_points: int = 300,
                   inducing: int | None = None, strategy: str = "greedy-variance"):
    """Fit disturbance GPs from a closed-loop log.

    ``kind="pose"`` returns three GPs (x, y, theta); ``kind="fbl"`` two (z1, z2).
    With ``inducing`` set, each exact GP is replaced by its FIC approximation.
    """
    datasets = log_datasets(log, kind)
    gps = tuple(train_gp(d, budget=budget, seed=seed + i, max_points=max_points) for i, d in enumerate(datasets))
    if inducing is not None:
        gps = tuple(fic_from_exact(g, inducing, strategy, seed + i) for i, g in enumerate(gps))
    return gps


def paired_learning_run(path: PathDef, family: str, slip: SlipParams, settings: PathfollowSettings = PathfollowSettings(),
                        seed: int = 0, train_path: PathDef | None = None):
    """Train on ``train_path`` (default ``path``) with the plain controller, deploy both on ``path``.

    ``family`` is ``"nmpc"`` or ``"fblmpc"``. Returns ``(plain_log, gp_log, gps)``.
    """
    kind = "fbl" if family == "fblmpc" else "pose"
    train_log = simulate_pathfollow(train_path or path, family, slip, settings, seed=seed + 1000)
    gps = train_from_log(train_log, kind, seed=seed)
    plain = simulate_pathfollow(path, family, slip, settings, seed=seed)
    learned = simulate_pathfollow(path, "gp-" + family, slip, settings, seed=seed, gps=gps)
    return plain, learned, gps
