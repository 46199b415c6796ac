"""Unicycle path following with learned disturbance models."""

from gpmpc.pathfollow.data import collect_disturbance_data, collect_fbl_data, pose_velocities, train_gp
from gpmpc.pathfollow.fbl import (
    FblmpcGains,
    FblmpcState,
    fbl_batch_matrices,
    fbl_matrices,
    fblmpc_delta_u,
    fblmpc_precompute,
    gp_fblmpc_step,
    recover_omega,
)
from gpmpc.pathfollow.nmpc import NmpcState, gp_nmpc_pathfollow_step
from gpmpc.pathfollow.path import PathDef, circle_path, figure_eight_path, load_path_csv, path_errors, straight_path
from gpmpc.pathfollow.robot import RobotPose, SlipParams, disturbed_plant_step, unicycle_step, wrap_angle
from gpmpc.pathfollow.sim import PathfollowLog, PathfollowSettings, paired_learning_run, simulate_pathfollow

__all__ = [
    "collect_disturbance_data", "collect_fbl_data", "pose_velocities", "train_gp", "FblmpcGains", "FblmpcState",
    "fbl_batch_matrices", "fbl_matrices", "fblmpc_delta_u", "fblmpc_precompute", "gp_fblmpc_step", "recover_omega",
    "NmpcState", "gp_nmpc_pathfollow_step", "PathDef", "circle_path", "figure_eight_path", "load_path_csv",
    "path_errors", "straight_path", "RobotPose", "SlipParams", "disturbed_plant_step", "unicycle_step", "wrap_angle",
    "PathfollowLog", "PathfollowSettings", "paired_learning_run", "simulate_pathfollow",
]
