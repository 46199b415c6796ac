"""Mixed-traffic platoon with a GP-augmented human-driver model."""

from gpmpc.platoon.hv import (
    ArxModel,
    HvDriverParams,
    arx_predict,
    fit_arx,
    gp_arx_predict,
    hv_residual_data,
    one_step_predictions,
    rmse,
    synth_hv_driver,
    train_hv_gp,
)
from gpmpc.platoon.ocp import (
    OcpSolution,
    PlatoonLimits,
    PlatoonQp,
    PlatoonState,
    av_step,
    build_platoon_qp,
    gp_terms,
    hv_belief_step,
    required_gap,
    solve_platoon_ocp,
    tightened_distance,
)
from gpmpc.platoon.profiles import PROFILES, speed_profile
from gpmpc.platoon.qp import QpResult, kkt_residual, solve_qp
from gpmpc.platoon.sim import CONTROLLERS, HvModel, PlatoonLog, collect_hv_data, simulate_platoon, train_hv_model

__all__ = [
    "ArxModel", "HvDriverParams", "arx_predict", "fit_arx", "gp_arx_predict", "hv_residual_data",
    "one_step_predictions", "rmse", "synth_hv_driver", "train_hv_gp", "OcpSolution", "PlatoonLimits", "PlatoonQp",
    "PlatoonState", "av_step", "build_platoon_qp", "gp_terms", "hv_belief_step", "required_gap", "solve_platoon_ocp",
    "tightened_distance", "PROFILES", "speed_profile", "QpResult", "kkt_residual", "solve_qp", "CONTROLLERS",
    "HvModel", "PlatoonLog", "collect_hv_data", "simulate_platoon", "train_hv_model",
]
