"""Two-phase scenario execution, summaries, paired comparison and output files.

Phase 1 collects data with the nominal controller and fits the models;
phase 2 deploys the requested controller. Both phases are seeded from the
scenario seed, so a run is reproducible from its configuration alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from gpmpc.errors import FitError, InfeasibleError, ScenarioFailure, SingularError, SolverFailure
from gpmpc.harness.config import ScenarioConfig
from gpmpc.harness.persist import (
    columns_to_csv,
    dump_json,
    load_models,
    save_models,
    write_dataset_csv,
    write_manifest,
)
from gpmpc.pathfollow.path import PathDef, circle_path, figure_eight_path, load_path_csv, straight_path
from gpmpc.pathfollow.robot import SlipParams
from gpmpc.pathfollow.sim import PathfollowSettings, log_datasets, simulate_pathfollow, train_from_log
from gpmpc.platoon.hv import HvDriverParams, hv_residual_data
from gpmpc.platoon.ocp import PlatoonLimits
from gpmpc.platoon.profiles import speed_profile
from gpmpc.platoon.sim import HvModel, collect_hv_data, simulate_platoon, train_hv_model

LOWER_IS_BETTER = ("rms_e_lat", "rms_e_head", "mean_abs_e_lat", "max_abs_e_lat", "flagged_steps", "gp_rmse",
                   "hv_pred_rmse", "violation_count", "soft_steps")
HIGHER_IS_BETTER = ("min_gap", "min_gap_hv")


@dataclass
class TrainResult:
    models: dict
    datasets: dict = field(default_factory=dict)


@dataclass
class RunResult:
    """Everything a run produces; ``failure`` is set when a hard constraint was violated."""

    config: ScenarioConfig
    columns: dict
    summary: dict
    tables: dict = field(default_factory=dict)
    training: TrainResult | None = None
    failure: dict | None = None


# ---------------------------------------------------------------- builders

def build_path(spec: dict) -> PathDef:
    kind, v = spec["kind"], spec["speed"]
    if kind == "straight":
        return straight_path(spec["length"], v)
    if kind == "circle":
        return circle_path(spec["radius"], v)
    if kind == "figure_eight":
        return figure_eight_path(spec["size"], v)
    return load_path_csv(spec["file"], speed=v)


def pathfollow_settings(cfg: ScenarioConfig, duration: float | None = None) -> PathfollowSettings:
    c = cfg.section["controller"]
    steps = int(round((duration or cfg.duration) / c["T"]))
    return PathfollowSettings(steps=steps, **c)


def _family(controller: str) -> str:
    return "fblmpc" if controller.endswith("fblmpc") else "nmpc"


def platoon_limits(cfg: ScenarioConfig) -> PlatoonLimits:
    return PlatoonLimits(**cfg.section["limits"])


def driver_params(cfg: ScenarioConfig) -> HvDriverParams:
    return HvDriverParams(**cfg.section["driver"])


# ---------------------------------------------------------------- phase 1

def train_phase(cfg: ScenarioConfig) -> TrainResult:
    """Collect data with the nominal controller and fit the models the scenario needs."""
    g = cfg.gp
    seed = cfg.seed
    try:
        if cfg.application == "pathfollow":
            sec = cfg.section
            tr = sec["training"]
            family = _family(cfg.controller)
            kind = "fbl" if family == "fblmpc" else "pose"
            path = build_path(tr["path"] if tr["path"]["kind"] else sec["path"])
            settings = pathfollow_settings(cfg, tr["duration"])
            log = simulate_pathfollow(path, family, SlipParams(**sec["slip"]), settings, seed=seed + tr["seed_offset"])
            inducing = g["inducing"] if g["kind"] == "sparse" else None
            gps = train_from_log(log, kind, seed=seed, budget=g["budget"] or 60, max_points=g["max_points"] or 300,
                                 inducing=inducing, strategy=g["strategy"])
            ds = log_datasets(log, kind)
            return TrainResult({f"{kind}_gps": gps}, {f"{kind}_{i}": d for i, d in enumerate(ds)})
        sec = cfg.section
        tr = sec["training"]
        lim = platoon_limits(cfg)
        vh, vl = collect_hv_data(driver_params(cfg), tr["duration"], lim.T, seed + tr["seed_offset"],
                                 tr["harsh_brakes"], tr["lead_jitter"], lim.v_max)
        hv = train_hv_model(vh, vl, seed, g["inducing"], g["strategy"], g["budget"] or 80, g["max_points"] or 400)
        data = hv_residual_data(hv.arx, vh, vl)
        return TrainResult({"arx": hv.arx, "gp": hv.gp, "sparse_gp": hv.sparse_gp}, {"hv_residual": data})
    except (FitError, SingularError) as exc:
        raise SolverFailure(f"model training failed: {exc}") from exc


# ---------------------------------------------------------------- phase 2

def _rms(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(math.sqrt(np.mean(a * a))) if a.size else float("nan")


def observed_disturbance(columns: dict, controller: str, T: float) -> np.ndarray:
    """Realized one-step residual of the first GP output, aligned with the log rows (NaN where undefined)."""
    from gpmpc.pathfollow.fbl import fbl_matrices
    from gpmpc.pathfollow.robot import unicycle_f, wrap_angle

    c = columns
    n = len(c["t"])
    out = np.full(n, np.nan)
    if _family(controller) == "fblmpc":
        F, G = fbl_matrices(T)
        z = np.column_stack([c["z1"], c["z2"]])
        for k in range(n - 1):
            out[k] = (z[k + 1] - F @ z[k] - G[:, 0] * c["u_fbl"][k])[0]
    else:
        P = np.column_stack([c["x"], c["y"], c["theta"]])
        for k in range(n - 1):
            g = P[k + 1] - unicycle_f(P[k], np.array([c["v_cmd"][k], c["w_cmd"][k]]), T)
            g[2] = wrap_angle(g[2])
            out[k] = g[0]
    return out


def _pathfollow_run(cfg: ScenarioConfig, models: dict | None) -> RunResult:
    sec = cfg.section
    settings = pathfollow_settings(cfg)
    gps = None
    if cfg.uses_gp:
        kind = "fbl" if _family(cfg.controller) == "fblmpc" else "pose"
        gps = models[f"{kind}_gps"]
    log = simulate_pathfollow(build_path(sec["path"]), cfg.controller, SlipParams(**sec["slip"]), settings,
                              seed=cfg.seed, gps=gps)
    cols = log.columns
    summary = {"application": "pathfollow", "controller": cfg.controller, "seed": cfg.seed, "rows": len(log)}
    summary.update(log.metrics())
    summary["mean_speed"] = float(np.nanmean(cols["v_act"]))
    summary["mean_solve_time"] = float(np.mean(log.solve_times)) if log.solve_times else 0.0
    summary["max_solve_time"] = float(np.max(log.solve_times)) if log.solve_times else 0.0
    if cfg.uses_gp:
        obs = observed_disturbance(cols, cfg.controller, settings.T)
        summary["gp_rmse"] = _rms(obs - cols["gp_mean_0"])
    tables = {}
    if log.iteration_log:
        arr = np.array(log.iteration_log, dtype=float)
        tables["diagnostics"] = {"step": arr[:, 0], "iteration": arr[:, 1], "cost": arr[:, 2], "du_norm": arr[:, 3]}
    return RunResult(cfg, cols, summary, tables)


def _platoon_run(cfg: ScenarioConfig, models: dict) -> RunResult:
    sec = cfg.section
    lim = platoon_limits(cfg)
    p = sec["profile"]
    profile = speed_profile(p["kind"], cfg.duration, lim.T, cruise=p["cruise"], seed=cfg.seed,
                            acc_min=lim.acc_min, acc_max=lim.acc_max, v_max=lim.v_max, brake_at=p["brake_at"],
                            stop_hold=p["stop_hold"])
    hv = HvModel(models["arx"], models.get("gp"), models.get("sparse_gp"))
    try:
        log = simulate_platoon(profile, cfg.controller, hv, driver_params(cfg), lim, seed=cfg.seed,
                               gap_av=sec["initial"]["gap_av"], gap_hv=sec["initial"]["gap_hv"])
    except (SingularError, InfeasibleError) as exc:
        raise SolverFailure(str(exc)) from exc
    cols = log.columns
    m = log.metrics()
    v_av = np.column_stack([cols[f"v_av{n}"] for n in range(lim.n_av)])
    summary = {"application": "platoon", "controller": cfg.controller, "seed": cfg.seed, "rows": len(log)}
    summary.update({k: m[k] for k in ("min_gap", "min_gap_hv", "soft_steps", "rms_v_err")})
    summary["violation_count"] = int(np.sum(np.min(log.gaps(), axis=1) < lim.delta - 1e-9))
    summary["failure_step"] = log.failure_step
    summary["mean_speed"] = float(np.mean(v_av))
    summary["hv_pred_rmse"] = _rms(cols["hv_pred"][:-1] - cols["v_hv"][1:])
    summary["mean_solve_time"] = float(np.mean(log.solve_times)) if log.solve_times else 0.0
    summary["max_solve_time"] = float(np.max(log.solve_times)) if log.solve_times else 0.0
    failure = None
    if log.failure_step is not None:
        failure = {"step": log.failure_step, "reason": f"gap below delta={lim.delta} m"}
    return RunResult(cfg, cols, summary, failure=failure)


def run_scenario(cfg: ScenarioConfig, models: dict | None = None) -> RunResult:
    """Run both phases (phase 1 is skipped when models are given or ``gp.load`` is set).

    Raises
    ------
    SolverFailure
        A model fit or an optimization could not be completed.
    """
    training = None
    if models is None and cfg.gp.get("load"):
        models = load_models(cfg.gp["load"])
    needs_models = cfg.application == "platoon" or cfg.uses_gp
    if models is None and needs_models:
        training = train_phase(cfg)
        models = training.models
    try:
        if cfg.application == "pathfollow":
            res = _pathfollow_run(cfg, models)
        else:
            res = _platoon_run(cfg, models)
    except (SingularError, InfeasibleError) as exc:
        raise SolverFailure(str(exc)) from exc
    res.training = training
    return res


def raise_on_failure(res: RunResult):
    if res.failure is not None:
        raise ScenarioFailure(res.failure["reason"], res.failure["step"])


# ---------------------------------------------------------------- comparison

def compare_runs(a: RunResult, b: RunResult) -> dict:
    """Per-metric deltas ``b - a``, verdicts and a paired per-step sign test.

    The per-step series is ``|e_lat|`` for path following (lower is better)
    and the smallest gap for the platoon (higher is better).
    """
    sa, sb = a.summary, b.summary
    if sa["application"] != sb["application"]:
        raise ValueError(f"cannot compare {sa['application']} with {sb['application']}")
    if sa["seed"] != sb["seed"]:
        raise ValueError(f"runs use different seeds ({sa['seed']} vs {sb['seed']})")
    if a.config.application == "pathfollow":
        base = ("t", "x", "y", "theta", "e_lat", "e_head")
    else:
        base = ("t", "p_hv", "v_hv", "gap_hv")
    for name in base:
        if name not in a.columns or name not in b.columns:
            raise ValueError(f"log schemas differ: column {name!r} missing")
    deltas, verdicts = {}, {}
    for key in sorted(set(sa) & set(sb)):
        va, vb = sa[key], sb[key]
        if key in ("seed", "rows") or isinstance(va, (str, bool)) or va is None or vb is None:
            continue
        d = float(vb) - float(va)
        deltas[key] = d
        if key in LOWER_IS_BETTER:
            verdicts[key] = "b_better" if d < 0 else ("a_better" if d > 0 else "tie")
        elif key in HIGHER_IS_BETTER:
            verdicts[key] = "b_better" if d > 0 else ("a_better" if d < 0 else "tie")
    n = min(len(a.columns["t"]), len(b.columns["t"]))
    if a.config.application == "pathfollow":
        xa, xb = np.abs(a.columns["e_lat"][:n]), np.abs(b.columns["e_lat"][:n])
        better_b, better_a = int(np.sum(xb < xa)), int(np.sum(xb > xa))
        series = "abs_e_lat"
    else:
        ga = np.column_stack([v for k, v in a.columns.items() if k.startswith("gap_")])[:n].min(axis=1)
        gb = np.column_stack([v for k, v in b.columns.items() if k.startswith("gap_")])[:n].min(axis=1)
        better_b, better_a = int(np.sum(gb > ga)), int(np.sum(gb < ga))
        series = "min_gap"
    trials = better_a + better_b
    p_value = float(binomtest(better_b, trials).pvalue) if trials else 1.0
    return {
        "application": sa["application"],
        "seed": sa["seed"],
        "controllers": [sa["controller"], sb["controller"]],
        "deltas": deltas,
        "verdicts": verdicts,
        "sign_test": {"series": series, "steps": n, "b_better": better_b, "a_better": better_a, "p_value": p_value},
    }


# ---------------------------------------------------------------- files

def write_training(train: TrainResult, application: str, out_dir) -> list[Path]:
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    paths = [out / "models" / "models.json"]
    save_models(paths[0], application, train.models)
    if train.datasets:
        (out / "datasets").mkdir(exist_ok=True)
        for name, d in sorted(train.datasets.items()):
            p = out / "datasets" / f"{name}.csv"
            write_dataset_csv(p, d)
            paths.append(p)
    return paths


def write_run(res: RunResult, out_dir) -> list[Path]:
    """Write ``run.csv``, ``summary.json``, ``config.yaml``, optional tables and models, then the manifest.

    Solve times appear only in ``summary.json`` so the CSV files are
    reproducible byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "run.csv", out / "summary.json", out / "config.yaml"]
    paths[0].write_text(columns_to_csv(res.columns), encoding="utf-8")
    summary = dict(res.summary)
    summary["failure"] = res.failure
    paths[1].write_text(dump_json(summary), encoding="utf-8")
    paths[2].write_text(res.config.to_yaml(), encoding="utf-8")
    for name, table in sorted(res.tables.items()):
        p = out / f"{name}.csv"
        p.write_text(columns_to_csv(table), encoding="utf-8")
        paths.append(p)
    if res.training is not None:
        paths += write_training(res.training, res.config.application, out)
    write_manifest(out)
    return paths


def export_plots(res: RunResult, out_dir) -> list[Path]:
    """Render the application's SVG figures for a finished run.

    Raises
    ------
    ValueError
        The log is empty.
    """
    from gpmpc.harness.plots import pathfollow_figures, platoon_figures

    cfg = res.config
    if cfg.application == "pathfollow":
        dist = None
        if cfg.uses_gp and len(res.columns.get("t", [])):
            dist = observed_disturbance(res.columns, cfg.controller, cfg.section["controller"]["T"])
        return pathfollow_figures(res.columns, out_dir, dist)
    return platoon_figures(res.columns, out_dir, cfg.section["limits"]["delta"])
