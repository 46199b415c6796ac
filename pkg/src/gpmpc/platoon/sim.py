"""Closed-loop platoon simulation and HV model training."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from gpmpc.platoon.hv import (
    ArxModel,
    HvDriverParams,
    fit_arx,
    hv_driver_step,
    hv_residual_data,
    synth_hv_driver,
    train_hv_gp,
)
from gpmpc.gp.sparse import fic_from_exact
from gpmpc.platoon.ocp import PlatoonLimits, PlatoonState, required_gap, solve_platoon_ocp
from gpmpc.platoon.profiles import speed_profile

CONTROLLERS = ("mpc", "gp-mpc", "sparse-gp-mpc")


@dataclass
class HvModel:
    """Trained HV model: ARX plus exact and sparse residual GPs."""

    arx: ArxModel
    gp: object = None
    sparse_gp: object = None

    def for_controller(self, controller: str):
        if controller == "mpc":
            return None
        if controller == "gp-mpc":
            return self.gp
        if controller == "sparse-gp-mpc":
            return self.sparse_gp
        raise ValueError(f"unknown controller {controller!r}")


def lead_fluctuations(n: int, std: float, T: float, rng, corr_time: float = 0.3) -> NDArray:
    """Stationary AR(1) speed fluctuations with standard deviation ``std`` and correlation time ``corr_time``."""
    a = float(np.exp(-T / corr_time))
    e = rng.standard_normal(n) * std * np.sqrt(1.0 - a * a)
    w = np.empty(n)
    w[0] = std * rng.standard_normal()
    for k in range(1, n):
        w[k] = a * w[k - 1] + e[k]
    return w


def collect_hv_data(params: HvDriverParams, duration: float = 120.0, T: float = 0.1, seed: int = 0,
                    harsh_brakes: int = 2, lead_jitter: float = 1.5, v_max: float = 30.0) -> tuple[NDArray, NDArray]:
    """Open-loop HV training log ``(v_hv, v_lead)``.

    The lead follows a ``wltp_like`` profile and then ``harsh_brakes``
    emergency stops from random cruise speeds, with AR(1) speed
    fluctuations of std ``lead_jitter`` on top (clipped to ``[0, v_max]``).
    Without them a smooth lead makes HV momentum the best linear one-step
    predictor and the ARX fit no longer describes how the driver tracks.
    ``v_hv[k]`` reacts to ``v_lead[k - delay]``.
    """
    rng = np.random.default_rng(seed)
    parts = [speed_profile("wltp_like", duration, T, seed=seed)]
    for _ in range(harsh_brakes):
        cruise = float(rng.uniform(8.0, 25.0))
        parts.append(speed_profile("emergency_brake", 20.0, T, cruise=cruise,
                                   brake_at=float(rng.uniform(2.0, 6.0))))
    lead = np.concatenate(parts)
    if lead_jitter > 0:
        lead = np.clip(lead + lead_fluctuations(lead.size, lead_jitter, T, rng), 0.0, v_max)
    return synth_hv_driver(lead, params, seed=seed + 1), lead


def train_hv_model(v_hv, v_lead, seed: int = 0, inducing: int = 20, strategy: str = "greedy-variance",
                   budget: int = 80, max_points: int = 400) -> HvModel:
    """ARX fit, residual GP and its FIC approximation from one log or a list of episodes."""
    arx = fit_arx(v_hv, v_lead)
    data = hv_residual_data(arx, v_hv, v_lead)
    gp = train_hv_gp(data, budget=budget, seed=seed, max_points=max_points)
    return HvModel(arx, gp, fic_from_exact(gp, inducing, strategy, seed))


@dataclass
class PlatoonLog:
    """Per-step record with ``steps + 1`` rows; commands and predictions are NaN on the last row."""

    controller: str
    T: float
    delta: float
    columns: dict = field(default_factory=dict)
    solve_times: list = field(default_factory=list)
    failure_step: int | None = None

    def __len__(self):
        return len(self.columns.get("t", []))

    def gaps(self) -> NDArray:
        return np.column_stack([v for k, v in self.columns.items() if k.startswith("gap_")])

    def metrics(self) -> dict:
        c = self.columns
        gaps = self.gaps()
        gap_hv = np.asarray(c["gap_hv"])
        return {
            "min_gap": float(np.min(gaps)),
            "min_gap_hv": float(np.min(gap_hv)),
            "violation": bool(self.failure_step is not None),
            "failure_step": self.failure_step,
            "soft_steps": int(np.nansum(c["soft"])),
            "rms_v_err": float(np.sqrt(np.nanmean((np.asarray(c["v_av0"]) - np.asarray(c["v_ref"])) ** 2))),
        }


def simulate_platoon(profile: NDArray, controller: str, hv_model: HvModel, driver: HvDriverParams,
                     limits: PlatoonLimits = PlatoonLimits(), seed: int = 0, gap_av: float = 15.0,
                     gap_hv: float = 23.0) -> PlatoonLog:
    """Run the platoon along a leader reference profile.

    The HV follows ``driver``; the AVs use ``controller``. A gap below
    ``limits.delta`` ends the run and sets ``failure_step``.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}")
    lim = limits
    T, N, na = lim.T, lim.N, lim.n_av
    gp = hv_model.for_controller(controller)
    profile = np.asarray(profile, dtype=float)
    steps = profile.size - 1
    ref = np.concatenate([profile, np.full(N + 1, profile[-1])])
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(steps)

    st = PlatoonState.cruising(na, float(profile[0]), gap_av, gap_hv)
    v_h = float(st.hv_hist[0])
    lead_series = [float(st.v_av[-1])] * (driver.delay + 1)
    names = (["t"] + [f"p_av{n}" for n in range(na)] + [f"v_av{n}" for n in range(na)] + ["p_hv", "v_hv"]
             + [f"gap_av{n}" for n in range(1, na)] + ["gap_hv", "v_ref"] + [f"acc{n}" for n in range(na)]
             + ["hv_pred", "gp_mean", "mu_hv1", "std_hv1", "required_gap1", "std_hv_end", "soft", "slack",
                "qp_iterations"])
    cols = {n: [] for n in names}
    log = PlatoonLog(controller, T, lim.delta, cols)
    prev = None
    for k in range(steps + 1):
        row = {"t": k * T, "p_hv": st.p_hv, "v_hv": v_h, "v_ref": ref[k], "gap_hv": st.p_av[-1] - st.p_hv}
        for n in range(na):
            row[f"p_av{n}"] = st.p_av[n]
            row[f"v_av{n}"] = st.v_av[n]
        for n in range(1, na):
            row[f"gap_av{n}"] = st.p_av[n - 1] - st.p_av[n]
        gaps = [row[f"gap_av{n}"] for n in range(1, na)] + [row["gap_hv"]]
        violated = min(gaps) < lim.delta - 1e-9
        if k == steps or violated:
            for n_ in names[names.index("acc0"):]:
                row[n_] = np.nan
            for n_ in names:
                cols[n_].append(float(row[n_]))
            if violated:
                log.failure_step = k
            break
        t0 = time.perf_counter()
        sol = solve_platoon_ocp(st, ref[k + 1 : k + 1 + N], lim, hv_model.arx, gp, prev)
        log.solve_times.append(time.perf_counter() - t0)
        prev = sol
        acc = sol.acc[:, 0]
        for n in range(na):
            row[f"acc{n}"] = acc[n]
        row["hv_pred"] = sol.v_hv[0] + (sol.qp.gp_mean[0] if gp is not None else 0.0)
        row["gp_mean"] = sol.qp.gp_mean[0]
        row["mu_hv1"] = sol.mu_hv[1]
        row["std_hv1"] = np.sqrt(sol.sigma_hv[1])
        row["required_gap1"] = required_gap(sol.sigma_hv[1], lim)
        row["std_hv_end"] = np.sqrt(sol.sigma_hv[-1])
        row["soft"] = float(sol.soft)
        row["slack"] = sol.slack_max
        row["qp_iterations"] = sol.iterations
        for n_ in names:
            cols[n_].append(float(row[n_]))

        # Plant update: HV reacts to the delayed last-AV speed.
        v_h = hv_driver_step(v_h, lead_series[-1 - driver.delay], driver, noise[k])
        lead_now = float(st.v_av[-1])
        p_new = st.p_av + T * st.v_av
        v_new = st.v_av + T * acc
        st = PlatoonState(p_new, v_new, st.p_hv + T * v_h,
                          np.concatenate([[v_h], st.hv_hist[:-1]]),
                          np.concatenate([[lead_now], st.lead_hist[:-1]]))
        lead_series.append(float(v_new[-1]))
    log.columns = {n_: np.asarray(v, dtype=float) for n_, v in cols.items()}
    return log

