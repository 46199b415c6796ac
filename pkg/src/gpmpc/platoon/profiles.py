"""Leader reference speed profiles."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

PROFILES = ("constant", "emergency_brake", "wltp_like")


def _ramp_to(v: float, target: float, rate: float, T: float) -> list[float]:
    out = []
    step = rate * T
    while abs(target - v) > 1e-12:
        v = min(v + step, target) if target > v else max(v - step, target)
        out.append(v)
    return out


def speed_profile(kind: str, duration: float = 60.0, T: float = 0.1, cruise: float = 15.0, seed: int = 0,
                  acc_min: float = -6.0, acc_max: float = 3.0, v_max: float = 30.0, brake_at: float = 10.0,
                  stop_hold: float = 3.0) -> NDArray:
    """Reference speed sampled every ``T`` for ``duration`` seconds (``round(duration / T) + 1`` samples).

    ``emergency_brake`` cruises until ``brake_at``, brakes at ``acc_min`` to
    standstill, holds for ``stop_hold`` and accelerates back at ``acc_max``.
    ``wltp_like`` is a seeded sequence of urban and extra-urban segments with
    accelerations inside ``[acc_min, acc_max]``.
    """
    if duration <= 0 or T <= 0:
        raise ValueError("duration and T must be positive")
    n = int(round(duration / T)) + 1
    if kind == "constant":
        return np.full(n, float(cruise))
    if kind == "emergency_brake":
        v = [float(cruise)] * max(1, int(round(brake_at / T)))
        v += _ramp_to(cruise, 0.0, -acc_min, T)
        v += [0.0] * int(round(stop_hold / T))
        v += _ramp_to(0.0, cruise, acc_max, T)
    elif kind == "wltp_like":
        rng = np.random.default_rng(seed)
        v = [float(cruise)]
        while len(v) < n:
            urban = len(v) < n // 2
            if urban and rng.random() < 0.25:
                target = 0.0
            else:
                lo, hi = (3.0, 14.0) if urban else (14.0, 0.9 * v_max)
                target = float(rng.uniform(lo, hi))
            rate = float(rng.uniform(0.3, 0.8)) * (acc_max if target > v[-1] else -acc_min)
            v += _ramp_to(v[-1], target, rate, T)
            v += [target] * int(rng.integers(int(2.0 / T), int(8.0 / T)))
    else:
        raise ValueError(f"unknown profile {kind!r}; expected one of {PROFILES}")
    v = np.asarray(v[:n], dtype=float)
    if v.size < n:
        v = np.concatenate([v, np.full(n - v.size, v[-1])])
    return np.clip(v, 0.0, v_max)
