"""Human-driven vehicle (HV) velocity models and a synthetic driver.

The nominal model is a four-lag ARX predictor driven by the velocity of
the last AV; a GP on ``(v_H[k-1], v_lead[k-1])`` corrects its residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from gpmpc.errors import InsufficientDataError
from gpmpc.gp.core import GpDataset, GpModel, fit_normalized, optimize_hyperparams
from gpmpc.gp.dispatch import predict
from gpmpc.pathfollow.data import default_hyperparams

LAGS = 4
MIN_ARX_SAMPLES = 50


@dataclass(frozen=True)
class ArxModel:
    """``v_H[k] = -sum c_i v_H[k-i] + sum b_i v_lead[k-i]`` for ``i = 1..4``."""

    c: NDArray
    b: NDArray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if c.size != LAGS or b.size != LAGS:
            raise ValueError("ARX model needs exactly 4 coefficients per input")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
            raise ValueError("ARX coefficients must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)


def arx_predict(model: ArxModel, hv_hist, lead_hist) -> float:
    """One-step prediction; histories are ordered most recent first (lag 1..4)."""
    hv = np.asarray(hv_hist, dtype=float).reshape(-1)
    ld = np.asarray(lead_hist, dtype=float).reshape(-1)
    if hv.size != LAGS or ld.size != LAGS:
        raise ValueError("histories must hold 4 lags")
    return float(-model.c @ hv + model.b @ ld)


def _lagged(series: NDArray, k: int) -> NDArray:
    return series[k - LAGS : k][::-1]


def episodes(v_hv, v_lead) -> list[tuple[NDArray, NDArray]]:
    """Normalize one log or a list of logs into ``[(v_hv, v_lead), ...]``.

    Lists of arrays are independent episodes; lagged regressors never
    cross an episode boundary.
    """
    multi = isinstance(v_hv, (list, tuple)) and len(v_hv) > 0 and np.ndim(v_hv[0]) == 1
    pairs = zip(v_hv, v_lead) if multi else [(v_hv, v_lead)]
    out = []
    for h, ld in pairs:
        h = np.asarray(h, dtype=float).reshape(-1)
        ld = np.asarray(ld, dtype=float).reshape(-1)
        if h.size != ld.size:
            raise ValueError("velocity logs must have equal length")
        out.append((h, ld))
    if multi and len(out) != len(v_lead):
        raise ValueError("v_hv and v_lead hold different numbers of episodes")
    return out


def arx_regressors(v_hv, v_lead) -> tuple[NDArray, NDArray]:
    """Rows ``[-v_H lags, v_lead lags]`` and targets ``v_H[k]`` for every episode."""
    rows, ys = [], []
    for h, ld in episodes(v_hv, v_lead):
        for k in range(LAGS, h.size):
            rows.append(np.concatenate([-_lagged(h, k), _lagged(ld, k)]))
        ys.append(h[LAGS:])
    return np.array(rows).reshape(-1, 2 * LAGS), np.concatenate(ys)


def _gp_inputs(v_hv, v_lead) -> NDArray:
    X = [np.column_stack([h[LAGS - 1 : -1], ld[LAGS - 1 : -1]]) for h, ld in episodes(v_hv, v_lead)]
    return np.vstack(X)


def fit_arx(v_hv, v_lead) -> ArxModel:
    """Least-squares ARX coefficients from paired velocity logs (one log or a list of episodes).

    Rank-deficient regressors (e.g. constant speeds) get the minimum-norm
    solution, which still reproduces the data.
    """
    n = sum(h.size for h, _ in episodes(v_hv, v_lead))
    if n < MIN_ARX_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_ARX_SAMPLES} samples, got {n}")
    Phi, y = arx_regressors(v_hv, v_lead)
    if y.size == 0:
        raise InsufficientDataError("episodes are too short for 4 lags")
    theta, _, rank, _ = np.linalg.lstsq(Phi, y, rcond=None)
    if rank == 0:
        raise InsufficientDataError("regressor matrix is zero")
    return ArxModel(theta[:LAGS], theta[LAGS:])


def gp_arx_predict(arx: ArxModel, gp, hv_hist, lead_hist) -> tuple[float, float]:
    """ARX prediction plus the GP correction at ``(v_H[k-1], v_lead[k-1])``; returns (mean, latent variance)."""
    base = arx_predict(arx, hv_hist, lead_hist)
    q = np.array([[float(hv_hist[0]), float(lead_hist[0])]])
    m, v = predict(gp, q)
    return base + float(m[0]), float(v[0])


def hv_residual_data(arx: ArxModel, v_hv, v_lead) -> GpDataset:
    """GP dataset of ARX residuals with inputs ``(v_H[k-1], v_lead[k-1])``."""
    Phi, y = arx_regressors(v_hv, v_lead)
    resid = y - Phi @ np.concatenate([arx.c, arx.b])
    return GpDataset(_gp_inputs(v_hv, v_lead), resid)


def train_hv_gp(data: GpDataset, budget: int = 80, seed: int = 0, max_points: int | None = 400) -> GpModel:
    if max_points is not None and data.n > max_points:
        idx = np.unique(np.linspace(0, data.n - 1, max_points).round().astype(int))
        data = data.subset(idx)
    centered = GpDataset(data.X, data.y - np.mean(data.y))
    h = optimize_hyperparams(centered, default_hyperparams(centered), budget=budget, restarts=3, seed=seed)
    return fit_normalized(data, h)


@dataclass(frozen=True)
class HvDriverParams:
    """Synthetic driver.

    ``v[k] = v[k-1] + g s tanh(e / s) - drag v[k-1]^2 / v_max + noise``
    with ``e = v_lead[k - delay] - v[k-1]``, ``s = saturation`` and the
    speed-dependent gain ``g = gain (1 - speed_fade v[k-1] / v_max)``; the
    result is clipped to ``[0, v_max]``. A finite ``saturation`` caps how
    hard the driver reacts to large speed differences (``None`` is linear)
    and ``speed_fade`` makes the driver less attentive at high speed.
    """

    delay: int = 0
    gain: float = 1.0
    noise_std: float = 0.0
    saturation: float | None = None
    drag: float = 0.0
    speed_fade: float = 0.0
    v_max: float = 40.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.saturation is not None and self.saturation <= 0:
            raise ValueError("saturation must be positive")
        if not (0.0 <= self.speed_fade < 1.0):
            raise ValueError("speed_fade must be in [0, 1)")

    @classmethod
    def distracted(cls) -> "HvDriverParams":
        return cls(delay=1, gain=0.5, noise_std=0.1, saturation=1.0, speed_fade=0.9, v_max=30.0)


def hv_driver_step(v_prev: float, lead_delayed: float, params: HvDriverParams, noise: float = 0.0) -> float:
    e = lead_delayed - v_prev
    if params.saturation is not None:
        e = params.saturation * math.tanh(e / params.saturation)
    gain = params.gain * (1.0 - params.speed_fade * v_prev / params.v_max)
    v = v_prev + gain * e - params.drag * v_prev * v_prev / params.v_max
    if v <= 0.0:
        return 0.0  # a stopped driver holds the brake
    v += params.noise_std * noise
    return float(min(max(v, 0.0), params.v_max))


def synth_hv_driver(lead, params: HvDriverParams, seed: int = 0, v0: float | None = None) -> NDArray:
    """HV velocity trace responding to a lead-velocity trace.

    Sample ``k`` reacts to ``lead[k - delay]`` (clamped at the first
    sample); ``v0`` is the speed before the first sample (default ``lead[0]``).
    """
    lead = np.asarray(lead, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(lead.size)
    v = np.empty(lead.size)
    prev = float(lead[0]) if v0 is None else float(v0)
    for k in range(lead.size):
        prev = hv_driver_step(prev, lead[max(k - params.delay, 0)], params, noise[k])
        v[k] = prev
    return v


def rmse(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(math.sqrt(np.mean((a - b) ** 2)))


def one_step_predictions(arx: ArxModel, gp, v_hv, v_lead) -> NDArray:
    """One-step HV velocity predictions over a log or episodes (first 4 samples of each skipped)."""
    Phi, _ = arx_regressors(v_hv, v_lead)
    pred = Phi @ np.concatenate([arx.c, arx.b])
    if gp is not None:
        pred = pred + predict(gp, _gp_inputs(v_hv, v_lead), return_var=False)
    return pred
