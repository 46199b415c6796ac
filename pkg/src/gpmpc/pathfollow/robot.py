"""Unicycle kinematics and a synthetic slipping plant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class RobotPose:
    """Planar pose; ``theta`` is wrapped to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        vals = (self.x, self.y, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"pose must be finite, got {vals}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> NDArray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "RobotPose":
        return cls(float(a[0]), float(a[1]), float(a[2]))


def unicycle_f(x: NDArray, u: NDArray, T: float) -> NDArray:
    """Unwrapped array form of the discrete unicycle, for prediction models."""
    return np.array([x[0] + T * u[0] * np.cos(x[2]), x[1] + T * u[0] * np.sin(x[2]), x[2] + T * u[1]])


def unicycle_jac(x: NDArray, u: NDArray, T: float) -> tuple[NDArray, NDArray]:
    c, s = np.cos(x[2]), np.sin(x[2])
    A = np.array([[1.0, 0.0, -T * u[0] * s], [0.0, 1.0, T * u[0] * c], [0.0, 0.0, 1.0]])
    B = np.array([[T * c, 0.0], [T * s, 0.0], [0.0, T]])
    return A, B


def unicycle_step(pose: RobotPose, v_cmd: float, omega_cmd: float, T: float) -> RobotPose:
    """One explicit-Euler step of the unicycle with heading wrapped."""
    if T <= 0:
        raise ValueError("T must be positive")
    return RobotPose.from_array(unicycle_f(pose.as_array(), np.array([v_cmd, omega_cmd]), T))


@dataclass(frozen=True)
class SlipParams:
    """Terrain stand-in.

    Realized velocities are ``v_act = gamma_v v + beta_v`` and
    ``w_act = gamma_w w + beta_w sin(theta) + w_bias``, each with additive
    Gaussian noise. ``lateral_drift`` is a sideways body-frame velocity
    (m/s, left positive) such as sliding down a slope.
    """

    gamma_v: float = 0.85
    beta_v: float = 0.0
    gamma_w: float = 0.9
    beta_w: float = 0.0
    w_bias: float = 0.0
    lateral_drift: float = 0.0
    noise_v: float = 0.0
    noise_w: float = 0.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not math.isfinite(v):
                raise ValueError(f"slip parameter {k} must be finite")
        if self.noise_v < 0 or self.noise_w < 0:
            raise ValueError("noise standard deviations must be nonnegative")

    @classmethod
    def none(cls) -> "SlipParams":
        return cls(gamma_v=1.0, gamma_w=1.0)


def disturbed_plant_step(pose: RobotPose, commands, slip: SlipParams, rng=None, T: float = 0.1):
    """Advance the slipping plant one step.

    Parameters
    ----------
    commands : (v_cmd, omega_cmd)
    rng : numpy Generator, int seed or None
        Source of the velocity noise; only drawn from when noise is enabled.

    Returns
    -------
    (RobotPose, (v_act, w_act))
    """
    if T <= 0:
        raise ValueError("T must be positive")
    v_cmd, w_cmd = float(commands[0]), float(commands[1])
    th = pose.theta
    v_act = slip.gamma_v * v_cmd + slip.beta_v
    w_act = slip.gamma_w * w_cmd + slip.beta_w * math.sin(th) + slip.w_bias
    if slip.noise_v > 0 or slip.noise_w > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        e = gen.standard_normal(2)
        v_act += slip.noise_v * e[0]
        w_act += slip.noise_w * e[1]
    c, s = math.cos(th), math.sin(th)
    dl = slip.lateral_drift
    nxt = RobotPose(pose.x + T * (v_act * c - dl * s), pose.y + T * (v_act * s + dl * c), th + T * w_act)
    return nxt, (v_act, w_act)
