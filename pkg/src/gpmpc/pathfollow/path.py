"""Polyline paths with arc-length parameterization and path-frame errors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from gpmpc.pathfollow.robot import RobotPose, wrap_angle

SEARCH_WINDOW = 2.0


@dataclass(frozen=True, eq=False)
class PathDef:
    """Ordered waypoints traversed at a constant target speed.

    Attributes
    ----------
    waypoints : ndarray, shape (M, 2)
    speed : float
        Target speed (m/s).
    closed : bool
        When true the last waypoint connects back to the first.
    """

    waypoints: NDArray
    speed: float = 1.0
    closed: bool = False
    s: NDArray = field(init=False)
    heading: NDArray = field(init=False)
    _kappa_v: NDArray = field(init=False)

    def __post_init__(self):
        W = np.asarray(self.waypoints, dtype=float)
        if W.ndim != 2 or W.shape[1] != 2 or W.shape[0] < 2:
            raise ValueError("waypoints must be an (M >= 2, 2) array")
        if not np.all(np.isfinite(W)):
            raise ValueError("waypoints must be finite")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.closed and np.allclose(W[0], W[-1]):
            W = W[:-1]
        pts = np.vstack([W, W[:1]]) if self.closed else W
        seg = np.diff(pts, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lens <= 0):
            raise ValueError("consecutive waypoints must be distinct")
        W.setflags(write=False)
        object.__setattr__(self, "waypoints", W)
        object.__setattr__(self, "s", np.concatenate([[0.0], np.cumsum(lens)]))
        hd = np.arctan2(seg[:, 1], seg[:, 0])
        object.__setattr__(self, "heading", hd)
        # curvature at interior vertices from the turn angle over the mean neighbour length
        turn = wrap_angle(np.diff(hd))
        kv = np.zeros(len(pts))
        kv[1:-1] = turn / (0.5 * (lens[:-1] + lens[1:]))
        if self.closed:
            kv[0] = kv[-1] = wrap_angle(hd[0] - hd[-1]) / (0.5 * (lens[0] + lens[-1]))
        else:
            kv[0], kv[-1] = kv[1] if len(kv) > 2 else 0.0, kv[-2] if len(kv) > 2 else 0.0
        object.__setattr__(self, "_kappa_v", kv)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def _pts(self) -> NDArray:
        return np.vstack([self.waypoints, self.waypoints[:1]]) if self.closed else self.waypoints

    def _norm_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.length)
        return np.clip(s, 0.0, self.length)

    def point_at(self, s) -> tuple[NDArray, NDArray, NDArray]:
        """Position ``(x, y)`` and segment heading at arc length(s) ``s``."""
        s = np.atleast_1d(self._norm_s(s))
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.heading) - 1)
        t = s - self.s[i]
        P = self._pts
        x = P[i, 0] + t * np.cos(self.heading[i])
        y = P[i, 1] + t * np.sin(self.heading[i])
        return x, y, self.heading[i]

    def curvature_at(self, s) -> NDArray:
        s = self._norm_s(s)
        return np.interp(s, self.s, self._kappa_v)

    def beyond_end(self, s: float) -> bool:
        return (not self.closed) and s >= self.length - 1e-9


def straight_path(length: float = 40.0, speed: float = 1.0, spacing: float = 0.5, heading: float = 0.0) -> PathDef:
    n = max(2, int(round(length / spacing)) + 1)
    r = np.linspace(0.0, length, n)
    return PathDef(np.column_stack([r * math.cos(heading), r * math.sin(heading)]), speed)


def circle_path(radius: float = 6.0, speed: float = 1.0, spacing: float = 0.05) -> PathDef:
    """Counter-clockwise circle starting at the origin heading along +x."""
    n = max(8, int(round(2 * math.pi * radius / spacing)))
    phi = np.arange(n) * 2 * math.pi / n
    return PathDef(np.column_stack([radius * np.sin(phi), radius * (1 - np.cos(phi))]), speed, closed=True)


def figure_eight_path(size: float = 6.0, speed: float = 1.0, samples: int = 800) -> PathDef:
    """Lemniscate of Gerono ``(a sin t, a sin t cos t)``; lobe tip radius equals ``a``."""
    t = np.arange(samples) * 2 * math.pi / samples
    return PathDef(np.column_stack([size * np.sin(t), size * np.sin(t) * np.cos(t)]), speed, closed=True)


def load_path_csv(path, speed: float = 1.0, closed: bool = False) -> PathDef:
    """Read waypoints from a CSV with ``x,y`` header columns."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "x" not in rows[0] or "y" not in rows[0]:
        raise ValueError(f"{path}: expected columns x,y")
    return PathDef(np.array([[float(r["x"]), float(r["y"])] for r in rows]), speed, closed)


def path_errors(pose: RobotPose, path: PathDef, s_hint: float | None = None,
                window: float = SEARCH_WINDOW) -> tuple[float, float, float]:
    """Signed lateral error (left positive), heading error and progress.

    The nearest point is searched over all segments, or only those within
    ``window`` metres of arc length around ``s_hint`` (needed on
    self-intersecting paths).
    """
    P = path._pts
    A = P[:-1]
    D = np.diff(P, axis=0)
    p = np.array([pose.x, pose.y])
    idx = np.arange(len(A))
    if s_hint is not None:
        lo, hi = path.s[:-1], path.s[1:]
        if path.closed:
            L = path.length
            c = np.mod(s_hint, L)
            # segment-to-hint arc distance on the loop
            gap = np.minimum(np.abs(np.mod(lo - c + L / 2, L) - L / 2), np.abs(np.mod(hi - c + L / 2, L) - L / 2))
            inside = (lo <= c) & (c <= hi)
            idx = idx[(gap <= window) | inside]
        else:
            idx = idx[(hi >= s_hint - window) & (lo <= s_hint + window)]
        if idx.size == 0:
            idx = np.arange(len(A))
    Ai, Di = A[idx], D[idx]
    L2 = np.sum(Di * Di, axis=1)
    t = np.clip(np.sum((p - Ai) * Di, axis=1) / L2, 0.0, 1.0)
    Q = Ai + t[:, None] * Di
    d2 = np.sum((p - Q) ** 2, axis=1)
    j = int(np.argmin(d2))
    seg = idx[j]
    hd = path.heading[seg]
    rel = p - Q[j]
    e_lat = float(math.cos(hd) * rel[1] - math.sin(hd) * rel[0])
    e_head = wrap_angle(pose.theta - hd)
    s = float(path.s[seg] + t[j] * math.sqrt(L2[j]))
    return e_lat, e_head, s
