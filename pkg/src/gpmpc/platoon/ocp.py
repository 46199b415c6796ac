"""Chance-constrained platoon OCP.

``N_a`` automated vehicles (AVs) lead a human-driven vehicle (HV). The AV
dynamics are eliminated, so the decision vector holds only the stacked
accelerations ``a[n, i]`` (vehicle-major). The HV position is a Gaussian
belief: its mean follows the ARX velocity prediction (affine in the AV
accelerations) plus a GP correction, and its variance accumulates the GP
variance. GP terms are evaluated once per step along the previous
solution, so each step is a single convex QP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from gpmpc.errors import ConfigError, InfeasibleError, SingularError, SolverFailure
from gpmpc.gp.dispatch import noise_var, predict
from gpmpc.mpc import inv_norm_cdf
from gpmpc.platoon.hv import LAGS, ArxModel
from gpmpc.platoon.qp import QpResult, solve_qp

SLACK_WEIGHT = 1e6


@dataclass(frozen=True)
class PlatoonLimits:
    """Horizon, safety and actuation parameters (SI units)."""

    T: float = 0.1
    N: int = 20
    n_av: int = 3
    delta: float = 10.0
    delta_ext: float = 0.0
    p_def: float = 0.95
    v_min: float = 0.0
    v_max: float = 30.0
    acc_min: float = -6.0
    acc_max: float = 3.0
    R: float = 1.0
    Q1: float = 10.0
    Q2: float = 10.0

    def __post_init__(self):
        errors = []
        if self.T <= 0:
            errors.append("T must be positive")
        if self.N < 1:
            errors.append("N must be >= 1")
        if self.n_av < 1:
            errors.append("n_av must be >= 1")
        if self.delta <= 0:
            errors.append("delta must be positive")
        if self.delta_ext < 0:
            errors.append("delta_ext must be non-negative")
        if not (0.5 <= self.p_def < 1.0):
            errors.append("p_def must be in [0.5, 1)")
        if not self.v_min < self.v_max:
            errors.append("v_min must be below v_max")
        if not self.acc_min < 0.0 < self.acc_max:
            errors.append("acc_min < 0 < acc_max required")
        if self.R <= 0 or self.Q1 < 0 or self.Q2 < 0:
            errors.append("R must be positive and Q1, Q2 non-negative")
        if errors:
            raise ConfigError(errors)


@dataclass
class PlatoonState:
    """Measured state at time ``k``.

    ``hv_hist`` and ``lead_hist`` hold ``v[k-1], ..., v[k-4]`` of the HV and
    of the last AV.
    """

    p_av: NDArray
    v_av: NDArray
    p_hv: float
    hv_hist: NDArray
    lead_hist: NDArray

    def __post_init__(self):
        self.p_av = np.asarray(self.p_av, dtype=float).reshape(-1)
        self.v_av = np.asarray(self.v_av, dtype=float).reshape(-1)
        self.hv_hist = np.asarray(self.hv_hist, dtype=float).reshape(-1)
        self.lead_hist = np.asarray(self.lead_hist, dtype=float).reshape(-1)
        self.p_hv = float(self.p_hv)
        if self.p_av.size != self.v_av.size:
            raise ValueError("AV position and velocity vectors differ in length")
        if self.hv_hist.size != LAGS or self.lead_hist.size != LAGS:
            raise ValueError("histories must hold 4 lags")

    @classmethod
    def cruising(cls, n_av: int, v: float, gap_av: float, gap_hv: float) -> "PlatoonState":
        p = gap_hv + gap_av * np.arange(n_av - 1, -1, -1, dtype=float)
        return cls(p, np.full(n_av, v), 0.0, np.full(LAGS, v), np.full(LAGS, v))


def av_step(p: float, v: float, acc: float, T: float) -> tuple[float, float]:
    """``p+ = p + T v``, ``v+ = v + T acc``."""
    return p + T * v, v + T * acc


def hv_belief_step(mu: float, sigma: float, v_hv: float, gp_mean: float, gp_var: float, T: float) -> tuple[float, float]:
    """``mu+ = mu + T v_H + T mu_d``, ``Sigma+ = Sigma + T^2 Sigma_d``."""
    return mu + T * v_hv + T * gp_mean, sigma + T * T * gp_var


def required_gap(sigma: float, limits: PlatoonLimits) -> float:
    """Mean gap ``delta + delta_ext + Phi^-1(p_def) sqrt(sigma)`` that keeps ``P(gap >= delta + delta_ext) >= p_def``."""
    if sigma < 0:
        raise ValueError("variance must be non-negative")
    base = limits.delta + limits.delta_ext
    if sigma == 0.0:
        return base
    return base + inv_norm_cdf(limits.p_def) * math.sqrt(sigma)


def tightened_distance(p_na: float, mu_hv: float, sigma_hv: float, limits: PlatoonLimits) -> tuple[float, bool]:
    """Required AV-HV gap and whether the last AV at ``p_na`` satisfies it."""
    req = required_gap(sigma_hv, limits)
    return req, bool(p_na - mu_hv >= req)


@dataclass
class PlatoonQp:
    """QP data ``min 1/2 a^T H a + g^T a  s.t.  G a <= h`` with row bookkeeping."""

    H: NDArray
    g: NDArray
    G: NDArray
    h: NDArray
    gap_rows: NDArray  # indices of inter-vehicle gap rows (softened on infeasibility)
    const: float = 0.0
    hv_mean: NDArray = field(default_factory=lambda: np.zeros(0))
    hv_var: NDArray = field(default_factory=lambda: np.zeros(0))
    gp_mean: NDArray = field(default_factory=lambda: np.zeros(0))
    gp_var: NDArray = field(default_factory=lambda: np.zeros(0))
    # affine maps a -> quantity, as (offset, matrix)
    v_av: tuple = ()
    p_av: tuple = ()
    v_hv: tuple = ()
    mu_hv: tuple = ()


@dataclass
class OcpSolution:
    acc: NDArray  # (n_av, N)
    v_av: NDArray  # (n_av, N + 1)
    p_av: NDArray  # (n_av, N + 1)
    v_hv: NDArray  # (N,) predicted HV speeds for steps 0..N-1
    lead_v: NDArray  # (N + 1,) last-AV speeds for steps 0..N
    mu_hv: NDArray  # (N + 1,)
    sigma_hv: NDArray  # (N + 1,)
    objective: float
    kkt_residual: float
    soft: bool
    slack_max: float
    iterations: int
    qp: PlatoonQp


def _integrators(N: int, T: float) -> tuple[NDArray, NDArray]:
    """Maps from one vehicle's accelerations to its speed and position increments at steps 1..N."""
    r = np.arange(N)[:, None]
    c = np.arange(N)[None, :]
    Sv = T * (c <= r)
    Sp = T * T * np.where(c < r, r - c, 0)
    return Sv.astype(float), Sp.astype(float)


def cold_trajectory(state: PlatoonState, N: int) -> tuple[NDArray, NDArray]:
    """Constant-velocity guess: HV speeds (N,) and last-AV speeds (N + 1,)."""
    return np.full(N, state.hv_hist[0]), np.full(N + 1, state.v_av[-1])


def gp_terms(gp, state: PlatoonState, v_hv: NDArray, lead_v: NDArray, use_variance: bool = True) -> tuple[NDArray, NDArray]:
    """GP mean and variance for HV steps ``i = 0..N-1``.

    Step ``i`` is queried at ``(v_H[i-1], v_lead[i-1])``; step 0 uses the
    measured history and later steps the given trajectories.
    """
    N = len(v_hv)
    if gp is None:
        return np.zeros(N), np.zeros(N)
    q = np.column_stack([np.concatenate([[state.hv_hist[0]], v_hv[: N - 1]]),
                         np.concatenate([[state.lead_hist[0]], lead_v[: N - 1]])])
    m, v = predict(gp, q)
    var = v + noise_var(gp) if use_variance else np.zeros(N)
    return np.asarray(m, dtype=float), np.asarray(var, dtype=float)


def shifted_trajectory(sol: OcpSolution | None, state: PlatoonState, N: int) -> tuple[NDArray, NDArray]:
    """Previous solution advanced by one step (last entry repeated); cold start when ``sol`` is None."""
    if sol is None or len(sol.v_hv) != N:
        return cold_trajectory(state, N)
    v_hv = np.concatenate([sol.v_hv[1:], sol.v_hv[-1:]])
    lead = np.concatenate([sol.lead_v[1:], sol.lead_v[-1:]])
    return v_hv, lead


def build_platoon_qp(state: PlatoonState, v_ref, limits: PlatoonLimits, arx: ArxModel, gp=None,
                     eval_traj: tuple[NDArray, NDArray] | None = None, use_variance: bool = True) -> PlatoonQp:
    """Assemble the QP for one step.

    Parameters
    ----------
    v_ref : array, shape (N,)
        Leader reference speed for steps 1..N.
    gp : GP model, optional
        Residual model of the HV speed; ``None`` gives the nominal MPC.
    eval_traj : (v_hv, lead_v), optional
        Trajectory at which the GP terms are frozen (default: constant velocity).
    use_variance : bool
        When False the variance terms are zero and no tightening is applied.
    """
    lim = limits
    N, T, na = lim.N, lim.T, state.p_av.size
    if na != lim.n_av:
        raise ValueError(f"state has {na} AVs, limits expect {lim.n_av}")
    v_ref = np.broadcast_to(np.asarray(v_ref, dtype=float), (N,))
    nv = na * N
    Sv, Sp = _integrators(N, T)
    steps = np.arange(1, N + 1)

    # Speeds and positions of each AV at steps 1..N: offset + A a.
    v_off = np.empty((na, N))
    p_off = np.empty((na, N))
    v_mat = np.zeros((na, N, nv))
    p_mat = np.zeros((na, N, nv))
    for n in range(na):
        v_off[n] = state.v_av[n]
        p_off[n] = state.p_av[n] + steps * T * state.v_av[n]
        v_mat[n][:, n * N : (n + 1) * N] = Sv
        p_mat[n][:, n * N : (n + 1) * N] = Sp

    # Last-AV speed at steps -4..N as affine maps.
    lead_off = np.concatenate([state.lead_hist[::-1], [state.v_av[-1]], v_off[-1]])
    lead_mat = np.vstack([np.zeros((LAGS + 1, nv)), v_mat[-1]])

    def lead(i):  # speed at step i, i >= -4
        return lead_off[i + LAGS], lead_mat[i + LAGS]

    # ARX recursion for HV speeds at steps 0..N-1.
    hv_off = list(state.hv_hist[::-1])
    hv_mat = [np.zeros(nv) for _ in range(LAGS)]
    for i in range(N):
        off, row = 0.0, np.zeros(nv)
        for l in range(1, LAGS + 1):
            off -= arx.c[l - 1] * hv_off[i - l + LAGS]
            row -= arx.c[l - 1] * hv_mat[i - l + LAGS]
            lo, lr = lead(i - l)
            off += arx.b[l - 1] * lo
            row = row + arx.b[l - 1] * lr
        hv_off.append(off)
        hv_mat.append(row)
    vh_off = np.array(hv_off[LAGS:])
    vh_mat = np.array(hv_mat[LAGS:])

    if eval_traj is None:
        eval_traj = cold_trajectory(state, N)
    gm, gv = gp_terms(gp, state, eval_traj[0], eval_traj[1], use_variance)

    # Belief over HV position at steps 0..N.
    mu_off = np.empty(N + 1)
    mu_mat = np.zeros((N + 1, nv))
    sig = np.zeros(N + 1)
    mu_off[0] = state.p_hv
    for i in range(N):
        mu_off[i + 1], sig[i + 1] = hv_belief_step(mu_off[i], sig[i], vh_off[i], gm[i], gv[i], T)
        mu_mat[i + 1] = mu_mat[i] + T * vh_mat[i]

    # Cost.
    H = 2.0 * lim.R * np.eye(nv)
    g = np.zeros(nv)
    const = 0.0

    def add_residual(A, c, w):
        nonlocal H, g, const
        H = H + 2.0 * w * A.T @ A
        g = g + 2.0 * w * A.T @ c
        const += w * float(c @ c)

    if lim.Q1 > 0:
        add_residual(v_mat[0], v_off[0] - v_ref, lim.Q1)
    if lim.Q2 > 0:
        for n in range(1, na):
            add_residual(v_mat[n] - v_mat[n - 1], v_off[n] - v_off[n - 1], lim.Q2)

    # Constraints G a <= h.
    rows, rhs = [], []
    for n in range(1, na):
        # p[n-1] - p[n] >= delta
        rows.append(p_mat[n] - p_mat[n - 1])
        rhs.append(p_off[n - 1] - p_off[n] - lim.delta)
    need = np.array([required_gap(s, lim) for s in sig[1:]])
    rows.append(mu_mat[1:] - p_mat[-1])
    rhs.append(p_off[-1] - mu_off[1:] - need)
    n_gap = sum(r.shape[0] for r in rows)
    for n in range(na):
        rows.append(v_mat[n])
        rhs.append(lim.v_max - v_off[n])
        rows.append(-v_mat[n])
        rhs.append(v_off[n] - lim.v_min)
    rows.append(np.eye(nv))
    rhs.append(np.full(nv, lim.acc_max))
    rows.append(-np.eye(nv))
    rhs.append(np.full(nv, -lim.acc_min))
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    return PlatoonQp(H, g, G, h, np.arange(n_gap), const, mu_off.copy(), sig, gm, gv,
                     (v_off, v_mat), (p_off, p_mat), (vh_off, vh_mat), (mu_off, mu_mat))


def _drop_constant_rows(G, h, tol=1e-12):
    """Remove rows without decision dependence; report whether any of them is violated."""
    nz = np.linalg.norm(G, axis=1) > tol
    violated = bool(np.any(h[~nz] < -1e-9))
    return nz, violated


def _solve_soft(qp: PlatoonQp) -> tuple[QpResult, NDArray]:
    """Slack every gap row with a quadratic penalty."""
    nv = qp.g.size
    ns = qp.gap_rows.size
    H = np.zeros((nv + ns, nv + ns))
    H[:nv, :nv] = qp.H
    H[nv:, nv:] = 2.0 * SLACK_WEIGHT * np.eye(ns)
    g = np.concatenate([qp.g, np.zeros(ns)])
    G = np.hstack([qp.G, np.zeros((qp.G.shape[0], ns))])
    G[qp.gap_rows, nv + np.arange(ns)] = -1.0
    G = np.vstack([G, np.hstack([np.zeros((ns, nv)), -np.eye(ns)])])
    h = np.concatenate([qp.h, np.zeros(ns)])
    keep, violated = _drop_constant_rows(G, h)
    if violated:
        raise InfeasibleError("box constraints are infeasible")
    res = solve_qp(H, g, G[keep], h[keep])
    return res, res.x[nv:]


def solve_platoon_ocp(state: PlatoonState, v_ref, limits: PlatoonLimits, arx: ArxModel, gp=None,
                      previous: OcpSolution | None = None, use_variance: bool = True) -> OcpSolution:
    """Solve one receding-horizon step.

    GP terms are frozen along ``previous`` shifted by one step (or a
    constant-velocity rollout). If the hard problem is infeasible, gap
    constraints are softened with slack weight ``1e6`` and ``soft`` is set.
    """
    lim = limits
    eval_traj = shifted_trajectory(previous, state, lim.N)
    qp = build_platoon_qp(state, v_ref, lim, arx, gp, eval_traj, use_variance)
    keep, violated = _drop_constant_rows(qp.G, qp.h)
    soft, slack_max = False, 0.0
    try:
        if violated:
            raise InfeasibleError("constraint violated at the first predicted step")
        res = solve_qp(qp.H, qp.g, qp.G[keep], qp.h[keep])
        lam = np.zeros(qp.h.size)
        lam[keep] = res.multipliers
        kkt = res.kkt_residual
        a = res.x
    except InfeasibleError:
        try:
            res, slack = _solve_soft(qp)
        except (InfeasibleError, SingularError) as exc:
            raise SolverFailure(f"platoon QP failed: {exc}") from exc
        soft, slack_max = True, float(np.max(slack, initial=0.0))
        a = res.x[: qp.g.size]
        kkt = res.kkt_residual
    na, N = state.p_av.size, lim.N
    v_off, v_mat = qp.v_av
    p_off, p_mat = qp.p_av
    v = np.column_stack([state.v_av, v_off + v_mat @ a])
    p = np.column_stack([state.p_av, p_off + p_mat @ a])
    vh = qp.v_hv[0] + qp.v_hv[1] @ a
    mu = qp.mu_hv[0] + qp.mu_hv[1] @ a
    obj = float(0.5 * a @ qp.H @ a + qp.g @ a + qp.const)
    return OcpSolution(a.reshape(na, N), v, p, vh, v[-1].copy(), mu, qp.hv_var.copy(), obj, float(kkt), soft,
                       slack_max, res.iterations, qp)

