"""Dense strictly convex QP solver.

Solves ``min 1/2 x^T H x + g^T x  s.t.  G x <= h`` with the dual
active-set method of Goldfarb and Idnani. The active-set projections are
recomputed from a Cholesky factor of ``H`` at each iteration, which is
cheap at the sizes used here and avoids factor-update bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from gpmpc.errors import InfeasibleError, SingularError


@dataclass
class QpResult:
    x: NDArray
    objective: float
    active: list = field(default_factory=list)
    multipliers: NDArray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    kkt_residual: float = 0.0


def qp_objective(H, g, x) -> float:
    return float(0.5 * x @ H @ x + g @ x)


def kkt_residual(H, g, G, h, x, lam) -> float:
    """Max of stationarity, primal infeasibility, dual infeasibility and complementarity."""
    H, g, G, h = (np.asarray(a, dtype=float) for a in (H, g, G, h))
    lam = np.asarray(lam, dtype=float)
    stat = H @ x + g + (G.T @ lam if G.size else 0.0)
    slack = G @ x - h if G.size else np.zeros(0)
    parts = [np.max(np.abs(stat), initial=0.0), np.max(slack, initial=0.0), np.max(-lam, initial=0.0),
             np.max(np.abs(lam * slack), initial=0.0)]
    return float(max(parts))


def solve_qp(H, g, G=None, h=None, max_iter: int | None = None, tol: float = 1e-9) -> QpResult:
    """Goldfarb-Idnani dual active-set method.

    Raises
    ------
    SingularError
        ``H`` is not positive definite.
    InfeasibleError
        The constraints admit no solution.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = g.size
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    if H.shape != (n, n) or G.shape[1] != n or G.shape[0] != h.size:
        raise ValueError("inconsistent QP dimensions")
    try:
        L = np.linalg.cholesky(0.5 * (H + H.T))
    except np.linalg.LinAlgError as exc:
        raise SingularError("QP Hessian is not positive definite") from exc
    # Constraints as N^T x >= b.
    Nmat = -G.T
    b = -h
    m = h.size
    row_scale = np.maximum(np.linalg.norm(Nmat, axis=0), 1e-300)
    Linv_N = sla.solve_triangular(L, Nmat, lower=True)  # L^-1 n_i
    x = -sla.cho_solve((L, True), g)
    active: list[int] = []
    u = np.zeros(0)
    max_iter = max_iter or 10 * (n + m) + 50
    it = 0

    def directions(p):
        # Primal step z = H^+ n_p and dual step r = N* n_p for the current active set.
        w = Linv_N[:, p]
        if not active:
            return sla.solve_triangular(L, w, lower=True, trans="T"), np.zeros(0)
        B = Linv_N[:, active]
        Qb, Rb = np.linalg.qr(B)
        proj = Qb.T @ w
        r = sla.solve_triangular(Rb, proj)
        z = sla.solve_triangular(L, w - Qb @ proj, lower=True, trans="T")
        return z, r

    while True:
        s = Nmat.T @ x - b if m else np.zeros(0)
        viol = s / row_scale
        if m == 0 or viol.min() >= -tol * (1.0 + np.abs(b) / row_scale).max():
            break
        cand = viol.copy()
        cand[active] = np.inf
        p = int(np.argmin(cand))
        if cand[p] >= -tol * (1.0 + abs(b[p]) / row_scale[p]):
            break
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise InfeasibleError("QP iteration limit reached")
            z, r = directions(p)
            t1, k_drop = np.inf, -1
            pos = np.where(r > 1e-14)[0]
            if pos.size:
                ratios = u_plus[pos] / r[pos]
                j = int(np.argmin(ratios))
                t1, k_drop = float(ratios[j]), int(pos[j])
            nz = float(z @ Nmat[:, p])
            if np.linalg.norm(z) <= 1e-12 * max(1.0, np.linalg.norm(x)) or nz <= 1e-14 * row_scale[p] ** 2:
                if k_drop < 0:
                    raise InfeasibleError("constraints are infeasible")
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                del active[k_drop]
                u_plus = np.delete(u_plus, k_drop)
                continue
            sp = float(Nmat[:, p] @ x - b[p])
            t2 = -sp / nz
            t = min(t1, t2)
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            del active[k_drop]
            u_plus = np.delete(u_plus, k_drop)
    lam = np.zeros(m)
    lam[active] = np.maximum(u, 0.0)
    return QpResult(x, qp_objective(H, g, x), sorted(active), lam, it, kkt_residual(H, g, G, h, x, lam))
