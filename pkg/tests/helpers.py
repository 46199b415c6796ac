"""Independent oracles shared by the module and acceptance tests."""

from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from gpmpc.gp import GpDataset, GpHyperparams, gp_fit
from gpmpc.platoon import ArxModel, PlatoonLimits, PlatoonState


def enumerate_qp(H, g, G, h, tol=1e-8, chunk=20_000):
    """Minimize ``1/2 x'Hx + g'x`` s.t. ``Gx <= h`` by enumerating active sets.

    Active sets are tried by increasing size; one whose equality solve is
    primal feasible with nonnegative multipliers is the unique optimum of
    the strictly convex problem. Each candidate set ``S`` solves
    ``W_SS lam = r_S`` with ``W = G H^-1 G'`` and ``r = G x0 - h`` where
    ``x0`` is the unconstrained minimizer. Rows without decision dependence
    are dropped and a row is never combined with its mirror image.
    Returns ``(x, objective)`` or ``None`` when no active set qualifies.
    """
    H, g, G, h = (np.asarray(a, dtype=float) for a in (H, g, G, h))
    keep = np.linalg.norm(G, axis=1) > 1e-12
    if np.any(h[~keep] < -tol):
        return None
    G, h = G[keep], h[keep]
    m = h.size
    Hinv = np.linalg.inv(H)
    x0 = -Hinv @ g
    W = G @ Hinv @ G.T
    r = G @ x0 - h
    scale = 1.0 + np.abs(h)
    mirror = np.zeros((m, m), dtype=bool)
    for a in range(m):
        for b in range(m):
            mirror[a, b] = a != b and np.allclose(G[a], -G[b], atol=1e-12)

    def finish(lam, S):
        x = x0 - Hinv @ G[list(S)].T @ lam
        return x, float(0.5 * x @ H @ x + g @ x)

    if np.all(r <= tol * scale):
        return finish(np.zeros(0), ())
    for size in range(1, min(g.size, m) + 1):
        sets = [S for S in combinations(range(m), size)
                if not any(mirror[a, b] for a, b in combinations(S, 2))]
        for start in range(0, len(sets), chunk):
            idx = np.array(sets[start:start + chunk])
            Wss = W[idx[:, :, None], idx[:, None, :]]
            ok = np.abs(np.linalg.det(Wss)) > 1e-12 * (1 + np.abs(Wss).max(axis=(1, 2))) ** size
            if not ok.any():
                continue
            idx, Wss = idx[ok], Wss[ok]
            lam = np.linalg.solve(Wss, r[idx][:, :, None])[:, :, 0]
            slack = r[None, :] - np.einsum("kij,kj->ki", W[:, idx].transpose(1, 0, 2), lam)
            good = np.all(lam >= -tol, axis=1) & np.all(slack <= tol * scale, axis=1)
            if good.any():
                k = int(np.argmax(good))
                return finish(lam[k], idx[k])
    return None


def random_arx(rng):
    """Stable follower: small lag-1 feedback, lead weights summing to about one."""
    b = rng.dirichlet(np.ones(4)) * rng.uniform(0.9, 1.05)
    c = np.zeros(4)
    c[0] = rng.uniform(-0.3, 0.0)
    c[1] = -0.5 * c[0] * rng.uniform(0, 1)
    return ArxModel(c, b)


def random_hv_gp(rng):
    X = rng.uniform(5, 20, (15, 2))
    y = 0.3 * np.sin(X[:, 0] / 3) - 0.02 * (X[:, 1] - X[:, 0])
    return gp_fit(GpDataset(X, y), GpHyperparams(0.3, [4.0, 4.0], 0.05))


def random_platoon_instance(rng, N):
    """Two-AV state, reference and limits for a short horizon (feasibility not guaranteed)."""
    lim = PlatoonLimits(N=N, n_av=2, delta=10.0, acc_min=-3.0, acc_max=1.5, v_max=20.0,
                        R=float(rng.uniform(0.2, 2.0)), Q1=float(rng.uniform(1, 20)), Q2=float(rng.uniform(1, 20)))
    v = rng.uniform(6, 18, 2)
    gap_av, gap_hv = rng.uniform(10.2, 14.0), rng.uniform(10.5, 16.0)
    st = PlatoonState([gap_hv + gap_av, gap_hv], v, 0.0, rng.uniform(4, 18, 4), rng.uniform(4, 18, 4))
    v_ref = rng.uniform(0, 20) + rng.normal(0, 1, N)
    return st, v_ref, lim


def is_feasible(G, h):
    """Polyhedron check by a phase-one linear program."""
    res = linprog(np.zeros(G.shape[1]), A_ub=G, b_ub=h, bounds=[(None, None)] * G.shape[1], method="highs")
    return res.status == 0
