import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpmpc.errors import DimensionError
from gpmpc.gp import (
    GpDataset,
    GpHyperparams,
    MvnDist,
    fic_fit,
    fic_predict,
    gp_fit,
    gp_predict,
    kernel_matrix,
    mvn_condition,
    predict_many,
    select_inducing,
)
from gpmpc.gp.sparse import fic_from_exact, fic_predict_many


def dense_fic(data, h, U, Xq):
    """FIC posterior assembled from dense matrices (no factor reuse)."""
    Kuu = kernel_matrix(U, U, h) + 1e-12 * np.eye(len(U))
    Kfu = kernel_matrix(data.X, U, h)
    Ksu = kernel_matrix(Xq, U, h)
    Qff = Kfu @ np.linalg.solve(Kuu, Kfu.T)
    Qsf = Ksu @ np.linalg.solve(Kuu, Kfu.T)
    lam = h.signal_std**2 - np.diag(Qff) + h.noise_std**2
    C = Qff + np.diag(lam)
    mean = Qsf @ np.linalg.solve(C, data.y)
    var = h.signal_std**2 - np.einsum("ij,ji->i", Qsf, np.linalg.solve(C, Qsf.T))
    return mean, var


def sine_data(n, seed=0, noise=0.05):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-3, 3, (n, 1))
    return GpDataset(X, np.sin(2 * X[:, 0]) + noise * rng.standard_normal(n))


H1 = GpHyperparams(1.0, [0.6], 0.05)


def test_inducing_equal_training_matches_exact():
    rng = np.random.default_rng(1)
    X = rng.uniform(-2, 2, (30, 2))
    data = GpDataset(X, rng.normal(size=30))
    h = GpHyperparams(1.3, [0.7, 1.1], 0.2)
    exact = gp_fit(data, h)
    sparse = fic_fit(data, h, X)
    Xq = rng.uniform(-2.5, 2.5, (40, 2))
    me, ve = predict_many(exact, Xq)
    ms, vs = fic_predict_many(sparse, Xq)
    assert np.max(np.abs(me - ms)) <= 1e-6
    assert np.max(np.abs(ve - vs)) <= 1e-6


def test_single_point_single_inducing_is_exact():
    data = GpDataset([[0.4]], [1.7])
    exact = gp_fit(data, H1)
    sparse = fic_fit(data, H1, [[0.4]])
    for xq in (0.4, 0.0, 1.5):
        assert fic_predict(sparse, [xq]) == pytest.approx(gp_predict(exact, [xq]), abs=1e-9)


def test_matches_dense_fic_oracle():
    rng = np.random.default_rng(2)
    data = GpDataset(rng.uniform(-2, 2, (60, 2)), rng.normal(size=60))
    h = GpHyperparams(0.9, [0.5, 0.8], 0.1)
    U = rng.uniform(-2, 2, (8, 2))
    Xq = rng.uniform(-2, 2, (25, 2))
    m, v = fic_predict_many(fic_fit(data, h, U), Xq)
    mo, vo = dense_fic(data, h, U, Xq)
    np.testing.assert_allclose(m, mo, atol=1e-8)
    np.testing.assert_allclose(v, vo, atol=1e-8)


def test_far_query_recovers_prior():
    data = sine_data(50)
    sparse = fic_fit(data, H1, data.X[::5])
    mean, var = fic_predict(sparse, [100.0])
    assert abs(mean) <= 1e-12
    assert var == pytest.approx(1.0, abs=1e-12)


def test_sine_n200_m20_gap_below_tenth_of_signal():
    data = sine_data(200)
    exact = gp_fit(data, H1)
    sparse = fic_from_exact(exact, 20, "greedy-variance")
    grid = np.linspace(-3, 3, 301)[:, None]
    gap = np.sqrt(np.mean((predict_many(exact, grid, return_var=False) - fic_predict_many(sparse, grid, False)) ** 2))
    assert gap <= 0.1 * H1.signal_std


def test_noise_free_variance_zero_at_inducing_training_point():
    data = GpDataset(np.linspace(-1, 1, 6)[:, None], np.arange(6.0))
    h = GpHyperparams(1.0, [0.5], 0.0)
    sparse = fic_fit(data, h, data.X[[1, 4]])
    assert fic_predict(sparse, data.X[1])[1] <= 1e-9
    assert fic_predict(sparse, data.X[4])[1] <= 1e-9


def test_fic_from_exact_keeps_hyperparameters_and_offset():
    data = GpDataset(sine_data(80).X, sine_data(80).y + 3.0)
    exact = gp_fit(data, H1, offset=3.0)
    sparse = fic_from_exact(exact, 10)
    assert sparse.hyperparams is exact.hyperparams
    assert sparse.offset == 3.0
    assert sparse.n_inducing == 10
    assert fic_predict(sparse, [50.0])[0] == pytest.approx(3.0)


def test_fic_rejects_bad_inducing_and_dimension():
    data = sine_data(5)
    with pytest.raises(ValueError):
        fic_fit(data, H1, np.zeros((6, 1)))
    with pytest.raises(ValueError):
        fic_fit(data, H1, [[np.nan]])
    sparse = fic_fit(data, H1, data.X[:2])
    with pytest.raises(DimensionError):
        fic_predict(sparse, [0.0, 1.0])


# ---------------------------------------------------------------- inducing selection

def test_subset_random_full_count_returns_all_inputs():
    data = sine_data(12)
    np.testing.assert_array_equal(select_inducing(data, 12, "subset-random", seed=3), data.X)


def test_subset_random_is_a_deterministic_subset():
    data = sine_data(40)
    a = select_inducing(data, 7, "subset-random", seed=5)
    b = select_inducing(data, 7, "subset-random", seed=5)
    np.testing.assert_array_equal(a, b)
    assert all(any(np.array_equal(u, x) for x in data.X) for u in a)


def test_kmeans_single_centre_inside_bounding_box():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.2, (20, 2)), rng.normal(3, 0.2, (20, 2))])
    U = select_inducing(GpDataset(X, np.zeros(40)), 1, "kmeans-like", seed=1)
    assert U.shape == (1, 2)
    assert np.all(U >= X.min(axis=0)) and np.all(U <= X.max(axis=0))


def test_kmeans_is_deterministic_given_seed():
    data = sine_data(60)
    np.testing.assert_array_equal(select_inducing(data, 5, "kmeans-like", 9), select_inducing(data, 5, "kmeans-like", 9))


def test_greedy_variance_matches_brute_force_oracle():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (50, 2))
    h = GpHyperparams(1.0, [0.6, 0.9], 0.1)
    chosen = []
    for _ in range(8):
        var = []
        for i in range(50):
            if i in chosen:
                var.append(-np.inf)
                continue
            Z = np.vstack([X[chosen], X[i][None, :]])
            K = kernel_matrix(Z, Z, h) + 1e-12 * np.eye(len(Z))
            cond = mvn_condition(MvnDist(np.zeros(len(Z)), K), list(range(len(chosen))), np.zeros(len(chosen))) \
                if chosen else MvnDist(np.zeros(1), K)
            var.append(cond.cov[-1, -1])
        chosen.append(int(np.argmax(var)))
    U = select_inducing(GpDataset(X, np.zeros(50)), 8, "greedy-variance", h=h)
    np.testing.assert_array_equal(U, X[chosen])


def test_greedy_prefix_monotone_worst_case_error():
    data = sine_data(150, seed=3)
    exact = gp_fit(data, H1)
    grid = np.linspace(-3, 3, 200)[:, None]
    ref = predict_many(exact, grid, return_var=False)
    errs = []
    for m in (5, 10, 20, 40):
        sp = fic_from_exact(exact, m, "greedy-variance")
        errs.append(np.max(np.abs(fic_predict_many(sp, grid, False) - ref)))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_selection_errors():
    data = sine_data(5)
    with pytest.raises(ValueError):
        select_inducing(data, 6, "subset-random")
    with pytest.raises(ValueError):
        select_inducing(data, 0, "subset-random")
    with pytest.raises(ValueError):
        select_inducing(data, 2, "greedy-variance")
    with pytest.raises(ValueError):
        select_inducing(data, 2, "nearest")


def test_mean_prediction_at_least_ten_times_faster_at_n2000():
    data = sine_data(2000, seed=7)
    exact = gp_fit(data, H1)
    sparse = fic_from_exact(exact, 20, "subset-random")
    Xq = np.linspace(-3, 3, 200)[:, None]

    def best(fn, reps=7):
        out = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            out.append(time.perf_counter() - t0)
        return min(out)

    t_exact = best(lambda: predict_many(exact, Xq, return_var=False))
    t_sparse = best(lambda: fic_predict_many(sparse, Xq, return_var=False))
    assert t_exact >= 10 * t_sparse


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 15))
def test_variance_within_prior_bounds(seed, m):
    rng = np.random.default_rng(seed)
    data = GpDataset(rng.uniform(-2, 2, (20, 1)), rng.normal(size=20))
    h = GpHyperparams(rng.uniform(0.5, 2), [rng.uniform(0.2, 2)], rng.uniform(0.01, 0.5))
    sparse = fic_fit(data, h, select_inducing(data, m, "subset-random", seed))
    _, var = fic_predict_many(sparse, rng.uniform(-3, 3, (30, 1)))
    assert np.all(var >= 0)
    assert np.all(var <= h.signal_std**2 + 1e-10)
