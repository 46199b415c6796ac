import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpmpc.errors import DimensionError, FitError, SingularError
from gpmpc.gp import (
    GpDataset,
    GpHyperparams,
    GpModel,
    MvnDist,
    fit_normalized,
    gp_fit,
    gp_mean_gradient,
    gp_predict,
    kernel_matrix,
    kernel_rbf,
    log_marginal_likelihood,
    mvn_condition,
    mvn_sample,
    optimize_hyperparams,
    predict_many,
)


def random_instance(rng, n=None, d=None, noise=True):
    n = n or int(rng.integers(1, 9))
    d = d or int(rng.integers(1, 4))
    X = rng.uniform(-2, 2, (n, d))
    y = rng.normal(size=n)
    h = GpHyperparams(rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0, d), rng.uniform(0.05, 0.5) if noise else 0.0)
    return GpDataset(X, y), h


def dense_kernel(A, B, h):
    """Independent double-loop oracle for the squared-exponential kernel."""
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            r2 = sum(((a[k] - b[k]) / h.length_scales[k]) ** 2 for k in range(len(a)))
            out[i, j] = h.signal_std**2 * math.exp(-0.5 * r2)
    return out


def joint_oracle(data, h, xq):
    """Joint normal of (y_1..y_n, f(xq)) under the zero-mean prior."""
    Z = np.vstack([data.X, xq[None, :]])
    K = dense_kernel(Z, Z, h)
    K[: data.n, : data.n] += h.noise_std**2 * np.eye(data.n)
    return MvnDist(np.zeros(data.n + 1), K)


# ---------------------------------------------------------------- kernel

def test_kernel_zero_distance_is_signal_variance():
    h = GpHyperparams(2.0, [0.7, 1.3])
    assert kernel_rbf([0.3, -1.0], [0.3, -1.0], h) == pytest.approx(4.0, abs=1e-15)


def test_kernel_half_at_sqrt_two_ln_two():
    h = GpHyperparams(1.0, [1.0])
    assert kernel_rbf([0.0], [math.sqrt(2 * math.log(2))], h) == pytest.approx(0.5, abs=1e-12)


def test_kernel_demo_hyperparameters():
    sf, l = 0.0067, 0.0967
    h = GpHyperparams(sf, [l])
    assert kernel_rbf([0.0], [l], h) == pytest.approx(sf**2 * math.exp(-0.5), rel=1e-12)


def test_kernel_matrix_single_point_and_duplicates():
    h = GpHyperparams(1.5, [0.4])
    np.testing.assert_allclose(kernel_matrix([[0.2]], [[0.2]], h), [[2.25]])
    K = kernel_matrix([[0.2], [0.2]], [[0.2], [0.2]], h)
    np.testing.assert_allclose(K, 2.25 * np.ones((2, 2)))
    assert np.linalg.matrix_rank(K) == 1


def test_kernel_matrix_matches_double_loop():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    h = GpHyperparams(1.3, [0.5, 2.0])
    np.testing.assert_allclose(kernel_matrix(A, B, h), dense_kernel(A, B, h), rtol=1e-13, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kernel_matrix_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(6, 2))
    h = GpHyperparams(rng.uniform(0.1, 3), rng.uniform(0.1, 3, 2))
    K = kernel_matrix(X, X, h)
    np.testing.assert_allclose(K, K.T, atol=0)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * h.signal_std**2
    assert np.all(K <= h.signal_std**2 + 1e-15)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        GpHyperparams(0.0, [1.0])
    with pytest.raises(ValueError):
        GpHyperparams(1.0, [-1.0])
    with pytest.raises(ValueError):
        GpHyperparams(1.0, [1.0], -0.1)


def test_dataset_validation():
    with pytest.raises(DimensionError):
        GpDataset(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        GpDataset(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(ValueError):
        GpDataset([[np.nan]], [1.0])


# ---------------------------------------------------------------- fit / predict

def test_fit_single_point_alpha():
    m = gp_fit(GpDataset([[0.0]], [1.0]), GpHyperparams(1.0, [1.0], 0.0))
    np.testing.assert_allclose(m.alpha, [1.0], atol=1e-9)


def test_fit_duplicate_inputs_without_noise_fails():
    with pytest.raises(FitError):
        gp_fit(GpDataset([[0.5], [0.5]], [1.0, 2.0]), GpHyperparams(1.0, [1.0], 0.0))


def test_fit_alpha_matches_dense_inverse():
    rng = np.random.default_rng(1)
    data, h = random_instance(rng, n=3, d=2)
    m = gp_fit(data, h)
    K = dense_kernel(data.X, data.X, h) + h.noise_std**2 * np.eye(3)
    np.testing.assert_allclose(m.alpha, np.linalg.inv(K) @ data.y, atol=1e-8)


def test_predict_interpolates_training_point():
    m = gp_fit(GpDataset([[0.3]], [2.5]), GpHyperparams(1.0, [1.0], 0.0))
    mean, var = gp_predict(m, [0.3])
    assert mean == pytest.approx(2.5, abs=1e-12)
    assert var == pytest.approx(0.0, abs=1e-12)


def test_predict_far_away_recovers_prior():
    h = GpHyperparams(1.7, [0.5], 0.1)
    m = gp_fit(GpDataset([[0.0], [0.4]], [1.0, -1.0]), h)
    mean, var = gp_predict(m, [20 * 0.5 + 0.4])
    assert abs(mean) <= 1e-6
    assert var == pytest.approx(h.signal_std**2, abs=1e-6)


def test_predict_matches_conditioning_oracle():
    rng = np.random.default_rng(2)
    data, h = random_instance(rng, n=3, d=2)
    xq = rng.normal(size=2)
    mean, var = gp_predict(gp_fit(data, h), xq)
    cond = mvn_condition(joint_oracle(data, h, xq), list(range(3)), data.y)
    assert mean == pytest.approx(cond.mean[0], abs=1e-10)
    assert var == pytest.approx(cond.cov[0, 0], abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_posterior_variance_bounded_by_prior(seed):
    rng = np.random.default_rng(seed)
    data, h = random_instance(rng)
    m = gp_fit(data, h)
    _, var = predict_many(m, rng.uniform(-3, 3, (10, data.dim)))
    assert np.all(var >= 0)
    assert np.all(var <= h.signal_std**2 * (1 + 1e-12))


def test_prior_model_and_offset():
    h = GpHyperparams(0.8, [1.0, 1.0], 0.1)
    mean, var = gp_predict(GpModel.prior(h, offset=3.0), [0.1, 0.2])
    assert mean == 3.0
    assert var == pytest.approx(0.64)
    data = GpDataset([[0.0, 0.0], [1.0, 1.0]], [10.0, 12.0])
    m = fit_normalized(data, h)
    assert m.offset == pytest.approx(11.0)
    far, _ = gp_predict(m, [50.0, 50.0])
    assert far == pytest.approx(11.0, abs=1e-9)


def test_predict_dimension_error():
    m = gp_fit(GpDataset([[0.0, 0.0]], [1.0]), GpHyperparams(1.0, [1.0, 1.0], 0.1))
    with pytest.raises(DimensionError):
        gp_predict(m, [0.0, 0.0, 0.0])


# ---------------------------------------------------------------- mean gradient

def test_gradient_zero_at_symmetric_midpoint():
    m = gp_fit(GpDataset([[-1.0], [1.0]], [0.7, 0.7]), GpHyperparams(1.0, [0.8], 0.05))
    np.testing.assert_allclose(gp_mean_gradient(m, [0.0]), [0.0], atol=1e-14)


def test_gradient_zero_at_single_training_point():
    m = gp_fit(GpDataset([[0.4, -0.2]], [1.3]), GpHyperparams(1.0, [0.6, 0.9], 0.0))
    np.testing.assert_allclose(gp_mean_gradient(m, [0.4, -0.2]), [0.0, 0.0], atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    data, h = random_instance(rng)
    m = gp_fit(data, h)
    x = rng.uniform(-2, 2, data.dim)
    g = gp_mean_gradient(m, x)
    eps = 1e-6
    fd = np.array([(gp_predict(m, x + eps * e)[0] - gp_predict(m, x - eps * e)[0]) / (2 * eps)
                   for e in np.eye(data.dim)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------- marginal likelihood

def test_lml_single_zero_target():
    val, _ = log_marginal_likelihood(GpDataset([[0.0]], [0.0]), GpHyperparams(1.0, [1.0], 0.0))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_lml_matches_dense_gaussian_density():
    rng = np.random.default_rng(3)
    data, h = random_instance(rng, n=5, d=2)
    K = dense_kernel(data.X, data.X, h) + h.noise_std**2 * np.eye(5)
    sign, logdet = np.linalg.slogdet(K)
    oracle = -0.5 * data.y @ np.linalg.solve(K, data.y) - 0.5 * logdet - 2.5 * math.log(2 * math.pi)
    assert log_marginal_likelihood(data, h)[0] == pytest.approx(oracle, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_lml_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    data, h = random_instance(rng, n=6)
    perm = rng.permutation(6)
    a = log_marginal_likelihood(data, h)[0]
    b = log_marginal_likelihood(data.subset(perm), h)[0]
    assert a == pytest.approx(b, abs=1e-9)


def lml_fd_gradient(data, h, eps=1e-5):
    theta = h.to_log()
    out = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        out[i] = (log_marginal_likelihood(data, GpHyperparams.from_log(tp))[0]
                  - log_marginal_likelihood(data, GpHyperparams.from_log(tm))[0]) / (2 * eps)
    return out


def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    data, h = random_instance(rng, n=5, d=2)
    _, g = log_marginal_likelihood(data, h)
    np.testing.assert_allclose(g, lml_fd_gradient(data, h), rtol=1e-5, atol=1e-7)


def test_lml_gradient_noise_entry_zero_without_noise():
    rng = np.random.default_rng(5)
    data, h = random_instance(rng, n=4, d=1, noise=False)
    assert log_marginal_likelihood(data, h)[1][-1] == 0.0


# ---------------------------------------------------------------- optimizer

def grid_best(data, noise):
    best = (-np.inf, None)
    for sf in np.geomspace(0.3, 3.0, 15):
        for l in np.geomspace(0.05, 5.0, 40):
            v = log_marginal_likelihood(data, GpHyperparams(sf, [l], noise))[0]
            if v > best[0]:
                best = (v, (sf, l))
    return best


def test_optimizer_recovers_length_scale_of_gp_draw():
    truth = GpHyperparams(1.0, [0.5], 0.05)
    X = np.linspace(0, 6, 40)[:, None]
    K = kernel_matrix(X, X, truth) + truth.noise_std**2 * np.eye(40)
    y = mvn_sample(MvnDist(np.zeros(40), K), 1, seed=11)[0]
    data = GpDataset(X, y)
    h = optimize_hyperparams(data, GpHyperparams(1.0, [1.5], 0.1), budget=200, seed=0)
    assert 0.25 <= h.length_scales[0] <= 1.0
    _, (sf_g, l_g) = grid_best(data, h.noise_std)
    assert 0.5 <= h.length_scales[0] / l_g <= 2.0


def test_optimizer_never_worse_than_init():
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 6, (30, 1))
    data = GpDataset(X, np.sin(X[:, 0]) + 0.1 * rng.normal(size=30))
    init = GpHyperparams(0.5, [3.0], 0.3)
    h = optimize_hyperparams(data, init, budget=40, seed=1)
    assert log_marginal_likelihood(data, h)[0] >= log_marginal_likelihood(data, init)[0]


def test_optimizer_from_grid_optimum_does_not_decrease():
    rng = np.random.default_rng(7)
    X = rng.uniform(0, 4, (20, 1))
    data = GpDataset(X, np.cos(2 * X[:, 0]))
    val, (sf, l) = grid_best(data, 0.1)
    h = optimize_hyperparams(data, GpHyperparams(sf, [l], 0.1), budget=30, seed=0)
    assert log_marginal_likelihood(data, h)[0] >= val - 1e-12


# ---------------------------------------------------------------- normal utilities

def test_condition_independent_blocks():
    joint = MvnDist([1.0, 2.0], np.diag([3.0, 4.0]))
    c = mvn_condition(joint, [0], [5.0])
    np.testing.assert_allclose(c.mean, [2.0])
    np.testing.assert_allclose(c.cov, [[4.0]])


def test_condition_fully_correlated():
    c = mvn_condition(MvnDist([0.0, 0.0], np.ones((2, 2))), [0], [1.5])
    assert c.cov[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert c.mean[0] == pytest.approx(1.5)


def test_condition_matches_block_formula():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(4, 4))
    S = A @ A.T + 0.1 * np.eye(4)
    mu = rng.normal(size=4)
    obs, free = [1, 3], [0, 2]
    vals = rng.normal(size=2)
    c = mvn_condition(MvnDist(mu, S), obs, vals)
    Soo_inv = np.linalg.inv(S[np.ix_(obs, obs)])
    Sfo = S[np.ix_(free, obs)]
    np.testing.assert_allclose(c.mean, mu[free] + Sfo @ Soo_inv @ (vals - mu[obs]), atol=1e-12)
    np.testing.assert_allclose(c.cov, S[np.ix_(free, free)] - Sfo @ Soo_inv @ Sfo.T, atol=1e-12)


def test_condition_singular_block():
    with pytest.raises(SingularError):
        mvn_condition(MvnDist([0.0, 0.0], np.zeros((2, 2))), [0], [1.0])


def test_sample_zero_covariance():
    s = mvn_sample(MvnDist([1.0, -2.0], np.zeros((2, 2))), 5, seed=0)
    np.testing.assert_array_equal(s, np.tile([1.0, -2.0], (5, 1)))


def test_sample_identity_covariance_statistics():
    s = mvn_sample(MvnDist(np.zeros(3), np.eye(3)), 100_000, seed=1)
    np.testing.assert_allclose(np.cov(s.T), np.eye(3), atol=0.05)


def test_sample_deterministic_per_seed():
    d = MvnDist([0.0, 1.0], [[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(mvn_sample(d, 10, seed=3), mvn_sample(d, 10, seed=3))
