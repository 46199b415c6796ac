import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpmpc.errors import DimensionError, PropagationError
from gpmpc.gp import GpDataset, GpHyperparams, GpModel, MvnDist, gp_fit, gp_predict, mvn_sample, predict_many
from gpmpc.propagation import (
    GaussianBelief,
    HybridModel,
    belief_rollout,
    cov_step_linear,
    cov_step_meaneq,
    cov_step_taylor,
    joint_blocks,
    mean_step,
    psd_repair,
)


def linear_f(A, B):
    return lambda x, u: A @ x + B @ u


def random_gp(rng, d, n=12, noise=0.1):
    X = rng.uniform(-1.5, 1.5, (n, d))
    y = np.sin(X @ rng.normal(size=d)) + 0.3 * X[:, 0]
    h = GpHyperparams(rng.uniform(0.5, 1.5), rng.uniform(0.6, 1.5, d), noise)
    return gp_fit(GpDataset(X, y), h)


def sine_gp(l=0.8):
    X = np.linspace(-2, 2, 25)[:, None]
    return gp_fit(GpDataset(X, np.sin(2 * X[:, 0])), GpHyperparams(1.0, [l], 0.05))


def scalar_model(gp, f=lambda x, u: x + 0.2 * np.sin(x) + u, noise_var=None):
    # GP query is the state only
    return HybridModel(f, np.ones((1, 1)), [gp], n_u=1, noise_var=noise_var, gp_input_map=[0])


def belief(mean, cov):
    return GaussianBelief(np.atleast_1d(np.asarray(mean, float)), np.atleast_2d(np.asarray(cov, float)))


# ---------------------------------------------------------------- mean_step

def test_mean_step_without_gp_is_nominal():
    A, B = np.array([[1.0, 0.1], [0.0, 1.0]]), np.array([[0.0], [0.1]])
    model = HybridModel(linear_f(A, B), np.zeros((2, 0)), [], n_u=1)
    b = belief([1.0, -2.0], np.eye(2))
    np.testing.assert_allclose(mean_step(model, b, [0.5]), A @ b.mean + B @ [0.5])


def test_mean_step_interpolates_single_noiseless_point():
    gp = gp_fit(GpDataset([[0.7]], [0.3]), GpHyperparams(1.0, [0.5], 0.0))
    model = HybridModel(lambda x, u: x, np.array([[2.0]]), [gp], n_u=1, gp_input_map=[0])
    assert mean_step(model, belief(0.7, 0.0), [9.0])[0] == pytest.approx(0.7 + 2.0 * 0.3, abs=1e-12)


def test_mean_step_linear_matches_hand_assembly():
    rng = np.random.default_rng(0)
    A, B, Bd = rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(2, 2))
    gps = [random_gp(rng, 3), random_gp(rng, 3)]
    model = HybridModel(linear_f(A, B), Bd, gps, n_u=1)
    x, u = np.array([0.3, -0.4]), np.array([0.8])
    z = np.concatenate([x, u])
    expected = A @ x + B @ u + Bd @ np.array([gp_predict(g, z)[0] for g in gps])
    np.testing.assert_allclose(mean_step(model, belief(x, np.eye(2)), u), expected, atol=1e-12)


def test_mean_step_input_dimension_checked():
    model = scalar_model(sine_gp())
    with pytest.raises(DimensionError):
        mean_step(model, belief(0.0, 0.1), [1.0, 2.0])


# ---------------------------------------------------------------- covariance steps

def test_taylor_equals_meaneq_at_zero_gradient():
    # a single training point queried at itself has zero mean gradient
    gp = gp_fit(GpDataset([[0.4]], [1.2]), GpHyperparams(1.0, [0.6], 0.1))
    model = scalar_model(gp)
    b = belief(0.4, 0.05)
    np.testing.assert_allclose(cov_step_taylor(model, b, [0.2]), cov_step_meaneq(model, b, [0.2]), atol=1e-14)


def test_deterministic_input_gives_gp_and_noise_only():
    rng = np.random.default_rng(1)
    gps = [random_gp(rng, 3), random_gp(rng, 3)]
    Bd = rng.normal(size=(2, 2))
    noise = np.array([0.01, 0.04])
    model = HybridModel(lambda x, u: np.tanh(x) + u, Bd, gps, n_u=1, noise_var=noise)
    x, u = np.array([0.2, 0.5]), np.array([0.1])
    z = np.concatenate([x, u])
    var = np.array([gp_predict(g, z)[1] for g in gps])
    expected = Bd @ np.diag(var + noise) @ Bd.T
    b = belief(x, np.zeros((2, 2)))
    np.testing.assert_allclose(cov_step_taylor(model, b, u), expected, atol=1e-12)
    np.testing.assert_allclose(cov_step_meaneq(model, b, u), expected, atol=1e-12)


def test_meaneq_linear_prior_only():
    A, B = np.array([[1.0, 0.2], [-0.1, 0.9]]), np.array([[0.0], [1.0]])
    h = GpHyperparams(0.7, [1.0, 1.0, 1.0], 0.1)
    Bd = np.array([[0.0], [1.0]])
    model = HybridModel(linear_f(A, B), Bd, [GpModel.prior(h)], n_u=1, noise_var=[0.02])
    S = np.array([[0.3, 0.1], [0.1, 0.2]])
    out = cov_step_meaneq(model, belief([0.5, 0.5], S), [0.3])
    np.testing.assert_allclose(out, A @ S @ A.T + Bd @ Bd.T * (0.49 + 0.02), atol=1e-12)


def test_taylor_matches_explicit_block_formula():
    rng = np.random.default_rng(2)
    gp = random_gp(rng, 2)
    f = lambda x, u: np.array([x[0] + 0.1 * np.sin(x[1]) + 0.1 * u[0], 0.9 * x[1] + 0.05 * x[0] ** 2])
    J = lambda x, u: (np.array([[1.0, 0.1 * np.cos(x[1])], [0.1 * x[0], 0.9]]), np.array([[0.1], [0.0]]))
    Bd = np.array([[0.0], [1.0]])
    model = HybridModel(f, Bd, [gp], n_u=1, noise_var=[0.01], gp_input_map=[0, 1], jac=J)
    x, u = np.array([0.3, -0.2]), np.array([0.5])
    S = np.array([[0.02, 0.005], [0.005, 0.03]])
    A, Bm = J(x, u)
    mu, var = gp_predict(gp, x)
    eps = 1e-6
    g = np.array([(gp_predict(gp, x + eps * e)[0] - gp_predict(gp, x - eps * e)[0]) / (2 * eps) for e in np.eye(2)])
    gz = np.concatenate([g, [0.0]])
    Sz = np.zeros((3, 3))
    Sz[:2, :2] = S
    Szd = Sz @ gz[:, None]
    Sd = var + gz @ Sz @ gz + 0.01
    joint = np.block([[Sz, Szd], [Szd.T, np.array([[Sd]])]])
    M = np.hstack([A, Bm, Bd])
    np.testing.assert_allclose(cov_step_taylor(model, belief(x, S), u), M @ joint @ M.T, atol=1e-9)


def monte_carlo_step(model, gp, mu, var, u, count=100_000, seed=3):
    xs = mvn_sample(MvnDist(np.array([mu]), np.array([[var]])), count, seed)[:, 0]
    m, v = predict_many(gp, xs[:, None])
    nxt = np.array([model.f(np.array([x]), np.array([u]))[0] for x in xs]) + m
    return nxt.mean(), nxt.var() + v.mean() + model.noise_var[0]


def smooth_gp():
    # data on the same length scale as the kernel, so curvature is ~ 1 / l^2
    X = np.linspace(-3, 3, 31)[:, None]
    return gp_fit(GpDataset(X, np.sin(X[:, 0])), GpHyperparams(1.0, [1.0], 0.05))


@pytest.mark.parametrize("mu", [-2.0, -1.0, 0.0, 0.5, 1.5])
def test_taylor_one_step_matches_monte_carlo(mu):
    gp = smooth_gp()
    model = scalar_model(gp, noise_var=[1e-6])
    var0 = (0.1 * gp.hyperparams.length_scales[0]) ** 2
    b = belief(mu, var0)
    mc_mean, mc_var = monte_carlo_step(model, gp, mu, var0, 0.1)
    assert abs(mean_step(model, b, [0.1])[0] - mc_mean) <= 0.05 * abs(mc_mean)
    assert abs(cov_step_taylor(model, b, [0.1])[0, 0] - mc_var) <= 0.05 * mc_var


def test_meaneq_misses_propagated_input_variance():
    gp = smooth_gp()
    model = scalar_model(gp, noise_var=[1e-6])
    b = belief(0.0, 0.01)
    _, mc_var = monte_carlo_step(model, gp, 0.0, 0.01, 0.1)
    assert cov_step_meaneq(model, b, [0.1])[0, 0] < 0.95 * mc_var


def test_meaneq_below_taylor_without_nominal_cross_terms():
    # x+ = u + Bd d(x, u): the nominal part carries no state uncertainty, so
    # Taylor only adds Bd grad Sz grad^T Bd^T >= 0
    rng = np.random.default_rng(4)
    for _ in range(20):
        gps = [random_gp(rng, 3), random_gp(rng, 3)]
        model = HybridModel(lambda x, u: np.zeros(2) + u, rng.normal(size=(2, 2)), gps, n_u=1)
        Lc = rng.normal(size=(2, 2))
        b = belief(rng.uniform(-1, 1, 2), Lc @ Lc.T * 0.1)
        u = rng.uniform(-1, 1, 1)
        assert np.trace(cov_step_meaneq(model, b, u)) <= np.trace(cov_step_taylor(model, b, u)) + 1e-12


def test_meaneq_can_exceed_taylor_with_cross_terms():
    # nominal gain and GP gradient of opposite sign: the cross covariance is negative
    gp = smooth_gp()
    model = HybridModel(lambda x, u: x, np.ones((1, 1)), [gp], n_u=1, gp_input_map=[0])
    b = belief(np.pi, 0.01)  # d'(pi) = cos(pi) = -1
    assert cov_step_meaneq(model, b, [0.0])[0, 0] > cov_step_taylor(model, b, [0.0])[0, 0]


def test_outputs_symmetric_psd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        gps = [random_gp(rng, 3)]
        model = HybridModel(lambda x, u: np.array([x[0] * x[1], np.cos(x[0])]) + u[0], rng.normal(size=(2, 1)), gps,
                            n_u=1)
        Lc = rng.normal(size=(2, 2))
        b = belief(rng.normal(size=2), Lc @ Lc.T)
        for step in (cov_step_taylor, cov_step_meaneq):
            S = step(model, b, rng.normal(size=1))
            assert np.max(np.abs(S - S.T)) <= 1e-12
            assert np.linalg.eigvalsh(S).min() >= -1e-12


def test_input_covariance_must_be_psd():
    model = scalar_model(sine_gp())
    with pytest.raises(ValueError):
        cov_step_taylor(model, belief(0.0, -1.0), [0.0])


def test_psd_repair_rejects_large_negative_eigenvalue():
    with pytest.raises(Exception):
        psd_repair(np.diag([1.0, -0.1]))
    np.testing.assert_allclose(psd_repair(np.diag([1.0, -1e-12])), np.diag([1.0, 0.0]))


def test_joint_blocks_shapes_and_symmetry():
    rng = np.random.default_rng(6)
    model = HybridModel(lambda x, u: x + u, np.eye(2), [random_gp(rng, 4), random_gp(rng, 4)], n_u=2)
    blocks, grad_f = joint_blocks(model, belief([0.1, 0.2], np.eye(2) * 0.1), [0.0, 0.1], sigma_u=np.eye(2) * 0.05)
    J = blocks.assemble(model.noise_var)
    assert J.shape == (6, 6) and grad_f.shape == (2, 4)
    np.testing.assert_allclose(J, J.T)


# ---------------------------------------------------------------- linear specialization

def test_linear_identity_without_gp_keeps_covariance():
    model = HybridModel(lambda x, u: x, np.zeros((2, 0)), [], n_u=1)
    S = np.array([[0.4, 0.1], [0.1, 0.3]])
    np.testing.assert_allclose(cov_step_linear(np.eye(2), np.zeros((2, 1)), model, belief([0, 0], S), [1.0]), S)


def test_linear_meaneq_block_formula():
    rng = np.random.default_rng(7)
    A, B, Bd = rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(2, 1))
    gp = random_gp(rng, 3)
    model = HybridModel(linear_f(A, B), Bd, [gp], n_u=1, noise_var=[0.03])
    S, Su = np.array([[0.2, 0.05], [0.05, 0.1]]), np.array([[0.07]])
    x, u = np.array([0.1, 0.4]), np.array([-0.3])
    var = gp_predict(gp, np.concatenate([x, u]))[1]
    expected = A @ S @ A.T + B @ Su @ B.T + Bd @ Bd.T * (var + 0.03)
    out = cov_step_linear(A, B, model, belief(x, S), u, sigma_u=Su, method="meaneq")
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_linear_taylor_equals_general_taylor():
    rng = np.random.default_rng(8)
    A, B, Bd = rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(2, 2))
    model = HybridModel(linear_f(A, B), Bd, [random_gp(rng, 3), random_gp(rng, 3)], n_u=1, jac=lambda x, u: (A, B))
    Lc = rng.normal(size=(2, 2))
    b = belief([0.2, -0.1], Lc @ Lc.T * 0.2)
    np.testing.assert_allclose(cov_step_linear(A, B, model, b, [0.4]), cov_step_taylor(model, b, [0.4]), atol=1e-12)


def test_taylor_with_linear_gp_matches_linear_gaussian_propagation():
    # dense noiseless data from d(x) = 0.5 x makes the GP a near-linear map
    X = np.linspace(-3, 3, 61)[:, None]
    gp = gp_fit(GpDataset(X, 0.5 * X[:, 0]), GpHyperparams(3.0, [2.0], 0.0))
    model = HybridModel(lambda x, u: 0.8 * x, np.ones((1, 1)), [gp], n_u=1, noise_var=[0.0], gp_input_map=[0])
    S = 0.04
    out = cov_step_taylor(model, belief(0.2, S), [0.0])[0, 0]
    exact = (0.8 + 0.5) ** 2 * S
    assert abs(out - exact) <= 0.02 * exact


# ---------------------------------------------------------------- expectation identities

def test_mean_of_gp_mean_under_small_input_noise():
    gp = sine_gp(l=0.8)
    for mu in (-1.0, 0.2, 0.9):
        xs = mvn_sample(MvnDist(np.array([mu]), np.array([[0.08**2]])), 100_000, 11)
        mc = predict_many(gp, xs, return_var=False).mean()
        assert abs(mc - gp_predict(gp, [mu])[0]) <= 0.05 * gp.hyperparams.signal_std


def test_variance_decomposition_by_monte_carlo():
    gp = sine_gp(l=0.8)
    mu, std = 0.5, 0.08
    rng = np.random.default_rng(12)
    xs = mu + std * rng.standard_normal(100_000)
    m, v = predict_many(gp, xs[:, None])
    # draw f(x*) ~ N(m, v) per sample and compare total variance with E[var] + var(mean)
    draws = m + np.sqrt(v) * rng.standard_normal(xs.size)
    total = draws.var()
    assert abs(total - (v.mean() + m.var())) <= 0.05 * total
    # first-order closed form: var(mean) ~ grad^2 std^2
    eps = 1e-6
    g = (gp_predict(gp, [mu + eps])[0] - gp_predict(gp, [mu - eps])[0]) / (2 * eps)
    assert abs(m.var() - g**2 * std**2) <= 0.05 * m.var()
    assert abs(v.mean() - gp_predict(gp, [mu])[1]) <= 0.05 * v.mean()


# ---------------------------------------------------------------- rollout

def test_rollout_identity_no_gp_constant():
    model = HybridModel(lambda x, u: x, np.zeros((2, 0)), [], n_u=1)
    b0 = belief([1.0, 2.0], np.diag([0.1, 0.2]))
    out = belief_rollout(model, b0, [[0.0]] * 5, 5)
    assert len(out) == 6 and out[0] is b0
    for b in out:
        np.testing.assert_allclose(b.mean, b0.mean)
        np.testing.assert_allclose(b.cov, b0.cov)


def test_rollout_prior_variance_telescopes():
    h = GpHyperparams(0.6, [1.0], 0.1)
    model = HybridModel(lambda x, u: x, np.ones((1, 1)), [GpModel.prior(h)], n_u=1, noise_var=[0.05],
                        gp_input_map=[0])
    out = belief_rollout(model, belief(0.0, 0.2), [[0.0]] * 7, 7, method="meaneq")
    for k, b in enumerate(out):
        assert b.cov[0, 0] == pytest.approx(0.2 + k * (0.36 + 0.05), abs=1e-12)


def test_two_step_taylor_rollout_is_compositional():
    gp = sine_gp()
    model = scalar_model(gp)
    b0 = belief(0.3, 0.01)
    out = belief_rollout(model, b0, [[0.1], [-0.2]], 2)
    b1 = GaussianBelief(mean_step(model, b0, [0.1]), cov_step_taylor(model, b0, [0.1]))
    b2 = GaussianBelief(mean_step(model, b1, [-0.2]), cov_step_taylor(model, b1, [-0.2]))
    np.testing.assert_allclose(out[2].mean, b2.mean, atol=1e-14)
    np.testing.assert_allclose(out[2].cov, b2.cov, atol=1e-14)


def test_rollout_error_carries_step_index():
    model = scalar_model(sine_gp())
    with pytest.raises(PropagationError) as info:
        belief_rollout(model, belief(0.0, 0.1), [[0.0], [0.0, 1.0]], 2)
    assert info.value.step == 1


def test_rollout_argument_checks():
    model = scalar_model(sine_gp())
    with pytest.raises(ValueError):
        belief_rollout(model, belief(0.0, 0.1), [[0.0]], 0)
    with pytest.raises(ValueError):
        belief_rollout(model, belief(0.0, 0.1), [[0.0]], 2)
    with pytest.raises(ValueError):
        belief_rollout(model, belief(0.0, 0.1), [[0.0]], 1, method="exact")


def test_hybrid_model_validation():
    gp = sine_gp()
    with pytest.raises(DimensionError):
        HybridModel(lambda x, u: x, np.ones((1, 2)), [gp], n_u=1)
    with pytest.raises(DimensionError):
        HybridModel(lambda x, u: x, np.ones((1, 1)), [gp], n_u=1, gp_input_map=[5])
    with pytest.raises(ValueError):
        HybridModel(lambda x, u: x, np.ones((1, 1)), [gp], n_u=1, noise_var=[-1.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 6))
def test_rollout_covariances_stay_psd(seed, steps):
    rng = np.random.default_rng(seed)
    model = HybridModel(lambda x, u: np.array([x[0] + 0.1 * x[1], 0.95 * x[1] + 0.1 * np.sin(x[0])]) + 0.1 * u[0],
                        rng.normal(size=(2, 1)), [random_gp(rng, 3)], n_u=1)
    Lc = rng.normal(size=(2, 2))
    out = belief_rollout(model, belief(rng.normal(size=2), Lc @ Lc.T * 0.1), rng.normal(size=(steps, 1)), steps)
    for b in out:
        assert np.max(np.abs(b.cov - b.cov.T)) <= 1e-12
        assert np.linalg.eigvalsh(b.cov).min() >= -1e-12
