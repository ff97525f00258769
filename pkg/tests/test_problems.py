import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gossipsa.errors import ConfigurationError, PreconditionError, SingularityError
from gossipsa.problems import LocalizationProblem, QuadraticGaussianProblem, check_clt_data, uniform_layout


def central_jacobian(f, x, h=1e-5):
    x = np.asarray(x, float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def small_localization(obs_var=1e-2):
    sensors = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 12.0], [9.0, 11.0]])
    return LocalizationProblem(sensors, np.array([4.0, 5.0]), obs_var=obs_var)


# -- quadratic -----------------------------------------------------------------


def test_quadratic_noiseless_equilibrium():
    p = QuadraticGaussianProblem(np.eye(2), np.array([1.0, -1.0]), 0.0, 3)
    y = p.sample_observations(np.tile([1.0, -1.0], (3, 1)), np.random.default_rng(0))
    np.testing.assert_array_equal(y, 0.0)


def test_quadratic_mean_field():
    p = QuadraticGaussianProblem(2 * np.eye(2), np.zeros(2), 1.0, 3)
    np.testing.assert_allclose(p.mean_field(np.array([1.0, 0.0])), [-2.0, 0.0])


def test_quadratic_clt_data():
    h, u = QuadraticGaussianProblem(np.array([[3.0]]), np.zeros(1), 2.0, 4).clt_data()
    assert h[0, 0] == -3.0 and u[0, 0] == pytest.approx(4.0 / 4)


def test_quadratic_rejects_unstable_drift():
    with pytest.raises(ConfigurationError):
        QuadraticGaussianProblem(-np.eye(1), np.zeros(1), 1.0, 2)


def test_quadratic_upsilon_is_variance_of_agent_average():
    p = QuadraticGaussianProblem(np.eye(1), np.zeros(1), 1.5, 6)
    rng = np.random.default_rng(4)
    ys = p.observations(np.zeros((200_000, 6, 1)), rng.standard_normal((200_000, 6, 1)))
    v = ys.mean(axis=1).var()
    assert v == pytest.approx(p.clt_data()[1][0, 0], rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_quadratic_descent_inequality(theta):
    a = np.array([[2.0, 1.0], [-1.0, 1.0]])
    p = QuadraticGaussianProblem(a, np.array([0.5, 0.5]), 1.0, 2)
    theta = np.array(theta)
    grad_v = 2 * (theta - p.theta_star)
    assert grad_v @ p.mean_field(theta) <= 1e-9


def test_state_shape_checked():
    p = QuadraticGaussianProblem(np.eye(1), np.zeros(1), 1.0, 3)
    with pytest.raises(ValueError):
        p.sample_observations(np.zeros((2, 1)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        p.sample_observations(np.full((3, 1), np.nan), np.random.default_rng(0))


# -- localization -------------------------------------------------------------


def test_score_worked_example():
    p = LocalizationProblem(np.array([[0.0, 0.0]]), np.array([30.0, 0.0]), obs_var=1.0)
    theta = np.array([[10.0, 0.0]])
    np.testing.assert_allclose(p._signal(theta), [10.0])
    np.testing.assert_allclose(p.signal_gradient(theta), [[-2.0, 0.0]])
    np.testing.assert_allclose(p.observations_from_signal(theta, np.array([11.0])), [[-2.0, 0.0]])


def test_score_vanishes_at_fitted_mean():
    p = small_localization()
    theta = np.array([[1.0, 2.0], [3.0, 3.0], [5.0, 5.0], [2.0, 8.0]])
    np.testing.assert_allclose(p.observations_from_signal(theta, p._signal(theta)), 0.0, atol=1e-12)


def test_signal_gradient_by_finite_differences():
    p = small_localization()
    point = np.array([3.3, 6.1])
    for i in range(p.n_agents):
        fd = central_jacobian(lambda x: p.amplitude / np.sum((x - p.sensors[i]) ** 2), point, h=1e-6)
        np.testing.assert_allclose(p.signal_gradient(point[None])[i], fd, rtol=1e-7)


def test_batch_observations_match_signal_form():
    p = small_localization()
    rng = np.random.default_rng(1)
    theta = p.source + rng.normal(size=(3, 4, 2))
    z = rng.standard_normal((3, 4))
    x = p._g_star + np.sqrt(p.obs_var) * z
    np.testing.assert_allclose(p.observations(theta, z), p.observations_from_signal(theta, x), rtol=1e-12)


def test_mean_field_zero_at_source():
    p = small_localization()
    np.testing.assert_allclose(p.mean_field(p.source), 0.0, atol=1e-12)


def test_mean_field_matches_monte_carlo():
    p = small_localization()
    point = p.source + np.array([0.4, -0.3])
    rng = np.random.default_rng(7)
    m = 1_000_000
    theta = np.broadcast_to(point, (p.n_agents, 2))
    ys = p.observations(theta, rng.standard_normal((m, p.n_agents))).mean(axis=1)
    se = ys.std(axis=0) / np.sqrt(m)
    assert (np.abs(ys.mean(axis=0) - p.mean_field(point)) < 5 * se).all()


def test_score_has_zero_mean_at_truth_and_fisher_second_moment():
    p = small_localization()
    rng = np.random.default_rng(8)
    m = 1_000_000
    theta = np.broadcast_to(p.source, (p.n_agents, 2))
    ys = p.observations(theta, rng.standard_normal((m, p.n_agents)))
    s = ys.sum(axis=1)  # total score: its covariance is F
    se = s.std(axis=0) / np.sqrt(m)
    assert (np.abs(s.mean(axis=0)) < 5 * se).all()
    outer = s[:, :, None] * s[:, None, :]
    se2 = outer.std(axis=0) / np.sqrt(m)
    assert (np.abs(outer.mean(axis=0) - p.fisher_information()) < 5 * se2).all()


def test_fisher_single_sensor_example():
    p = LocalizationProblem(np.array([[0.0, 0.0]]), np.array([10.0, 0.0]))
    f = p.fisher_information()
    np.testing.assert_allclose(f, [[400.0, 0.0], [0.0, 0.0]], atol=1e-10)
    assert np.linalg.matrix_rank(f) == 1
    h, u = p.clt_data()
    np.testing.assert_allclose(h, -f)
    np.testing.assert_allclose(u, f)


def test_fisher_orthogonal_gradients_is_diagonal():
    sensors = np.array([[-5.0, 0.0], [0.0, -5.0]])
    p = LocalizationProblem(sensors, np.array([7.0, 3.0]))
    f = p.fisher_information(np.zeros(2))
    assert f[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.matrix_rank(p.fisher_information()) == 2


def test_clt_jacobian_by_finite_differences():
    p = LocalizationProblem(uniform_layout(10, 3), np.array([25.0, 25.0]))
    h, u = p.clt_data()
    fd = central_jacobian(p.mean_field, p.source, h=1e-4)
    np.testing.assert_allclose(fd, h, rtol=1e-5, atol=1e-5 * np.abs(h).max())
    np.testing.assert_allclose(u, p.fisher_information() / p.n_agents**2)


def test_localization_descent_near_source():
    p = small_localization()
    rng = np.random.default_rng(2)
    for _ in range(50):
        theta = p.source + rng.uniform(-0.5, 0.5, size=2)
        grad_v = central_jacobian(lambda x: np.atleast_1d(p.lyapunov(x)), theta, h=1e-6)[0]
        assert grad_v @ p.mean_field(theta) <= 0


def test_product_structure():
    p = small_localization()
    rng = np.random.default_rng(3)
    z = rng.standard_normal((20_000, p.n_agents))
    base = np.broadcast_to(p.source, (p.n_agents, 2)).copy()
    moved = base.copy()
    moved[2] += [1.0, -1.0]
    a, b = p.observations(base, z), p.observations(moved, z)
    keep = [0, 1, 3]
    np.testing.assert_array_equal(a[:, keep], b[:, keep])
    assert not np.allclose(a[:, 2], b[:, 2])


def test_singularity_names_agent_and_sensor():
    p = small_localization()
    theta = np.tile(p.source, (4, 1))
    theta[2] = p.sensors[2]
    with pytest.raises(SingularityError) as info:
        p.sample_observations(theta, np.random.default_rng(0))
    assert info.value.agent == 2 and info.value.sensor == 2
    with pytest.raises(SingularityError):
        p.mean_field(p.sensors[1])


@pytest.mark.parametrize(
    "sensors, source",
    [([[0.0, 0.0], [0.0, 0.0]], [1.0, 1.0]), ([[0.0, 0.0], [1.0, 0.0]], [1.0, 0.0])],
)
def test_localization_geometry_validation(sensors, source):
    with pytest.raises(ConfigurationError):
        LocalizationProblem(np.array(sensors), np.array(source))


def test_clt_data_needs_equilibrium():
    class NoStar(QuadraticGaussianProblem):
        theta_star = None

    p = object.__new__(NoStar)
    with pytest.raises(PreconditionError):
        check_clt_data(p)
