import numpy as np
import pytest

from dzofl.errors import ConfigError
from dzofl.tasks import (
    NonconvexObjective,
    QuadraticObjective,
    build_task,
    make_logistic_task,
    make_nonconvex_task,
    make_quadratic_task,
    true_gradient_norm_sq,
)

TASKS = {
    "quadratic": lambda: make_quadratic_task(d=6, N=4, seed=1),
    "nonconvex": lambda: make_nonconvex_task(d=6, N=4, seed=2),
    "logistic": lambda: make_logistic_task(d=6, N=4, samples_per_device=50, seed=3),
}


@pytest.fixture(params=sorted(TASKS))
def task(request):
    return TASKS[request.param]()


def fd_grad(f, theta, h=1e-6):
    eye = np.eye(theta.size)
    return np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in eye])


def ball_points(obj, n, rng):
    """``n`` points uniform in the certified ball around the start."""
    v = rng.normal(size=(n, obj.d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = obj.region_radius * rng.random(n) ** (1 / obj.d)
    return obj.theta0 + v * r[:, None]


def test_gradient_matches_finite_differences(task):
    rng = np.random.default_rng(0)
    for theta in ball_points(task, 5, rng):
        num = fd_grad(lambda t: task.device_values(t), theta)  # (d, N)
        np.testing.assert_allclose(task.device_grads(theta), num.T, rtol=1e-5, atol=1e-5)


def test_hessian_matches_finite_differences(task):
    rng = np.random.default_rng(1)
    theta = ball_points(task, 1, rng)[0]
    num = fd_grad(lambda t: task.grad(t), theta)
    np.testing.assert_allclose(task.hessian(theta), num, rtol=1e-5, atol=1e-5)


def test_sample_gradients_match_sample_losses(task):
    rng = np.random.default_rng(2)
    theta = ball_points(task, 1, rng)[0]
    xi = task.make_xi(rng.random((task.N, task.xi_width)))
    num = fd_grad(lambda t: task.sample_losses(t, xi), theta)
    np.testing.assert_allclose(task.sample_grads(theta, xi), num.T, rtol=1e-5, atol=1e-5)


def test_sample_losses_average_to_device_values(task):
    rng = np.random.default_rng(3)
    theta = task.theta0 + 0.3
    xi = task.make_xi(rng.random((40_000, task.N, task.xi_width)))
    mc = task.sample_losses(theta, xi).mean(axis=0)
    np.testing.assert_allclose(mc, task.device_values(theta), rtol=2e-2, atol=2e-2)


def test_lipschitz_certificate_on_ball(task):
    """|f_i(a, xi) - f_i(b, xi)| <= L_i |a - b| for 1e4 random pairs in the ball."""
    rng = np.random.default_rng(4)
    n = 10_000
    a, b = ball_points(task, n, rng), ball_points(task, n, rng)
    xi = task.make_xi(rng.random((n, task.N, task.xi_width)))
    diff = np.abs(task.sample_losses(a, xi) - task.sample_losses(b, xi))
    dist = np.linalg.norm(a - b, axis=1)
    assert np.all(diff <= task.lipschitz[None, :] * dist[:, None] * (1 + 1e-9))


def test_squared_lipschitz_dominates_squared_bound(task):
    assert np.all(task.lipschitz_sq > 0)
    assert task.L_xi == pytest.approx(task.lipschitz_sq.max())


def test_hessian_bounds(task):
    rng = np.random.default_rng(5)
    for theta in ball_points(task, 20, rng):
        dev = task.device_hessians(theta)
        assert np.linalg.norm(dev, ord=2, axis=(1, 2)).max() <= task.alpha1 * (1 + 1e-9)
        assert np.linalg.norm(task.hessian(theta), ord=2) <= task.L * (1 + 1e-9)


def test_device_views_agree_with_stacked_form(task):
    rng = np.random.default_rng(6)
    theta = task.theta0 - 0.2
    xi = task.make_xi(rng.random((task.N, task.xi_width)))
    stacked = task.sample_losses(theta, xi)
    for dev in task.devices:
        own = task.xi_for_device(xi, dev.device_id)
        assert dev.loss(theta, own) == pytest.approx(stacked[dev.device_id - 1], rel=1e-12)
        np.testing.assert_allclose(dev.grad(theta), task.device_grads(theta)[dev.device_id - 1])
    assert sum(d.value(theta) for d in task.devices) == pytest.approx(task.value(theta))


def test_quadratic_minimum_is_known():
    obj = make_quadratic_task(d=5, N=3, seed=7)
    np.testing.assert_allclose(obj.grad(obj.minimizer), 0.0, atol=1e-10)
    assert obj.value(obj.minimizer) == pytest.approx(obj.known_minimum)
    assert np.linalg.norm(obj.theta0 - obj.minimizer) == pytest.approx(3.0)
    assert obj.in_region(obj.minimizer)


def test_quadratic_noise_cancels_in_symmetric_differences():
    obj = make_quadratic_task(d=4, N=2, seed=8, noise=0.5)
    xi = obj.make_xi(np.random.default_rng(0).random((obj.N, obj.xi_width)))
    t, e = obj.theta0, np.full(4, 0.1)
    delta = obj.sample_losses(t + e, xi) - obj.sample_losses(t - e, xi)
    np.testing.assert_allclose(delta, obj.device_values(t + e) - obj.device_values(t - e), atol=1e-12)


def test_nonconvex_task_is_nonconvex_somewhere():
    obj = NonconvexObjective(0.1 * np.eye(3)[None], c=1.0)
    assert np.linalg.eigvalsh(obj.hessian(np.zeros(3))).min() < 0
    assert obj.known_minimum is None


def test_validation_errors():
    with pytest.raises(ConfigError):
        QuadraticObjective(np.array([[[1.0, 2.0], [0.0, 1.0]]]), np.zeros((1, 2)))
    with pytest.raises(ConfigError):
        build_task("rosenbrock", d=2, N=1, seed=0)
    with pytest.raises(ConfigError):
        true_gradient_norm_sq(make_quadratic_task(d=3, N=1, seed=0), np.zeros(4))
    with pytest.raises(ConfigError):
        make_logistic_task(d=1, N=1, samples_per_device=5, seed=0)


def test_true_gradient_norm():
    obj = make_quadratic_task(d=3, N=2, seed=9)
    g = obj.grad(obj.theta0)
    assert true_gradient_norm_sq(obj, obj.theta0) == pytest.approx(float(g @ g))
