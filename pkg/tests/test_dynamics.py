import numpy as np
import pytest
from scipy.linalg import expm

from compatplan.dynamics import (
    double_integrator,
    integrate_step,
    lie_derivatives,
    linear_system,
    parse_system,
    planning_system,
    single_integrator,
    unicycle,
    unicycle_input_map,
    unicycle_lift,
    workspace_point,
)


def test_single_integrator_lie():
    si = single_integrator(2)
    lf, lg = lie_derivatives(si, np.array([1.0, 2.0]), np.array([3.0, -1.0]))
    assert lf == 0.0
    assert np.allclose(lg, [1.0, 2.0])


def test_linear_lie_matches_symbolic():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 2))
    sys = linear_system(A, B)
    P = np.eye(3) + 0.2 * np.ones((3, 3))
    q = rng.normal(size=3)
    for _ in range(20):
        x = rng.normal(size=3)
        grad = 2.0 * P @ (x - q)
        lf, lg = lie_derivatives(sys, grad, x)
        assert lf == pytest.approx(2.0 * (x - q) @ P @ A @ x)
        assert np.allclose(lg, 2.0 * (x - q) @ P @ B)


def test_lie_derivative_matches_finite_difference_along_flow():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2))
    sys = linear_system(A, B)

    def w(x):
        return float(x @ x + x[0])

    for _ in range(10):
        x = rng.normal(size=2)
        u = rng.normal(size=2)
        grad = 2.0 * x + np.array([1.0, 0.0])
        lf, lg = lie_derivatives(sys, grad, x)
        h = 1e-6
        xdot = A @ x + B @ u
        num = (w(x + h * xdot) - w(x - h * xdot)) / (2 * h)
        assert num == pytest.approx(lf + lg @ u, abs=1e-6)


def test_unicycle_lift_values():
    assert np.allclose(unicycle_lift((0.0, 0.0, 0.0), 0.1), [0.1, 0.0])
    assert np.allclose(unicycle_lift((1.0, 1.0, np.pi / 2), 0.2), [1.0, 1.2])


def test_unicycle_lift_inverse():
    rng = np.random.default_rng(2)
    for _ in range(30):
        x, y, th = rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-np.pi, np.pi)
        p = unicycle_lift((x, y, th), 0.3)
        back = p - 0.3 * np.array([np.cos(th), np.sin(th)])
        assert np.allclose(back, [x, y])


def test_unicycle_input_map_examples():
    v, w = unicycle_input_map(0.0, [1.0, 0.0], 0.5)
    assert (v, w) == pytest.approx((1.0, 0.0))
    v, w = unicycle_input_map(np.pi / 2, [1.0, 0.0], 0.5)
    assert v == pytest.approx(0.0, abs=1e-12)
    assert w == pytest.approx(-2.0)


def test_unicycle_lift_velocity_matches_command():
    # finite difference of the lifted point along the flow equals the command
    rng = np.random.default_rng(3)
    sys = unicycle(0.25)
    for _ in range(20):
        state = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi)])
        u_lift = rng.normal(size=2)
        v, w = unicycle_input_map(state[2], u_lift, 0.25)
        dt = 1e-5
        nxt = integrate_step(sys, state, np.array([v, w]), dt)
        pdot = (unicycle_lift(nxt, 0.25) - unicycle_lift(state, 0.25)) / dt
        assert np.allclose(pdot, u_lift, atol=1e-3)


def test_rk4_exact_for_constant_field():
    si = single_integrator(3)
    x = np.array([1.0, 2.0, 3.0])
    u = np.array([0.5, -0.25, 0.0])
    out = integrate_step(si, x, u, 0.1)
    assert np.allclose(out, x + 0.1 * u, atol=1e-15)


def test_rk4_exact_for_double_integrator():
    di = double_integrator(1)
    x = np.array([0.0, 1.0])
    u = np.array([2.0])
    out = integrate_step(di, x, u, 0.1)
    assert out[0] == pytest.approx(0.0 + 1.0 * 0.1 + 0.5 * 2.0 * 0.01, abs=1e-15)
    assert out[1] == pytest.approx(1.0 + 2.0 * 0.1, abs=1e-15)


def test_rk4_matches_expm_and_order():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(3, 3))
    sys = linear_system(A, np.zeros((3, 1)))
    x = rng.normal(size=3)
    u = np.zeros(1)

    def one_step_error(dt):
        exact = expm(A * dt) @ x
        return np.linalg.norm(integrate_step(sys, x, u, dt) - exact)

    e1 = one_step_error(0.1)
    e2 = one_step_error(0.05)
    assert e1 < 1e-4
    assert e1 / e2 >= 16 * 0.8


def test_integrate_step_validates():
    si = single_integrator(1)
    with pytest.raises(ValueError):
        integrate_step(si, np.array([0.0]), np.array([1.0]), 0.0)
    with pytest.raises(ValueError):
        integrate_step(si, np.array([np.nan]), np.array([1.0]), 0.1)


def test_parse_system_strings(tmp_path):
    assert parse_system("single_integrator:2").n == 2
    di = parse_system("double_integrator:3")
    assert (di.n, di.m) == (6, 3)
    uni = parse_system("unicycle:0.2")
    assert uni.lift == 0.2
    a_file = tmp_path / "A.txt"
    b_file = tmp_path / "B.txt"
    a_file.write_text("0 1\n0 0\n")
    b_file.write_text("0\n1\n")
    lin = parse_system(f"linear:{a_file}:{b_file}")
    assert (lin.n, lin.m) == (2, 1)
    with pytest.raises(ValueError):
        parse_system("hovercraft:9")


def test_planning_and_workspace_views():
    uni = unicycle(0.1)
    assert planning_system(uni).kind == "single_integrator"
    p = workspace_point(uni, np.array([1.0, 0.0, 0.0]))
    assert np.allclose(p, [1.1, 0.0])
    di = double_integrator(2)
    assert np.allclose(workspace_point(di, np.array([1.0, 2.0, 3.0, 4.0])), [1.0, 2.0])
