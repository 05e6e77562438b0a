import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compatplan.geometry import (
    Box,
    CircularObstacle,
    Environment,
    EnvironmentFormatError,
    PolytopicObstacle,
    active_set,
    barrier_components,
    barrier_value,
    enumerate_active_patterns,
    environment_from_dict,
    in_free_space,
    load_environment,
    min_barrier_over_sublevel,
    min_clf_over_obstacle,
    sublevel_intersects_obstacle,
)


@pytest.fixture
def square():
    return PolytopicObstacle.rectangle([-1.0, -1.0], [1.0, 1.0])


def test_barrier_components_symmetric_box_1d():
    # faces x <= 1 and -x <= 1 in one dimension
    obs = PolytopicObstacle(np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    comps = barrier_components(obs, np.array([0.0]))
    assert np.allclose(comps, [-1.0, -1.0])
    assert barrier_value(obs, np.array([0.0])) == -1.0


def test_circle_barrier_value():
    circ = CircularObstacle([0.0, 0.0], 1.0)
    assert barrier_value(circ, np.array([2.0, 0.0])) == pytest.approx(3.0)


def test_barrier_components_match_affine_evaluation(square):
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.uniform(-3, 3, size=2)
        comps = barrier_components(square, x)
        direct = square.A @ x + square.b
        assert np.allclose(comps, direct)


def test_dimension_mismatch_raises(square):
    with pytest.raises(ValueError):
        barrier_components(square, np.zeros(3))


def test_active_set_unique_and_corner(square):
    assert active_set(square, np.array([2.0, 0.0]), tol=0.0) == (0,)
    corner = active_set(square, np.array([2.0, 2.0]), tol=1e-12)
    assert len(corner) == 2


def test_active_set_is_argmax(square):
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-4, 4, size=2)
        comps = barrier_components(square, x)
        assert int(np.argmax(comps)) in active_set(square, x, tol=0.0)


def test_polytope_construction_invariants():
    with pytest.raises(ValueError, match="duplicate"):
        PolytopicObstacle(np.array([[1.0, 0.0], [1.0, 0.0], [0, 1.0]]),
                          np.array([-1.0, -1.0, -1.0]))
    # empty interior: x <= 0 and x >= 1
    with pytest.raises(ValueError, match="interior"):
        PolytopicObstacle(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]),
                          np.array([0.0, 1.0, -1.0]))
    with pytest.warns(UserWarning, match="unbounded"):
        PolytopicObstacle(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([-1.0, -1.0]))


def test_circle_invariants():
    with pytest.raises(ValueError):
        CircularObstacle([0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        CircularObstacle([0.0, 0.0], 1.0, inflation=-0.1)
    assert CircularObstacle([0.0, 0.0], 1.0, inflation=0.5).r_eff == 1.5


def test_environment_rejects_overlapping_interiors(square):
    with pytest.raises(ValueError, match="overlap"):
        Environment(Box([-5, -5], [5, 5]),
                    (CircularObstacle([0.0, 0.0], 1.0), CircularObstacle([1.5, 0.0], 1.0)),
                    (5.0, 5.0))
    with pytest.raises(ValueError, match="overlap"):
        Environment(Box([-5, -5], [5, 5]),
                    (square, CircularObstacle([1.0, 1.0], 0.5)), (5.0, 5.0))
    # touching circles are allowed (open interiors disjoint)
    Environment(Box([-5, -5], [5, 5]),
                (CircularObstacle([0.0, 0.0], 1.0), CircularObstacle([2.0, 0.0], 1.0)),
                (5.0, 5.0))


@pytest.fixture
def env(square):
    return Environment(Box([-5, -5], [5, 5]),
                       (square, CircularObstacle([3.0, 3.0], 1.0)), (5.0, 5.0))


def test_in_free_space_basics(env):
    assert not in_free_space(env, np.array([9.0, 0.0]))   # outside bounds
    assert not in_free_space(env, np.array([3.0, 3.0]))   # circle center
    assert not in_free_space(env, np.array([0.0, 0.0]))   # square interior
    assert in_free_space(env, np.array([-3.0, 0.0]))


def test_in_free_space_matches_definition(env):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        x = rng.uniform(-6, 6, size=2)
        expected = env.bounds.contains(x) and all(
            barrier_value(o, x) >= 0.0 for o in env.obstacles)
        assert in_free_space(env, x) == expected


@given(st.floats(0.0, 2.0), st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
@settings(max_examples=60, deadline=None)
def test_free_space_monotone_in_inflation(extra, x, y):
    base = Environment(Box([-5, -5], [5, 5]), (CircularObstacle([0.0, 0.0], 1.0, 0.0),), (5.0,))
    fat = Environment(Box([-5, -5], [5, 5]), (CircularObstacle([0.0, 0.0], 1.0, extra),), (5.0,))
    p = np.array([x, y])
    if not in_free_space(base, p):
        assert not in_free_space(fat, p)


def test_sublevel_intersects_circle_nearest_point():
    P = np.eye(2)
    q = np.zeros(2)
    ball = CircularObstacle([3.0, 0.0], 1.0)
    assert sublevel_intersects_obstacle(P, q, 4.0, ball)
    assert not sublevel_intersects_obstacle(P, q, 3.9, ball)


def test_sublevel_intersects_polytope_target_inside(square):
    assert min_clf_over_obstacle(np.eye(2), np.zeros(2), square) == pytest.approx(0.0)
    assert sublevel_intersects_obstacle(np.eye(2), np.zeros(2), 0.0, square)


def test_min_clf_over_polytope_matches_grid():
    rng = np.random.default_rng(5)
    for _ in range(12):
        M = rng.normal(size=(2, 2))
        P = M @ M.T + 0.3 * np.eye(2)
        q = rng.uniform(-2, 2, size=2)
        lo = rng.uniform(-3, 0, size=2)
        hi = lo + rng.uniform(0.5, 3, size=2)
        rect = PolytopicObstacle.rectangle(lo, hi)
        val = min_clf_over_obstacle(P, q, rect)
        # grid oracle over the rectangle closure
        xs = np.linspace(lo[0], hi[0], 160)
        ys = np.linspace(lo[1], hi[1], 160)
        X, Y = np.meshgrid(xs, ys)
        pts = np.stack([X.ravel(), Y.ravel()], axis=1) - q
        grid = np.einsum("ij,jk,ik->i", pts, P, pts).min()
        diam = np.linalg.norm(hi - lo)
        assert val <= grid + 1e-9
        assert grid - val <= 0.1 * diam  # grid resolution slack


def test_sublevel_monotone_in_level():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    q = np.array([0.5, -0.5])
    ball = CircularObstacle([3.0, 1.0], 0.8)
    levels = np.linspace(0.1, 20, 40)
    hits = [sublevel_intersects_obstacle(P, q, lv, ball) for lv in levels]
    assert hits == sorted(hits)  # False...False True...True


def test_min_barrier_over_sublevel_positive_iff_disjoint():
    P = np.eye(2)
    q = np.zeros(2)
    ball = CircularObstacle([4.0, 0.0], 1.0)
    assert min_barrier_over_sublevel(ball, P, q, 4.0) > 0.0
    assert min_barrier_over_sublevel(ball, P, q, 9.1) <= 0.0
    rect = PolytopicObstacle.rectangle([3.0, -1.0], [5.0, 1.0])
    d = min_barrier_over_sublevel(rect, P, q, 1.0)
    assert 0.0 < d <= 2.0  # true min distance from the unit disk to the box is 2
    assert min_barrier_over_sublevel(rect, P, q, 16.0) <= 0.0


def test_enumerate_patterns_square(square):
    pats = enumerate_active_patterns(square, Box([-10, -10], [10, 10]))
    singles = [p for p in pats if len(p) == 1]
    pairs = [p for p in pats if len(p) == 2]
    assert len(singles) == 4
    assert sorted(pairs) == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_enumerate_patterns_restricted_region(square):
    # a slab strictly left of the square sees only the left face (index 2)
    region = Box([-10, -0.5], [-1.5, 0.5])
    pats = enumerate_active_patterns(square, region)
    assert pats == [(2,)]
    # superset property over samples of a wider region
    wide = Box([-10, -10], [-1.5, 10])
    pats = enumerate_active_patterns(square, wide)
    rng = np.random.default_rng(2)
    for _ in range(300):
        x = rng.uniform(wide.lo, wide.hi)
        if barrier_value(square, x) >= 0.0:
            act = active_set(square, x)
            assert act in pats or len(act) > 2


def test_enumerate_patterns_point_region(square):
    pats = enumerate_active_patterns(square, Box([3.0, 0.0], [3.0, 0.0]))
    assert pats == [(0,)]


# -- environment file handling -------------------------------------------------

def test_load_bundled_roundtrip(tmp_path):
    doc = {
        "bounds": {"min": [0, 0], "max": [10, 10]},
        "obstacles": [
            {"type": "circle", "center": [5, 5], "radius": 1.0, "inflation": 0.25, "alpha0": 5.0},
            {"type": "polytope", "alpha0": 2.0,
             "faces": [{"a": [1, 0], "b": -9.5}, {"a": [-1, 0], "b": 8.5},
                       {"a": [0, 1], "b": -2.0}, {"a": [0, -1], "b": 1.0}]},
        ],
    }
    path = tmp_path / "env.json"
    path.write_text(json.dumps(doc))
    env = load_environment(path)
    assert len(env.obstacles) == 2
    assert env.obstacles[0].r_eff == 1.25
    assert env.alphas == (5.0, 2.0)


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: d.pop("bounds"), "bounds"),
    (lambda d: d["obstacles"][0].update(type="blob"), "type"),
    (lambda d: d["obstacles"][0].update(alpha0=-1), "alpha0"),
    (lambda d: d["obstacles"][0].update(radius=-2), "obstacles[0]"),
    (lambda d: d["obstacles"][1].update(faces=[]), "faces"),
])
def test_loader_diagnostics(mutate, fragment):
    doc = {
        "bounds": {"min": [0, 0], "max": [10, 10]},
        "obstacles": [
            {"type": "circle", "center": [5, 5], "radius": 1.0, "alpha0": 5.0},
            {"type": "polytope", "alpha0": 2.0,
             "faces": [{"a": [1, 0], "b": -9.5}, {"a": [-1, 0], "b": 8.5},
                       {"a": [0, 1], "b": -2.0}, {"a": [0, -1], "b": 1.0}]},
        ],
    }
    mutate(doc)
    with pytest.raises(EnvironmentFormatError) as err:
        environment_from_dict(doc)
    assert fragment in str(err.value)


def test_loader_reports_json_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "bounds": }')
    with pytest.raises(EnvironmentFormatError, match="line 2"):
        load_environment(path)
