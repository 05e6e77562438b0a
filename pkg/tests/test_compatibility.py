import numpy as np
import pytest

from compatplan.clf_cbf import DecreaseRate, QuadraticClf, build_chain, double_integrator_clf
from compatplan.compatibility import (
    CF_ANCHOR_LEQ_CENTER,
    CF_MARGIN_ROOT,
    CF_RATIO,
    COMPATIBLE,
    MARGIN_NONNEG,
    NO_ALIGNMENT,
    NOT_CERTIFIED,
    REGION_EMPTY,
    CheckParams,
    CompatCertificate,
    check_circle_closed_form,
    check_double_integrator_circular,
    check_general,
    check_hocbf,
    check_linear_circular,
    check_linear_polytopic,
    clf_reference_control,
    reduce_cbf_set,
)
from compatplan.dynamics import double_integrator, linear_system, single_integrator
from compatplan.geometry import Box, CircularObstacle, Environment, PolytopicObstacle
from compatplan.oracle import grid_compat_oracle


@pytest.fixture
def si2():
    return single_integrator(2)


def identity_pair(q):
    clf = QuadraticClf.identity(np.asarray(q, dtype=float))
    return clf, DecreaseRate.from_clf(clf)


# -- closed form ----------------------------------------------------------------

def test_closed_form_anchor_within_center_distance():
    _, rate = identity_pair([0.0, 0.0])
    cert = check_circle_closed_form(np.zeros(2), 1.0, CircularObstacle([5.0, 0.0], 1.0),
                                    1.0, rate)
    assert cert.compatible and cert.branch == CF_ANCHOR_LEQ_CENTER


def test_closed_form_ratio_branch():
    _, rate = identity_pair([0.0, 0.0])
    cert = check_circle_closed_form(np.zeros(2), 2.2, CircularObstacle([2.0, 0.0], 1.0),
                                    1.0, rate)
    assert cert.compatible and cert.branch == CF_RATIO
    assert cert.detail["ratio"] == pytest.approx(11.0)


def test_closed_form_margin_root_arithmetic():
    # q=0, c=(2,0), r=1, anchor 10, Q=I, alpha=1: ratio 1.25 <= 3 and
    # beta_plus = (sqrt(4+12)-2)/2 = 1 < 3: not certified
    _, rate = identity_pair([0.0, 0.0])
    cert = check_circle_closed_form(np.zeros(2), 10.0, CircularObstacle([2.0, 0.0], 1.0),
                                    1.0, rate)
    assert cert.verdict == NOT_CERTIFIED
    assert cert.detail["beta_plus"] == pytest.approx(1.0)


def test_closed_form_margin_root_branch_unreachable_for_pd_rates():
    # With a positive definite decrease rate the margin-root bullet never
    # fires: the root stays strictly below the multiplier cap for any gain.
    # (An instance whose sublevel ball covers the obstacle's far side is
    # genuinely incompatible there, so this is the correct outcome; the
    # condition is still evaluated exactly as stated.)
    rng = np.random.default_rng(4)
    fired = 0
    for _ in range(300):
        c = rng.uniform(1.2, 5.0, size=2)
        d = np.linalg.norm(c)
        r = rng.uniform(0.3, min(1.5, d - 0.05))
        anchor = rng.uniform(d + r + 0.01, 3.0 * d + 2 * r)  # past the ratio bullet
        alpha = rng.uniform(0.1, 50.0)
        sigma = rng.uniform(0.01, 1.0)
        rate = DecreaseRate(np.eye(2), np.zeros(2), sigma)
        cert = check_circle_closed_form(np.zeros(2), anchor, CircularObstacle(c, r),
                                        alpha, rate)
        fired += cert.branch == CF_MARGIN_ROOT
        if cert.branch is None:
            assert cert.detail["beta_plus"] < cert.detail["beta_cap"]
    assert fired == 0


def test_closed_form_rejects_target_inside():
    _, rate = identity_pair([0.0, 0.0])
    with pytest.raises(ValueError):
        check_circle_closed_form(np.zeros(2), 1.0, CircularObstacle([0.5, 0.0], 1.0),
                                 1.0, rate)


def test_closed_form_is_pure():
    _, rate = identity_pair([0.0, 0.0])
    a = check_circle_closed_form(np.zeros(2), 3.7, CircularObstacle([2.5, 1.0], 1.2), 2.0, rate)
    b = check_circle_closed_form(np.zeros(2), 3.7, CircularObstacle([2.5, 1.0], 1.2), 2.0, rate)
    assert a.to_dict() == b.to_dict()


# -- QCQP routes ----------------------------------------------------------------

def test_circular_qcqp_agrees_with_closed_form(si2):
    clf, rate = identity_pair([0.0, 0.0])
    cases = [
        (1.0, (5.0, 0.0), 1.0),
        (2.2, (2.0, 0.0), 1.0),
        (10.0, (2.0, 0.0), 1.0),
        (3.0, (2.0, 0.5), 5.0),
        (4.0, (3.0, -1.0), 2.0),
    ]
    for dist, center, alpha in cases:
        circle = CircularObstacle(np.array(center), 1.0)
        qcqp = check_linear_circular(si2, clf, rate, circle, alpha, dist ** 2)
        closed = check_circle_closed_form(np.zeros(2), dist, circle, alpha, rate)
        assert qcqp.verdict == closed.verdict, (dist, center, alpha)


def test_polytopic_region_empty_short_circuit(si2):
    clf, rate = identity_pair([0.0, 0.0])
    rect = PolytopicObstacle.rectangle([10.0, -1.0], [12.0, 1.0])
    cert = check_linear_polytopic(si2, clf, rate, rect, (0,), 5.0, 4.0)
    assert cert.compatible and cert.branch == REGION_EMPTY


def test_polytopic_relaxation_recovers_compatibility(si2):
    # target 2 m behind a rectangle face: a weak gain fails, doubling it twice
    # certifies (decrease margin turns nonnegative)
    clf, rate = identity_pair([0.0, 0.0])
    rect = PolytopicObstacle.rectangle([2.0, -1.0], [4.0, 1.0])
    verdicts = []
    for alpha in (0.2, 0.4, 0.8):
        cert = check_linear_polytopic(si2, clf, rate, rect, (1,), alpha, 9.0)
        verdicts.append(cert.verdict)
    assert verdicts[0] == NOT_CERTIFIED
    assert verdicts[-1] == COMPATIBLE


def test_polytopic_degenerate_face_no_alignment():
    # top-face gradient orthogonal to the input image while the decrease
    # gradient stays nonzero over the pattern region: alignment impossible
    A = np.zeros((2, 2))
    B = np.array([[1.0, 0.0], [0.0, 0.0]])  # inputs act on the first axis only
    sys = linear_system(A, B)
    clf = QuadraticClf(np.eye(2), np.array([0.0, 0.0]))
    rate = DecreaseRate.from_clf(clf)
    rect = PolytopicObstacle.rectangle([2.0, -1.0], [4.0, 1.0])
    cert = check_linear_polytopic(sys, clf, rate, rect, (1,), 1.0, 25.0)
    assert cert.compatible
    assert cert.branch == NO_ALIGNMENT
    assert cert.alignment_gap is None or cert.alignment_gap > 1.0


def test_check_general_dispatch(si2):
    clf, rate = identity_pair([0.0, 0.0])
    circle = CircularObstacle([2.0, 0.0], 1.0)
    rect = PolytopicObstacle.rectangle([2.0, -1.0], [4.0, 1.0])
    c1 = check_general(si2, clf, rate, circle, 1.0, 4.84)
    assert c1.method == "linear_circular"
    c2 = check_general(si2, clf, rate, rect, 1.0, 4.0, pattern=(1,))
    assert c2.method == "linear_polytopic"
    with pytest.raises(ValueError):
        check_general(si2, clf, rate, rect, 1.0, 4.0)


def test_linear_polytopic_on_general_linear_system():
    rng = np.random.default_rng(0)
    A = np.array([[0.0, 1.0], [-0.5, -0.4]])
    B = np.array([[0.2, 0.0], [0.0, 1.0]])
    sys = linear_system(A, B)
    clf = QuadraticClf(np.array([[2.0, 0.2], [0.2, 1.0]]), np.zeros(2))
    rate = DecreaseRate.from_clf(clf)
    rect = PolytopicObstacle.rectangle([1.5, -0.5], [3.0, 0.5])
    cert = check_linear_polytopic(sys, clf, rate, rect, (1,), 2.0, 9.0)
    assert cert.verdict in (COMPATIBLE, NOT_CERTIFIED)
    if cert.compatible and cert.branch not in (REGION_EMPTY, NO_ALIGNMENT):
        env = Environment(Box([-6, -6], [6, 6]), (rect,), (2.0,))
        res = grid_compat_oracle(env, sys, clf, rate, 9.0, [2.0], resolution=0.08)
        assert res.ok


# -- derivative chain routes ------------------------------------------------------

def test_hocbf_matches_double_integrator_route():
    rng = np.random.default_rng(7)
    agree = 0
    for _ in range(10):
        x_f = rng.uniform(-1, 1, size=1)
        xc = rng.uniform(2.0, 4.0, size=1)
        r = rng.uniform(0.5, 1.2)
        a1 = rng.uniform(0.5, 2.0)
        a2 = rng.uniform(0.5, 2.0)
        level = rng.uniform(1.0, 9.0)
        clf = double_integrator_clf(x_f)
        rate = DecreaseRate.from_clf(clf)
        circle = CircularObstacle(xc, r)
        di = double_integrator(1)
        chain = build_chain(di, circle, (a1, a2))
        via_chain = check_hocbf(chain, clf, rate, level, CheckParams(seed=3))
        direct = check_double_integrator_circular(x_f, circle, a1, a2, rate, level,
                                                  CheckParams(seed=3))
        if via_chain.verdict == direct.verdict:
            agree += 1
        else:
            # escalate starts once before declaring disagreement
            via_chain = check_hocbf(chain, clf, rate, level, CheckParams(starts=128, seed=3))
            direct = check_double_integrator_circular(x_f, circle, a1, a2, rate, level,
                                                      CheckParams(starts=128, seed=3))
            assert via_chain.verdict == direct.verdict
            agree += 1
    assert agree == 10


def test_hocbf_relative_degree_one_reduces_to_circular(si2):
    clf, rate = identity_pair([0.0, 0.0])
    circle = CircularObstacle([3.0, 0.0], 1.0)
    chain = build_chain(si2, circle, (1.0,))
    via_chain = check_hocbf(chain, clf, rate, 4.0, CheckParams(seed=5))
    direct = check_linear_circular(si2, clf, rate, circle, 1.0, 4.0, CheckParams(seed=5))
    assert via_chain.verdict == direct.verdict


def test_certificate_serialization_roundtrip(si2):
    clf, rate = identity_pair([0.0, 0.0])
    cert = check_linear_circular(si2, clf, rate, CircularObstacle([3.0, 0.0], 1.0), 1.0, 4.0)
    doc = cert.to_dict()
    back = CompatCertificate.from_dict(doc)
    assert back.to_dict() == doc


# -- gain monotonicity -------------------------------------------------------------

def test_gain_monotonicity_closed_form():
    rng = np.random.default_rng(11)
    for _ in range(200):
        q = np.zeros(2)
        c = rng.uniform(1.5, 5.0, size=2)
        r = rng.uniform(0.4, min(1.2, np.linalg.norm(c) - 0.05))
        anchor = rng.uniform(0.5, 8.0)
        alpha = rng.uniform(1.0, 6.0)
        sigma = rng.uniform(0.3, 1.0)
        rate = DecreaseRate(np.eye(2), q, sigma)
        cert = check_circle_closed_form(q, anchor, CircularObstacle(c, r), alpha, rate)
        if not cert.compatible:
            continue
        stronger = check_circle_closed_form(q, anchor, CircularObstacle(c, r),
                                            alpha * 2.0, rate.scaled(0.5))
        assert stronger.compatible


def test_gain_monotonicity_polytopic(si2):
    clf, rate = identity_pair([0.0, 0.0])
    rect = PolytopicObstacle.rectangle([2.0, -1.0], [4.0, 1.0])
    base = check_linear_polytopic(si2, clf, rate, rect, (1,), 0.8, 9.0)
    assert base.compatible
    for factor in (2.0, 4.0):
        relaxed = check_linear_polytopic(si2, clf, rate.scaled(1.0 / factor), rect, (1,),
                                         0.8 * factor, 9.0)
        assert relaxed.compatible
        if base.decrease_margin is not None and relaxed.decrease_margin is not None:
            assert relaxed.decrease_margin >= base.decrease_margin - 1e-7


# -- constraint-set reduction ------------------------------------------------------

@pytest.fixture
def reduction_env():
    return Environment(
        Box([-10, -10], [20, 10]),
        (CircularObstacle([3.0, 0.0], 1.0), CircularObstacle([12.0, 0.0], 1.5),
         PolytopicObstacle.rectangle([-8.0, -8.0], [-6.0, -6.0])),
        (5.0, 5.0, 5.0))


def test_reduce_far_level_keeps_nothing(reduction_env, si2):
    clf, rate = identity_pair([0.0, 0.0])
    res = reduce_cbf_set(reduction_env, si2, clf, rate, 0.25)
    assert res.kept == ()
    assert set(res.dropped_gains) == {0, 1, 2}


def test_reduce_keeps_touching_obstacle(reduction_env, si2):
    clf, rate = identity_pair([0.0, 0.0])
    res = reduce_cbf_set(reduction_env, si2, clf, rate, 4.0)  # ball of radius 2 touches circle 0
    assert 0 in res.kept
    assert 1 in res.dropped_gains and 2 in res.dropped_gains


def test_reduce_dropped_rows_hold_at_probes(reduction_env, si2):
    from compatplan.compatibility import _sublevel_probes
    from compatplan.geometry import active_set, barrier_components
    from compatplan.dynamics import lie_derivatives

    clf, rate = identity_pair([0.0, 0.0])
    level = 4.0
    res = reduce_cbf_set(reduction_env, si2, clf, rate, level)
    pts = _sublevel_probes(reduction_env, si2, clf, level, 1024)
    assert len(pts) == 1024
    for idx, gain in res.dropped_gains.items():
        obs = reduction_env.obstacles[idx]
        for x in pts:
            u = clf_reference_control(si2, clf, rate, x)
            comps = barrier_components(obs, x)
            for i in active_set(obs, x):
                if isinstance(obs, CircularObstacle):
                    grad = 2.0 * (x - obs.center)
                else:
                    grad = obs.A[i]
                lf, lg = lie_derivatives(si2, grad, x)
                assert lf + lg @ u + gain * comps[i] >= 0.0


def test_reduce_rejects_misclassified_obstacle(si2, monkeypatch):
    env = Environment(Box([-10, -10], [10, 10]),
                      (CircularObstacle([3.0, 0.0], 1.0),), (5.0,))
    clf, rate = identity_pair([0.0, 0.0])
    import compatplan.compatibility as comp
    monkeypatch.setattr(comp, "sublevel_intersects_obstacle", lambda *a: False)
    with pytest.raises(RuntimeError, match="disjoint"):
        reduce_cbf_set(env, si2, clf, rate, 25.0)


# -- oracle ------------------------------------------------------------------------

def test_oracle_rejects_high_dimensions():
    from compatplan.dynamics import double_integrator

    env = Environment(Box([-5, -5], [5, 5]), (CircularObstacle([3.0, 0.0], 1.0),), (1.0,))
    clf = double_integrator_clf(np.zeros(2))
    rate = DecreaseRate.from_clf(clf)
    with pytest.raises(ValueError, match="dimension"):
        grid_compat_oracle(env, double_integrator(2), clf, rate, 1.0, [1.0], 0.1)


def test_oracle_rejects_coarse_grid(si2):
    env = Environment(Box([-5, -5], [5, 5]), (CircularObstacle([3.0, 0.0], 1.0),), (1.0,))
    clf, rate = identity_pair([0.0, 0.0])
    with pytest.raises(ValueError, match="coarse"):
        grid_compat_oracle(env, si2, clf, rate, 1.0, [1.0], resolution=1.0)


def test_oracle_confirms_and_refutes(si2):
    clf, rate = identity_pair([0.0, 0.0])
    env = Environment(Box([-12, -12], [12, 12]), (CircularObstacle([2.0, 0.0], 1.0),), (1.0,))
    good = grid_compat_oracle(env, si2, clf, rate, 2.2 ** 2, [1.0], resolution=0.04)
    assert good.ok and good.checked > 100
    bad = grid_compat_oracle(env, si2, clf, rate, 100.0, [1.0], resolution=0.2)
    assert not bad.ok
    assert bad.failing_point is not None


def test_oracle_checks_double_integrator_chain():
    di = double_integrator(1)
    clf = double_integrator_clf(np.array([0.0]))
    rate = DecreaseRate(clf.P, clf.q, 0.25)
    env = Environment(Box([-6.0], [6.0]), (CircularObstacle([3.0], 1.0),), (1.0,))
    res = grid_compat_oracle(env, di, clf, rate, 4.0, [(1.0, 1.0)], resolution=0.03)
    assert res.checked > 100


def test_soundness_vs_oracle_randomized(si2):
    # miniature version of the acceptance gauntlet
    rng = np.random.default_rng(23)
    confirmed = 0
    for _ in range(25):
        c = rng.uniform(-4, 4, size=2)
        r = rng.uniform(0.5, 1.5)
        if np.linalg.norm(c) < r + 0.2:
            continue
        alpha = rng.uniform(1.0, 6.0)
        anchor = rng.uniform(0.5, 5.0)
        clf, rate = identity_pair([0.0, 0.0])
        cert = check_circle_closed_form(np.zeros(2), anchor, CircularObstacle(c, r),
                                        alpha, rate)
        if not cert.compatible:
            continue
        env = Environment(Box([-10, -10], [10, 10]), (CircularObstacle(c, r),), (alpha,))
        res = grid_compat_oracle(env, si2, clf, rate, anchor ** 2, [alpha],
                                 resolution=max(0.02, 0.01 * 2 * anchor))
        assert res.ok, (c, r, alpha, anchor, res.failing_point)
        confirmed += 1
    assert confirmed >= 10
