"""Certify that a CLF and a barrier admit a common control on a sublevel set.

Each check decides a one-sided sufficiency: first minimize the gradient
*alignment gap* (can some nonnegative combination of active barrier input
gradients reproduce the CLF input gradient inside the region?); if that gap is
essentially zero, minimize the *decrease margin* on the alignment manifold.
A positive gap or a nonnegative margin certifies compatibility; anything else
is NotCertified, never "incompatible".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clf_cbf import BarrierChain, DecreaseRate, QuadraticClf, build_chain, double_integrator_clf
from .dynamics import System
from .geometry import (
    Box,
    CircularObstacle,
    Environment,
    PolytopicObstacle,
    active_set,
    barrier_components,
    ellipsoid_bbox,
    min_barrier_over_sublevel,
    sublevel_intersects_obstacle,
)
from .optimizer import QcqpProblem, QuadForm, SolveReport, SolverParams, solve_qcqp, zeta_tolerance

COMPATIBLE = "compatible"
NOT_CERTIFIED = "not_certified"

NO_ALIGNMENT = "no_alignment"
MARGIN_NONNEG = "margin_nonneg"
REGION_EMPTY = "region_empty"
CF_ANCHOR_LEQ_CENTER = "cf_anchor_leq_center"
CF_RATIO = "cf_ratio"
CF_MARGIN_ROOT = "cf_margin_root"


@dataclass(frozen=True)
class CheckParams:
    starts: int | None = None  # None = dimension-based solver default
    seed: int = 0
    solver: SolverParams = field(default_factory=SolverParams)


@dataclass(frozen=True)
class CompatCertificate:
    verdict: str
    branch: str | None
    method: str
    alignment_gap: float | None = None
    decrease_margin: float | None = None
    alphas: tuple[float, ...] = ()
    sigma: float = 1.0
    level: float = 0.0
    pattern: tuple[int, ...] | None = None
    seed: int | None = None
    starts: int | None = None
    detail: dict = field(default_factory=dict)

    @property
    def compatible(self) -> bool:
        return self.verdict == COMPATIBLE

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "branch": self.branch,
            "method": self.method,
            "alignment_gap": self.alignment_gap,
            "decrease_margin": self.decrease_margin,
            "alphas": list(self.alphas),
            "sigma": self.sigma,
            "level": self.level,
            "pattern": list(self.pattern) if self.pattern is not None else None,
            "seed": self.seed,
            "starts": self.starts,
            "detail": dict(self.detail),
        }
        return out

    @staticmethod
    def from_dict(doc: dict) -> "CompatCertificate":
        return CompatCertificate(
            verdict=doc["verdict"],
            branch=doc["branch"],
            method=doc["method"],
            alignment_gap=doc.get("alignment_gap"),
            decrease_margin=doc.get("decrease_margin"),
            alphas=tuple(doc.get("alphas", ())),
            sigma=doc.get("sigma", 1.0),
            level=doc.get("level", 0.0),
            pattern=tuple(doc["pattern"]) if doc.get("pattern") is not None else None,
            seed=doc.get("seed"),
            starts=doc.get("starts"),
            detail=doc.get("detail", {}),
        )


class _FormBuilder:
    """Accumulates quadratic/linear/cross terms into one QuadForm."""

    def __init__(self, dim: int):
        self.A = np.zeros((dim, dim))
        self.b = np.zeros(dim)
        self.c = 0.0

    def add_quad(self, idx, M):
        idx = np.asarray(idx)
        self.A[np.ix_(idx, idx)] += 0.5 * (M + M.T)
        return self

    def add_cross(self, rows, cols, M):
        """Adds sum_jk M[j,k] * z[rows[j]] * z[cols[k]]."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        self.A[np.ix_(rows, cols)] += 0.5 * M
        self.A[np.ix_(cols, rows)] += 0.5 * M.T
        return self

    def add_lin(self, idx, v):
        self.b[np.asarray(idx)] += v
        return self

    def add_const(self, c):
        self.c += c
        return self

    def form(self) -> QuadForm:
        return QuadForm(self.A, self.b, self.c)


def _gamma_form(dim, x_idx, P, q, level) -> QuadForm:
    fb = _FormBuilder(dim)
    fb.add_quad(x_idx, P).add_lin(x_idx, -2.0 * P @ q).add_const(float(q @ P @ q) - level)
    return fb.form()


def _sq_objective(M, v0) -> QuadForm:
    """||M z + v0||^2 as a quadratic form."""
    return QuadForm(M.T @ M, 2.0 * M.T @ v0, float(v0 @ v0))


def _neg_rate_terms(fb, x_idx, rate: DecreaseRate):
    sQ = rate.sigma * rate.Q
    fb.add_quad(x_idx, -sQ).add_lin(x_idx, 2.0 * sQ @ rate.q)
    fb.add_const(-float(rate.q @ sQ @ rate.q))


def _neg_drift_clf_terms(fb, x_idx, P, q, A):
    """-L_f V = -2 (x-q)^T P A x for linear drift."""
    fb.add_quad(x_idx, -(P @ A + A.T @ P))
    fb.add_lin(x_idx, 2.0 * (A.T @ (P @ q)))


def _decide(align: QcqpProblem, margin_builder, params: CheckParams, method: str,
            alphas, sigma, level, pattern=None, detail=None) -> CompatCertificate:
    detail = dict(detail or {})
    rep1 = solve_qcqp(align, params.starts, params.seed, params.solver)
    detail["align_status"] = rep1.status
    base = dict(method=method, alphas=tuple(float(a) for a in np.atleast_1d(alphas)),
                sigma=float(sigma), level=float(level),
                pattern=tuple(pattern) if pattern is not None else None,
                seed=params.seed, starts=params.starts)
    if not rep1.feasible:
        return CompatCertificate(COMPATIBLE, REGION_EMPTY, detail=detail, **base)
    eps1 = zeta_tolerance(align)
    if rep1.best_value > eps1:
        return CompatCertificate(COMPATIBLE, NO_ALIGNMENT, alignment_gap=rep1.best_value,
                                 detail=detail, **base)
    margin = margin_builder()
    rep2 = solve_qcqp(margin, params.starts, params.seed + 1, params.solver)
    detail["margin_status"] = rep2.status
    if not rep2.feasible:
        # Alignment was within tolerance but the exact manifold is empty; the
        # conservative answer keeps one-sided soundness.
        detail["note"] = "margin problem infeasible at alignment tolerance"
        return CompatCertificate(NOT_CERTIFIED, None, alignment_gap=rep1.best_value,
                                 detail=detail, **base)
    eps2 = zeta_tolerance(margin)
    if rep2.best_value >= -eps2:
        return CompatCertificate(COMPATIBLE, MARGIN_NONNEG, alignment_gap=rep1.best_value,
                                 decrease_margin=rep2.best_value, detail=detail, **base)
    return CompatCertificate(NOT_CERTIFIED, None, alignment_gap=rep1.best_value,
                             decrease_margin=rep2.best_value, detail=detail, **base)


# -- closed form: single integrator and circular obstacle ---------------------

def check_circle_closed_form(q, anchor_distance: float, circle: CircularObstacle,
                             alpha0: float, rate: DecreaseRate) -> CompatCertificate:
    """Algebraic compatibility test for V = ||x-q||^2 against one circle.

    anchor_distance is ||x0 - q|| (the sublevel radius).  No iterative
    numerics: the verdict is an exact function of the inputs.
    """
    q = np.asarray(q, dtype=float)
    c, r = circle.center, circle.r_eff
    dist_cq = float(np.linalg.norm(c - q))
    if dist_cq < r:
        raise ValueError("target q lies strictly inside the obstacle")
    if anchor_distance <= 0.0:
        raise ValueError("anchor must differ from the target")
    alpha = float(alpha0)
    level = anchor_distance ** 2
    base = dict(method="circle_closed_form", alphas=(alpha,), sigma=rate.sigma, level=level)

    detail = {"anchor_distance": anchor_distance, "center_distance": dist_cq, "radius": r}
    if anchor_distance - dist_cq <= 0.0:
        return CompatCertificate(COMPATIBLE, CF_ANCHOR_LEQ_CENTER, detail=detail, **base)

    ratio = anchor_distance / (anchor_distance - dist_cq)
    beta_cap = 1.0 + dist_cq / r
    detail.update({"ratio": ratio, "beta_cap": beta_cap})
    if ratio > beta_cap:
        return CompatCertificate(COMPATIBLE, CF_RATIO, detail=detail, **base)

    dq = q - c
    qnorm = float(dq @ (rate.sigma * rate.Q) @ dq)
    bl = qnorm - 2.0 * alpha * r * r
    disc = bl * bl + 4.0 * alpha * alpha * r * r * (dist_cq * dist_cq - r * r)
    beta_plus = (np.sqrt(disc) - bl) / (2.0 * alpha * r * r)
    detail["beta_plus"] = float(beta_plus)
    if beta_plus >= beta_cap:
        return CompatCertificate(COMPATIBLE, CF_MARGIN_ROOT, detail=detail, **base)
    return CompatCertificate(NOT_CERTIFIED, None, detail=detail, **base)


# -- QCQP route: linear dynamics, polytopic obstacle --------------------------

def _beta_scale(system, clf, box: Box) -> float:
    half = np.abs(0.5 * (box.hi - box.lo))
    center = 0.5 * (box.hi + box.lo)
    reach = np.linalg.norm(2.0 * system.B.T @ clf.P) * (np.linalg.norm(half) +
                                                        np.linalg.norm(center - clf.q))
    return float(reach)


def check_linear_polytopic(system: System, clf: QuadraticClf, rate: DecreaseRate,
                           obstacle: PolytopicObstacle, pattern, alpha0: float,
                           level: float, params: CheckParams | None = None) -> CompatCertificate:
    """Compatibility over {V <= level} for affine faces under linear dynamics.

    Both stages are genuine QCQPs in (x, beta): all rows are affine except the
    sublevel-set membership quadratic.
    """
    params = params or CheckParams()
    if not system.is_linear:
        raise ValueError("polytopic check needs linear-family dynamics")
    pattern = tuple(int(i) for i in pattern)
    n, m = system.n, system.m
    J = len(pattern)
    dim = n + J
    x_idx = np.arange(n)
    b_idx = np.arange(n, n + J)
    A_faces = obstacle.A[list(pattern)]
    b_faces = obstacle.b[list(pattern)]
    others = [j for j in range(obstacle.n_faces) if j not in pattern]

    base = dict(method="linear_polytopic", alphas=(float(alpha0),), sigma=rate.sigma,
                level=float(level), pattern=pattern, seed=params.seed, starts=params.starts)
    if _pattern_region_empty(obstacle, pattern, clf, level):
        return CompatCertificate(COMPATIBLE, REGION_EMPTY,
                                 detail={"align_status": "pretest_empty"}, **base)
    reachable = _polytopic_alignment_reachable(system, clf, obstacle, pattern, level)
    if reachable is False:
        return CompatCertificate(COMPATIBLE, NO_ALIGNMENT,
                                 detail={"align_status": "exact_empty"}, **base)

    gbox = ellipsoid_bbox(clf.P, clf.q, level)
    s = np.linalg.norm(system.B.T @ A_faces.T, axis=0)
    s_min = max(float(s.min(initial=1.0)), 1e-9) if J else 1.0
    beta_max = min(1e6, 10.0 + 10.0 * _beta_scale(system, clf, gbox) / s_min)
    lo = np.concatenate([gbox.lo, np.zeros(J)])
    hi = np.concatenate([gbox.hi, np.full(J, beta_max)])

    cons = []
    for k in range(J):
        cons.append(QuadForm.linear(-np.eye(dim)[b_idx[k]], 0.0))          # beta_k >= 0
        cons.append(QuadForm.linear(np.pad(-A_faces[k], (0, J)), float(-b_faces[k])))  # h_i >= 0
        for j in others:
            diff = np.pad(obstacle.A[j] - A_faces[k], (0, J))
            cons.append(QuadForm.linear(diff, float(obstacle.b[j] - b_faces[k])))
    cons.append(_gamma_form(dim, x_idx, clf.P, clf.q, level))

    M = np.zeros((m, dim))
    M[:, :n] = -2.0 * system.B.T @ clf.P
    for k in range(J):
        M[:, n + k] = system.B.T @ A_faces[k]
    v0 = 2.0 * system.B.T @ clf.P @ clf.q

    def margin_form() -> QuadForm:
        fb = _FormBuilder(dim)
        _neg_rate_terms(fb, x_idx, rate)
        _neg_drift_clf_terms(fb, x_idx, clf.P, clf.q, system.A)
        for k in range(J):
            w = alpha0 * A_faces[k] + system.A.T @ A_faces[k]
            fb.add_cross([b_idx[k]], x_idx, w[None, :])
            fb.add_lin([b_idx[k]], alpha0 * float(b_faces[k]))
        return fb.form()

    def margin_builder() -> QcqpProblem:
        square = m == n and abs(np.linalg.det(system.B)) > 1e-12
        if square:
            # On the alignment manifold x is an affine function of the
            # multipliers (the input matrix cancels); restricting the margin
            # QCQP to that section removes the equality rows entirely.
            T = np.linalg.solve(clf.P, A_faces.T) / 2.0
            S = np.vstack([T, np.eye(J)])
            s0 = np.concatenate([clf.q, np.zeros(J)])
            rows = [_restrict_affine(g, S, s0) for g in cons]
            rows = [g for g in rows if g.coeff_scale() > 0.0]
            obj = _restrict_affine(margin_form(), S, s0)
            return QcqpProblem(obj, tuple(rows), np.zeros(J), np.full(J, beta_max))
        rows = list(cons)
        for r_ in range(m):
            rows.append(QuadForm.linear(M[r_], float(v0[r_])))
            rows.append(QuadForm.linear(-M[r_], float(-v0[r_])))
        return QcqpProblem(margin_form(), tuple(rows), lo, hi)

    if reachable is True:
        detail = {"align_status": "exact_zero"}
        margin = margin_builder()
        rep2 = solve_qcqp(margin, params.starts, params.seed + 1, params.solver)
        detail["margin_status"] = rep2.status
        if not rep2.feasible:
            detail["note"] = "margin problem infeasible at alignment tolerance"
            return CompatCertificate(NOT_CERTIFIED, None, alignment_gap=0.0,
                                     detail=detail, **base)
        eps2 = zeta_tolerance(margin)
        if rep2.best_value >= -eps2:
            return CompatCertificate(COMPATIBLE, MARGIN_NONNEG, alignment_gap=0.0,
                                     decrease_margin=rep2.best_value, detail=detail, **base)
        return CompatCertificate(NOT_CERTIFIED, None, alignment_gap=0.0,
                                 decrease_margin=rep2.best_value, detail=detail, **base)

    # Input-degenerate faces: decide the alignment stage with the solver.
    align = QcqpProblem(_sq_objective(M, v0), tuple(cons), lo, hi)
    return _decide(align, margin_builder, params, "linear_polytopic",
                   (alpha0,), rate.sigma, level, pattern=pattern)


def _restrict_affine(form: QuadForm, S: np.ndarray, s0: np.ndarray) -> QuadForm:
    """Compose a quadratic form with the affine map z = S w + s0."""
    A2 = S.T @ form.A @ S
    b2 = S.T @ (2.0 * form.A @ s0 + form.b)
    c2 = form.value(s0)
    return QuadForm(A2, b2, c2)


def _alignment_section(system: System, clf: QuadraticClf, obstacle, pattern):
    """Affine parameterization (by the multipliers) of the alignment manifold
    {sum_i beta_i B^T a_i = L_g V^T}, or None when the face input-gradients are
    dependent.

    Returns (T, x0) with x = x0 + T beta on the manifold, plus the linear map
    beta(x); used to decide the alignment-gap-zero question exactly.
    """
    A_faces = np.atleast_2d(obstacle.A[list(pattern)])
    G = system.B.T @ A_faces.T                      # (m, J)
    J = G.shape[1]
    gram = G.T @ G
    if np.linalg.matrix_rank(gram, tol=1e-10) < J:
        return None
    # beta(x) = (G^T G)^{-1} G^T 2 B^T P (x - q)
    Minv = np.linalg.inv(gram)
    K = Minv @ G.T @ (2.0 * system.B.T @ clf.P)     # (J, n)
    resid_proj = 2.0 * system.B.T @ clf.P - G @ K   # residual map; zero iff span covers
    return K, resid_proj


def _polytopic_alignment_reachable(system: System, clf: QuadraticClf,
                                   obstacle: PolytopicObstacle, pattern,
                                   level: float):
    """Exact zero test for the alignment gap of the linear/polytopic check.

    The gap is zero iff some x in the pattern region inside {V <= level} has
    L_g V(x) in the cone of the active face input-gradients; eliminating the
    multipliers turns that into linear rows on x plus the sublevel-set
    reachability test already used for Eq.-(20)-style queries.

    Returns True/False, or None when the faces are input-degenerate (caller
    falls back to the solver).
    """
    from .geometry import min_clf_over_obstacle

    section = _alignment_section(system, clf, obstacle, pattern)
    if section is None:
        return None
    K, resid_proj = section
    if np.abs(resid_proj).max(initial=0.0) > 1e-10:
        # L_g V leaves the span of the face gradients except where the
        # residual rows vanish; add them as paired inequalities.
        extra_a = np.vstack([resid_proj, -resid_proj])
        extra_b = extra_a @ (-clf.q)
    else:
        extra_a = np.zeros((0, clf.dim))
        extra_b = np.zeros(0)
    rows_a = [extra_a, -K]                          # beta(x) >= 0
    rows_b = [extra_b, -K @ (-clf.q)]
    others = [j for j in range(obstacle.n_faces) if j not in pattern]
    for i in pattern:
        rows_a.append(-obstacle.A[i][None, :])      # h_i >= 0
        rows_b.append(np.array([-obstacle.b[i]]))
        if others:
            rows_a.append(obstacle.A[others] - obstacle.A[i])
            rows_b.append(obstacle.b[others] - obstacle.b[i])
    region = PolytopicObstacle.__new__(PolytopicObstacle)
    object.__setattr__(region, "A", np.vstack(rows_a))
    object.__setattr__(region, "b", np.concatenate(rows_b))
    return min_clf_over_obstacle(clf.P, clf.q, region) <= level


def _pattern_region_empty(obstacle: PolytopicObstacle, pattern, clf: QuadraticClf,
                          level: float) -> bool:
    """Exact emptiness test of {pattern active, h >= 0} within {V <= level}.

    The pattern set is a polyhedron, so emptiness reduces to the sublevel
    reachability test: min V over the polyhedron > level.
    """
    from .geometry import min_clf_over_obstacle
    rows_a = []
    rows_b = []
    others = [j for j in range(obstacle.n_faces) if j not in pattern]
    for i in pattern:
        rows_a.append(-obstacle.A[i])                 # h_i >= 0
        rows_b.append(-obstacle.b[i])
        for j in others:
            rows_a.append(obstacle.A[j] - obstacle.A[i])   # h_j <= h_i
            rows_b.append(obstacle.b[j] - obstacle.b[i])
    region = PolytopicObstacle.__new__(PolytopicObstacle)
    object.__setattr__(region, "A", np.array(rows_a))
    object.__setattr__(region, "b", np.array(rows_b))
    val = min_clf_over_obstacle(clf.P, clf.q, region)
    return val > level


# -- QCQP route: linear dynamics, circular obstacle ---------------------------

def check_linear_circular(system: System, clf: QuadraticClf, rate: DecreaseRate,
                          circle: CircularObstacle, alpha0: float, level: float,
                          params: CheckParams | None = None) -> CompatCertificate:
    """General-characterization route for one smooth circular barrier.

    The multiplier-times-state products are lifted with s = beta (x - c),
    which keeps both stages quadratically constrained quadratic programs.
    """
    params = params or CheckParams()
    if not system.is_linear:
        raise ValueError("circular QCQP check needs linear-family dynamics")
    n, m = system.n, system.m
    dim = 2 * n + 1
    x_idx = np.arange(n)
    beta = n
    s_idx = np.arange(n + 1, 2 * n + 1)
    c, r = circle.center, circle.r_eff

    gbox = ellipsoid_bbox(clf.P, clf.q, level)
    dist_cq = float(np.linalg.norm(c - clf.q))
    beta_max = 2.0 + dist_cq / r + 1.0
    x_reach = float(np.max(np.linalg.norm(
        np.stack([gbox.lo - c, gbox.hi - c]), axis=1))) + 1.0
    lo = np.concatenate([gbox.lo, [0.0], np.full(n, -beta_max * x_reach)])
    hi = np.concatenate([gbox.hi, [beta_max], np.full(n, beta_max * x_reach)])

    cons = [QuadForm.linear(-np.eye(dim)[beta], 0.0)]
    fb = _FormBuilder(dim)  # r^2 - ||x-c||^2 <= 0
    fb.add_quad(x_idx, -np.eye(n)).add_lin(x_idx, 2.0 * c).add_const(r * r - float(c @ c))
    cons.append(fb.form())
    cons.append(_gamma_form(dim, x_idx, clf.P, clf.q, level))
    for j in range(n):
        fb = _FormBuilder(dim)  # s_j - beta x_j + beta c_j <= 0
        fb.add_lin([s_idx[j]], 1.0).add_cross([beta], [x_idx[j]], -np.ones((1, 1)))
        fb.add_lin([beta], float(c[j]))
        g = fb.form()
        cons.append(g)
        cons.append(QuadForm(-g.A, -g.b, -g.c))

    M = np.zeros((m, dim))
    M[:, :n] = -2.0 * system.B.T @ clf.P
    M[:, n + 1:] = 2.0 * system.B.T
    v0 = 2.0 * system.B.T @ clf.P @ clf.q
    align = QcqpProblem(_sq_objective(M, v0), tuple(cons), lo, hi)

    def margin_builder() -> QcqpProblem:
        rows = list(cons)
        for r_ in range(m):
            rows.append(QuadForm.linear(M[r_], float(v0[r_])))
            rows.append(QuadForm.linear(-M[r_], float(-v0[r_])))
        fb = _FormBuilder(dim)
        _neg_rate_terms(fb, x_idx, rate)
        _neg_drift_clf_terms(fb, x_idx, clf.P, clf.q, system.A)
        # beta * L_f h = 2 s^T A x;  beta * alpha h = alpha (x^T s - c^T s - beta r^2)
        fb.add_cross(s_idx, x_idx, 2.0 * system.A)
        fb.add_cross(x_idx, s_idx, alpha0 * np.eye(n))
        fb.add_lin(s_idx, -alpha0 * c)
        fb.add_lin([beta], -alpha0 * r * r)
        return QcqpProblem(fb.form(), tuple(rows), lo, hi)

    return _decide(align, margin_builder, params, "linear_circular",
                   (alpha0,), rate.sigma, level)


# -- QCQP route: derivative chains (high relative degree) ---------------------

def _manifold_seeds(states, beta_of_state, lift_of, beta_cap):
    """Warm starts on the multiplier manifold for the lifted-variable QCQPs."""
    seeds = []
    for s in states:
        b = float(np.clip(beta_of_state(s), 0.0, beta_cap))
        seeds.append(np.concatenate([s, [b], lift_of(s, b)]))
    return tuple(seeds)


def check_hocbf(chain: BarrierChain, clf: QuadraticClf, rate: DecreaseRate,
                level: float, params: CheckParams | None = None) -> CompatCertificate:
    """Compatibility of a CLF with a barrier derivative chain over {V <= level}.

    Lifts w = beta x so the terminal-row products stay quadratic; every
    phi_i >= 0 constrains the search to the chain's admissible intersection.
    """
    params = params or CheckParams()
    system = chain.system
    n, m = system.n, system.m
    dim = 2 * n + 1
    x_idx = np.arange(n)
    beta = n
    w_idx = np.arange(n + 1, 2 * n + 1)

    gbox = ellipsoid_bbox(clf.P, clf.q, level)
    x_reach = float(np.max(np.abs(np.stack([gbox.lo, gbox.hi])))) + 1.0
    last = chain.phis[-1]
    s_last = np.linalg.norm(system.B.T @ (2.0 * last.A)) + np.linalg.norm(system.B.T @ last.b)
    beta_max = min(1e6, 10.0 + 10.0 * _beta_scale(system, clf, gbox) / max(s_last, 1e-9))
    lo = np.concatenate([gbox.lo, [0.0], np.full(n, -beta_max * x_reach)])
    hi = np.concatenate([gbox.hi, [beta_max], np.full(n, beta_max * x_reach)])

    cons = [QuadForm.linear(-np.eye(dim)[beta], 0.0)]
    for phi in chain.phis:  # phi_i(x) >= 0, i = 0..m-1
        fb = _FormBuilder(dim)
        fb.add_quad(x_idx, -phi.A).add_lin(x_idx, -phi.b).add_const(-phi.c)
        cons.append(fb.form())
    cons.append(_gamma_form(dim, x_idx, clf.P, clf.q, level))
    for j in range(n):
        fb = _FormBuilder(dim)  # w_j - beta x_j <= 0 and its negation
        fb.add_lin([w_idx[j]], 1.0).add_cross([beta], [x_idx[j]], -np.ones((1, 1)))
        g = fb.form()
        cons.append(g)
        cons.append(QuadForm(-g.A, -g.b, -g.c))

    # beta L_g phi = B^T (2 A_phi w + b_phi beta); L_g V = 2 B^T P (x - q)
    M = np.zeros((m, dim))
    M[:, :n] = -2.0 * system.B.T @ clf.P
    M[:, beta] = system.B.T @ last.b
    M[:, n + 1:] = 2.0 * system.B.T @ last.A
    v0 = 2.0 * system.B.T @ clf.P @ clf.q

    from .optimizer import halton

    def beta_of_state(s):
        g = system.B.T @ (2.0 * last.A @ s + last.b)
        t = 2.0 * system.B.T @ clf.P @ (s - clf.q)
        den = float(g @ g)
        return float(g @ t) / den if den > 1e-14 else 0.0

    state_seeds = gbox.lo + halton(12, n) * (gbox.hi - gbox.lo)
    seeds = _manifold_seeds(state_seeds, beta_of_state, lambda s, b: b * s, beta_max)
    align = QcqpProblem(_sq_objective(M, v0), tuple(cons), lo, hi, seeds)

    from .clf_cbf import lie_along

    def margin_builder() -> QcqpProblem:
        rows = list(cons)
        for r_ in range(m):
            rows.append(QuadForm.linear(M[r_], float(v0[r_])))
            rows.append(QuadForm.linear(-M[r_], float(-v0[r_])))
        psi_l = lie_along(system, last)
        psi = QuadForm(psi_l.A + chain.terminal_gain * last.A,
                       psi_l.b + chain.terminal_gain * last.b,
                       psi_l.c + chain.terminal_gain * last.c)
        fb = _FormBuilder(dim)
        _neg_rate_terms(fb, x_idx, rate)
        _neg_drift_clf_terms(fb, x_idx, clf.P, clf.q, system.A)
        # beta psi(x) = x^T A_psi w + b_psi^T w + c_psi beta
        fb.add_cross(x_idx, w_idx, psi.A)
        fb.add_lin(w_idx, psi.b)
        fb.add_lin([beta], psi.c)
        return QcqpProblem(fb.form(), tuple(rows), lo, hi, seeds)

    gains = chain.gains + (chain.terminal_gain,)
    return _decide(align, margin_builder, params, "hocbf_chain",
                   gains, rate.sigma, level)


# -- QCQP route: double integrator and circular obstacle (as printed) ---------

def check_double_integrator_circular(x_f, circle: CircularObstacle, alpha1: float,
                                     alpha2: float, rate: DecreaseRate, level: float,
                                     params: CheckParams | None = None) -> CompatCertificate:
    """Double-integrator chain check in its dedicated lifted form.

    Substitutions xt = beta (x - x_c) and vt = beta v are encoded as paired
    inequalities; equivalent to check_hocbf on the same chain but assembled
    independently, which makes the agreement between the two a real test.
    """
    params = params or CheckParams()
    x_f = np.atleast_1d(np.asarray(x_f, dtype=float))
    k = x_f.size
    xc, r = circle.center, circle.r_eff
    clf = double_integrator_clf(x_f)

    # zeta1 variables: (x, v, beta, xt)
    dim1 = 3 * k + 1
    x_idx = np.arange(k)
    v_idx = np.arange(k, 2 * k)
    beta1 = 2 * k
    xt1 = np.arange(2 * k + 1, 3 * k + 1)

    state_idx = np.concatenate([x_idx, v_idx])
    gbox = ellipsoid_bbox(clf.P, clf.q, level)
    dist = float(np.linalg.norm(np.maximum(np.abs(gbox.lo[:k] - xc), np.abs(gbox.hi[:k] - xc))))
    beta_max = 10.0 + 2.0 * (1.0 + np.linalg.norm(x_f - xc) / r + np.sqrt(max(level, 0.0)) / r)
    reach = beta_max * (dist + 1.0)
    vmax = np.sqrt(max(level, 0.0)) * 2.0 + 1.0

    def phi_constraints(dim, xi, vi):
        out = []
        fb = _FormBuilder(dim)  # r^2 - ||x-xc||^2 <= 0
        fb.add_quad(xi, -np.eye(k)).add_lin(xi, 2.0 * xc).add_const(r * r - float(xc @ xc))
        out.append(fb.form())
        fb = _FormBuilder(dim)  # -phi1 = -2(x-xc)^T v - alpha1 (||x-xc||^2 - r^2) <= 0
        fb.add_cross(xi, vi, -2.0 * np.eye(k))
        fb.add_lin(vi, 2.0 * xc)
        fb.add_quad(xi, -alpha1 * np.eye(k))
        fb.add_lin(xi, 2.0 * alpha1 * xc)
        fb.add_const(alpha1 * (r * r - float(xc @ xc)))
        out.append(fb.form())
        return out

    def tie_rows(dim, target_idx, source_idx, shift, bi):
        """beta*(z[source]-shift) - z[target] <= 0 and its negation."""
        out = []
        for j in range(k):
            fb = _FormBuilder(dim)
            fb.add_cross([bi], [source_idx[j]], np.ones((1, 1)))
            fb.add_lin([bi], -float(shift[j]))
            fb.add_lin([target_idx[j]], -1.0)
            g = fb.form()
            out.append(g)
            out.append(QuadForm(-g.A, -g.b, -g.c))
        return out

    lo1 = np.concatenate([gbox.lo, [0.0], np.full(k, -reach)])
    hi1 = np.concatenate([gbox.hi, [beta_max], np.full(k, reach)])
    cons1 = [QuadForm.linear(-np.eye(dim1)[beta1], 0.0)]
    cons1 += phi_constraints(dim1, x_idx, v_idx)
    cons1.append(_gamma_form(dim1, state_idx, clf.P, clf.q, level))
    cons1 += tie_rows(dim1, xt1, x_idx, xc, beta1)

    from .optimizer import halton

    def beta_of_state(s):
        g = 2.0 * (s[:k] - xc)
        t = 2.0 * s[k:] + (s[:k] - x_f)
        den = float(g @ g)
        return float(g @ t) / den if den > 1e-14 else 0.0

    state_seeds = gbox.lo + halton(12, 2 * k) * (gbox.hi - gbox.lo)
    seeds1 = _manifold_seeds(state_seeds, beta_of_state,
                             lambda s, b: b * (s[:k] - xc), beta_max)
    seeds2 = _manifold_seeds(state_seeds, beta_of_state,
                             lambda s, b: np.concatenate([b * (s[:k] - xc), b * s[k:]]),
                             beta_max)

    # || 2 xt - 2 v - (x - x_f) ||^2
    M1 = np.zeros((k, dim1))
    M1[:, xt1] = 2.0 * np.eye(k)
    M1[:, v_idx] = -2.0 * np.eye(k)
    M1[:, x_idx] = -np.eye(k)
    align = QcqpProblem(_sq_objective(M1, x_f.copy()), tuple(cons1), lo1, hi1, seeds1)

    def margin_builder() -> QcqpProblem:
        # zeta2 variables: (x, v, beta, xt, vt)
        dim2 = 4 * k + 1
        xt2 = np.arange(2 * k + 1, 3 * k + 1)
        vt2 = np.arange(3 * k + 1, 4 * k + 1)
        lo2 = np.concatenate([gbox.lo, [0.0], np.full(k, -reach), np.full(k, -beta_max * vmax)])
        hi2 = np.concatenate([gbox.hi, [beta_max], np.full(k, reach), np.full(k, beta_max * vmax)])
        rows = [QuadForm.linear(-np.eye(dim2)[beta1], 0.0)]
        rows += phi_constraints(dim2, x_idx, v_idx)
        rows.append(_gamma_form(dim2, state_idx, clf.P, clf.q, level))
        rows += tie_rows(dim2, xt2, x_idx, xc, beta1)
        rows += tie_rows(dim2, vt2, v_idx, np.zeros(k), beta1)
        for j in range(k):  # 2 xt - 2 v - (x - x_f) = 0 as paired inequalities
            row = np.zeros(dim2)
            row[xt2[j]] = 2.0
            row[v_idx[j]] = -2.0
            row[x_idx[j]] = -1.0
            rows.append(QuadForm.linear(row, float(x_f[j])))
            rows.append(QuadForm.linear(-row, -float(x_f[j])))

        fb = _FormBuilder(dim2)
        # 2 vt.v + 2 alpha1 xt.v + 2 alpha2 xt.v + alpha1 alpha2 xt.(x - xc)
        #   - alpha1 alpha2 r^2 beta - 2 (x-x_f).v - ||v||^2 - W(x, v)
        fb.add_cross(vt2, v_idx, 2.0 * np.eye(k))
        fb.add_cross(xt2, v_idx, (2.0 * alpha1 + 2.0 * alpha2) * np.eye(k))
        fb.add_cross(xt2, x_idx, alpha1 * alpha2 * np.eye(k))
        fb.add_lin(xt2, -alpha1 * alpha2 * xc)
        fb.add_lin([beta1], -alpha1 * alpha2 * r * r)
        fb.add_cross(x_idx, v_idx, -2.0 * np.eye(k))
        fb.add_lin(v_idx, 2.0 * x_f)
        fb.add_quad(v_idx, -np.eye(k))
        _neg_rate_terms(fb, state_idx, rate)
        return QcqpProblem(fb.form(), tuple(rows), lo2, hi2, seeds2)

    return _decide(align, margin_builder, params, "double_integrator_circular",
                   (alpha1, alpha2), rate.sigma, level)


# -- dispatch ------------------------------------------------------------------

def check_general(system: System, clf: QuadraticClf, rate: DecreaseRate, obstacle,
                  alpha0: float, level: float, pattern=None,
                  params: CheckParams | None = None) -> CompatCertificate:
    """Route a query to the applicable check."""
    if isinstance(obstacle, PolytopicObstacle):
        if pattern is None:
            raise ValueError("polytopic queries need an active pattern")
        return check_linear_polytopic(system, clf, rate, obstacle, pattern,
                                      alpha0, level, params)
    if system.kind == "double_integrator":
        chain = build_chain(system, obstacle, (alpha0, alpha0))
        return check_hocbf(chain, clf, rate, level, params)
    return check_linear_circular(system, clf, rate, obstacle, alpha0, level, params)


# -- constraint-set reduction --------------------------------------------------

@dataclass(frozen=True)
class ReduceResult:
    kept: tuple[int, ...]
    dropped_gains: dict[int, float]
    details: dict[int, dict] = field(default_factory=dict)


def clf_reference_control(system: System, clf: QuadraticClf, rate: DecreaseRate, x):
    """Min-norm input for the decrease row alone (closed form)."""
    from .dynamics import lie_derivatives

    grad = clf.grad(x)
    lf, lg = lie_derivatives(system, grad, x)
    need = lf + rate.value(x)
    den = float(lg @ lg)
    if den <= 1e-30:
        return np.zeros(system.m)
    return -max(0.0, need) / den * lg


def _reference_controls_batch(system: System, clf: QuadraticClf, rate: DecreaseRate, X):
    """clf_reference_control vectorized over rows of X (linear-family systems)."""
    grads = 2.0 * (X - clf.q) @ clf.P
    fx = X @ system.A.T
    lf = np.einsum("ij,ij->i", grads, fx)
    lg = grads @ system.B
    dW = X - rate.q
    W = rate.sigma * np.einsum("ij,jk,ik->i", dW, rate.Q, dW)
    need = np.maximum(0.0, lf + W)
    den = np.einsum("ij,ij->i", lg, lg)
    safe = den > 1e-30
    coef = np.where(safe, -need / np.where(safe, den, 1.0), 0.0)
    return coef[:, None] * lg


def workspace_sublevel(clf: QuadraticClf, level: float, k: int):
    """Project {V <= level} onto the first k coordinates (Schur complement)."""
    n = clf.dim
    if k == n:
        return clf.P, clf.q
    Pxx = clf.P[:k, :k]
    Pxv = clf.P[:k, k:]
    Pvv = clf.P[k:, k:]
    Ps = Pxx - Pxv @ np.linalg.solve(Pvv, Pxv.T)
    return Ps, clf.q[:k]


def reduce_cbf_set(env: Environment, system: System, clf: QuadraticClf,
                   rate: DecreaseRate, level: float,
                   probes: int = 1024) -> ReduceResult:
    """Split obstacles into those meeting {V <= level} and safely ignorable ones.

    For each dropped obstacle the returned gain makes its barrier rows hold
    under the CLF reference controller everywhere on the sublevel set: the
    gain exceeds 1.5x the sampled row magnitude divided by the barrier's
    minimum over the set.
    """
    from .dynamics import lie_derivatives

    kept, dropped, details = [], {}, {}
    k = env.dim
    Ps, qs = workspace_sublevel(clf, level, k)
    pts = None
    for idx, obs in enumerate(env.obstacles):
        if sublevel_intersects_obstacle(Ps, qs, level, obs):
            kept.append(idx)
            continue
        d = min_barrier_over_sublevel(obs, Ps, qs, level)
        if d <= 0.0:
            raise RuntimeError(
                f"obstacle {idx} was classified disjoint but its barrier reaches {d}")
        if pts is None:
            pts = _sublevel_probes(env, system, clf, level, probes)
            refs = _reference_controls_batch(system, clf, rate, pts) if len(pts) else pts
        sup = _row_magnitude_sup(system, obs, pts, refs, k)
        gain = max(1e-6, 1.5 * sup / d)
        dropped[idx] = gain
        details[idx] = {"min_barrier": float(d), "row_sup": float(sup),
                        "probes": 0 if pts is None else len(pts)}
    return ReduceResult(tuple(kept), dropped, details)


def _workspace(system, x):
    from .dynamics import workspace_point

    x = np.asarray(x, dtype=float)
    return workspace_point(system, x) if system.kind == "double_integrator" else x


def _row_magnitude_sup(system: System, obs, pts, refs, k: int,
                       tie_tol: float = 1e-9) -> float:
    """max over probes and active components of |L_f h + L_g h . u_ref|."""
    if len(pts) == 0:
        return 0.0
    work = pts[:, :k]
    fx = pts @ system.A.T
    if isinstance(obs, CircularObstacle):
        grads = 2.0 * (work - obs.center)          # (P, k)
        lf = np.einsum("ij,ij->i", grads, fx[:, :k])
        lg_u = np.einsum("ij,ij->i", grads @ system.B[:k], refs)
        return float(np.abs(lf + lg_u).max())
    comps = work @ obs.A.T + obs.b                 # (P, N)
    active = comps >= comps.max(axis=1, keepdims=True) - tie_tol
    lf = fx[:, :k] @ obs.A.T                       # (P, N)
    lg_u = refs @ (system.B[:k].T @ obs.A.T)       # (P, N)
    mags = np.abs(lf + lg_u)
    return float(np.where(active, mags, 0.0).max())


def _component_grad(obstacle, point, i, system):
    if isinstance(obstacle, CircularObstacle):
        g = 2.0 * (point - obstacle.center)
    else:
        g = obstacle.A[i]
    if system.kind == "double_integrator":
        full = np.zeros(system.n)
        full[: system.m] = g
        return full
    return g


def _sublevel_probes(env: Environment, system: System, clf: QuadraticClf,
                     level: float, count: int):
    """Deterministic low-discrepancy sample of {V <= level} with the workspace
    projection inside the free space."""
    from .optimizer import halton

    box = ellipsoid_bbox(clf.P, clf.q, level)
    if box.dim == env.dim:
        box = box.intersect(Box(env.bounds.lo, env.bounds.hi))
    k = env.dim
    chunks = []
    total = 0
    offset = 0
    batch = max(4 * count, 256)
    while total < count and offset < 64 * count:
        unit = halton(batch, box.dim, skip=20 + offset)
        pts = box.lo + unit * (box.hi - box.lo)
        diff = pts - clf.q
        mask = np.einsum("ij,jk,ik->i", diff, clf.P, diff) <= level
        work = pts[:, :k]
        mask &= np.all((work >= env.bounds.lo) & (work <= env.bounds.hi), axis=1)
        for obs in env.obstacles:
            if isinstance(obs, CircularObstacle):
                d = work - obs.center
                mask &= np.einsum("ij,ij->i", d, d) >= obs.r_eff ** 2
            else:
                mask &= (work @ obs.A.T + obs.b).max(axis=1) >= 0.0
        good = pts[mask]
        chunks.append(good)
        total += len(good)
        offset += batch
    if not total:
        return np.empty((0, box.dim))
    return np.vstack(chunks)[:count]
