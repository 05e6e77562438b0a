"""Tree planners: certificate-gated RRT, the geometric baseline, and the
rollout-based barrier-filtered baseline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .clf_cbf import DecreaseRate, QuadraticClf, barrier_rows, build_chain, double_integrator_clf, min_norm_control
from .compatibility import (
    CheckParams,
    CompatCertificate,
    check_circle_closed_form,
    check_double_integrator_circular,
    check_linear_polytopic,
    reduce_cbf_set,
)
from .dynamics import System, integrate_step, planning_system, workspace_point
from .geometry import (
    Box,
    CircularObstacle,
    Environment,
    PolytopicObstacle,
    barrier_value,
    ellipsoid_bbox,
    enumerate_active_patterns,
    in_free_space,
)


@dataclass(frozen=True)
class GoalRegion:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius <= 0.0:
            raise ValueError("goal radius must be positive")

    def contains(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius)


@dataclass(frozen=True)
class PlannerConfig:
    iterations: int = 2000
    eta: float = 2.0
    tau: int = 5
    goal: GoalRegion | None = None
    seed: int = 0
    sigma_factor: float = 0.5
    alpha_growth: float = 2.0
    check: CheckParams = field(default_factory=CheckParams)
    cbf_rrt_horizon: float = 15.0
    cbf_rrt_dt: float = 0.01

    def __post_init__(self):
        if self.iterations < 1 or self.tau < 1:
            raise ValueError("iterations and tau must be >= 1")
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        if not 0.0 < self.sigma_factor < 1.0:
            raise ValueError("sigma_factor must lie in (0, 1)")
        if self.alpha_growth <= 1.0:
            raise ValueError("alpha_growth must exceed 1")


@dataclass(frozen=True)
class ControllerSpec:
    """Certified controller parameters for one edge: CLF target, decrease
    scale, and the per-obstacle gains in force."""

    target: np.ndarray
    sigma: float
    alphas: tuple[float, ...]
    certificates: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        return {
            "target": [float(v) for v in self.target],
            "sigma": self.sigma,
            "alphas": list(self.alphas),
            "certificates": list(self.certificates),
        }

    @staticmethod
    def from_dict(doc: dict) -> "ControllerSpec":
        return ControllerSpec(np.asarray(doc["target"], dtype=float), float(doc["sigma"]),
                              tuple(doc["alphas"]), tuple(doc.get("certificates", ())))


class Tree:
    """Rooted tree over states with per-edge controller payloads."""

    def __init__(self, root):
        root = np.asarray(root, dtype=float)
        self._states = [root]
        self._stack = np.array([root])
        self.parents: list[int | None] = [None]
        self.payload: list[ControllerSpec | None] = [None]

    def __len__(self) -> int:
        return len(self._states)

    @property
    def states(self) -> np.ndarray:
        return self._stack

    def state(self, i: int) -> np.ndarray:
        return self._states[i]

    def add(self, state, parent: int, payload=None) -> int:
        state = np.asarray(state, dtype=float)
        self._states.append(state)
        self._stack = np.vstack([self._stack, state[None, :]])
        self.parents.append(parent)
        self.payload.append(payload)
        return len(self._states) - 1

    def path_to(self, index: int) -> list[int]:
        out = [index]
        while self.parents[out[-1]] is not None:
            out.append(self.parents[out[-1]])
        return out[::-1]


@dataclass(frozen=True)
class PathPlan:
    waypoints: tuple[np.ndarray, ...]
    specs: tuple[ControllerSpec, ...]  # one per segment, len = len(waypoints) - 1

    def to_dict(self) -> dict:
        return {
            "waypoints": [[float(v) for v in w] for w in self.waypoints],
            "specs": [s.to_dict() for s in self.specs],
        }

    @staticmethod
    def from_dict(doc: dict) -> "PathPlan":
        return PathPlan(tuple(np.asarray(w, dtype=float) for w in doc["waypoints"]),
                        tuple(ControllerSpec.from_dict(s) for s in doc["specs"]))


@dataclass
class PlanResult:
    tree: Tree
    plan: PathPlan | None
    iterations_used: int
    solves: int = 0          # optimization/closed-form checks performed
    accepted: int = 0
    wall_time: float = 0.0

    @property
    def success(self) -> bool:
        return self.plan is not None


def random_state(env: Environment, system: System, rng) -> np.ndarray:
    """Uniform sample of the stabilizable planning states.

    Double-integrator samples carry zero velocity (the stabilizable manifold);
    lifted-unicycle planning samples live directly in the lifted plane.
    """
    pos = env.bounds.sample(rng)
    if system.kind == "double_integrator":
        return np.concatenate([pos, np.zeros(system.m)])
    return pos


def nearest_neighbor(tree: Tree, x) -> int:
    """Index of the closest vertex; ties go to the lowest index."""
    d = np.linalg.norm(tree.states - np.asarray(x, dtype=float), axis=1)
    return int(np.argmin(d))


def new_state(x_rand, x_near, eta: float) -> np.ndarray:
    """Steer from x_near toward x_rand, moving at most eta."""
    x_rand = np.asarray(x_rand, dtype=float)
    x_near = np.asarray(x_near, dtype=float)
    gap = x_rand - x_near
    dist = float(np.linalg.norm(gap))
    if dist <= eta:
        return x_rand.copy()
    return x_near + (eta / dist) * gap


def find_clf(system: System, target) -> tuple[QuadraticClf, DecreaseRate]:
    """Analytic CLF and decrease rate for a stabilizable target."""
    target = np.asarray(target, dtype=float)
    if system.kind == "double_integrator":
        clf = double_integrator_clf(target[: system.m])
    elif system.kind in ("single_integrator", "unicycle"):
        clf = QuadraticClf.identity(target)
    else:
        raise ValueError(f"no analytic CLF for system kind '{system.kind}'")
    return clf, DecreaseRate.from_clf(clf)


@dataclass
class CompatOutcome:
    accepted: bool
    spec: ControllerSpec | None
    solves: int
    rounds: int


def compatibility_fn(env: Environment, system: System, x_near, x_new,
                     config: PlannerConfig, edge_seed: int = 0) -> CompatOutcome:
    """Three-step acceptance test for a candidate edge.

    1. keep only obstacles whose closure meets the sublevel set anchored at
       x_near; size safe gains for the rest;
    2. run the applicable compatibility check per kept obstacle (and per
       active face pattern for polytopes);
    3. on failure shrink the decrease rate and grow the gains, up to tau
       rounds.
    """
    psys = planning_system(system)
    clf, base_rate = find_clf(psys, x_new)
    level = clf.value(x_near)
    solves = 0

    reduction = reduce_cbf_set(env, psys, clf, base_rate, level)
    solves += len(env.obstacles)
    alphas = list(env.alphas)
    for idx, gain in reduction.dropped_gains.items():
        alphas[idx] = max(alphas[idx], gain)

    patterns: dict[int, list] = {}
    k = env.dim
    Ps, qs = _workspace_sublevel(clf, level, k)
    for idx in reduction.kept:
        obs = env.obstacles[idx]
        if isinstance(obs, PolytopicObstacle):
            region = ellipsoid_bbox(Ps, qs, level).intersect(env.bounds)
            patterns[idx] = enumerate_active_patterns(obs, region)

    sigma = 1.0
    for round_no in range(config.tau):
        rate = base_rate.scaled(sigma / base_rate.sigma) if sigma != base_rate.sigma else base_rate
        all_ok = True
        certs: list[dict] = []
        for idx in reduction.kept:
            obs = env.obstacles[idx]
            alpha = alphas[idx]
            if isinstance(obs, CircularObstacle):
                if psys.kind == "double_integrator":
                    cert = check_double_integrator_circular(
                        clf.q[:k], obs, alpha, alpha, rate, level,
                        replace(config.check, seed=edge_seed))
                    solves += 2
                else:
                    cert = check_circle_closed_form(
                        clf.q, float(np.sqrt(level)), obs, alpha, rate)
                    solves += 1
                certs.append({"obstacle": idx, "certificate": cert.to_dict()})
                if not cert.compatible:
                    all_ok = False
                    break
            else:
                if psys.kind == "double_integrator":
                    raise ValueError("polytopic obstacles need relative-degree-one dynamics")
                ok_here = True
                for pat in patterns[idx]:
                    cert = check_linear_polytopic(
                        psys, clf, rate, obs, pat, alpha, level,
                        replace(config.check, seed=edge_seed))
                    solves += 2 if cert.branch in (None, "margin_nonneg") else 1
                    certs.append({"obstacle": idx, "certificate": cert.to_dict()})
                    if not cert.compatible:
                        ok_here = False
                        break
                if not ok_here:
                    all_ok = False
                    break
        if all_ok:
            spec = ControllerSpec(np.asarray(x_new, dtype=float), sigma,
                                  tuple(alphas), tuple(certs))
            return CompatOutcome(True, spec, solves, round_no + 1)
        sigma *= config.sigma_factor
        for idx in reduction.kept:
            alphas[idx] *= config.alpha_growth
    return CompatOutcome(False, None, solves, config.tau)


def _workspace_sublevel(clf: QuadraticClf, level: float, k: int):
    from .compatibility import workspace_sublevel

    return workspace_sublevel(clf, level, k)


def c_clf_cbf_rrt(env: Environment, system: System, x_init, config: PlannerConfig) -> PlanResult:
    """Certificate-gated RRT: candidate edges join the tree only when every
    obstacle check certifies the edge's sublevel set."""
    if config.goal is None:
        raise ValueError("config.goal is required")
    psys = planning_system(system)
    x_init = np.asarray(x_init, dtype=float)
    if not in_free_space(env, workspace_point(psys, x_init)):
        raise ValueError("x_init is not in free space")

    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    tree = Tree(x_init)
    solves = 0
    accepted = 0
    plan = None
    it = 0
    for it in range(1, config.iterations + 1):
        x_rand = random_state(env, psys, rng)
        near_idx = nearest_neighbor(tree, x_rand)
        x_near = tree.state(near_idx)
        if np.allclose(x_rand, x_near):
            continue
        x_new = new_state(x_rand, x_near, config.eta)
        if not in_free_space(env, workspace_point(psys, x_new)):
            continue
        outcome = compatibility_fn(env, system, x_near, x_new, config, edge_seed=config.seed + it)
        solves += outcome.solves
        if not outcome.accepted:
            continue
        idx = tree.add(x_new, near_idx, outcome.spec)
        accepted += 1
        if config.goal.contains(x_new):
            plan = _extract_plan(tree, idx)
            break
    return PlanResult(tree, plan, it, solves, accepted, time.perf_counter() - t0)


def _extract_plan(tree: Tree, goal_idx: int) -> PathPlan:
    chain = tree.path_to(goal_idx)
    waypoints = tuple(tree.state(i) for i in chain)
    specs = tuple(tree.payload[i] for i in chain[1:])
    return PathPlan(waypoints, specs)


# -- geometric baseline ---------------------------------------------------------

def segment_collision_free(env: Environment, a, b, step: float = 0.01) -> bool:
    """Exact primitive tests plus a fine sweep along the segment.

    The closed free space allows grazing contact (barrier zero); only interior
    penetration counts as a collision.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (env.bounds.contains(a) and env.bounds.contains(b)):
        return False
    gap = b - a
    length = float(np.linalg.norm(gap))
    for obs in env.obstacles:
        if isinstance(obs, CircularObstacle):
            if _segment_hits_circle(a, b, obs):
                return False
        else:
            if _segment_hits_polytope(a, b, obs):
                return False
    n_samples = max(2, int(np.ceil(length / step)) + 1)
    ts = np.linspace(0.0, 1.0, n_samples)
    pts = a[None, :] + ts[:, None] * gap[None, :]
    for obs in env.obstacles:
        if isinstance(obs, CircularObstacle):
            d = pts - obs.center
            if np.any(np.einsum("ij,ij->i", d, d) - obs.r_eff ** 2 < -1e-12):
                return False
        else:
            vals = (pts @ obs.A.T + obs.b).max(axis=1)
            if np.any(vals < -1e-12):
                return False
    return True


def _segment_hits_circle(a, b, obs: CircularObstacle) -> bool:
    """True when the open segment enters the open disc."""
    d = b - a
    f = a - obs.center
    qa = float(d @ d)
    if qa == 0.0:
        return float(f @ f) < obs.r_eff ** 2 - 1e-12
    qb = 2.0 * float(f @ d)
    qc = float(f @ f) - obs.r_eff ** 2
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:  # tangent or no intersection
        return False
    sq = float(np.sqrt(disc))
    t1 = (-qb - sq) / (2.0 * qa)
    t2 = (-qb + sq) / (2.0 * qa)
    return t1 < 1.0 - 1e-12 and t2 > 1e-12


def _segment_hits_polytope(a, b, obs: PolytopicObstacle) -> bool:
    """Interval intersection of {h_i(p(t)) < 0} over t in [0, 1]."""
    t_lo, t_hi = 0.0, 1.0
    for i in range(obs.n_faces):
        va = float(obs.A[i] @ a + obs.b[i])
        vb = float(obs.A[i] @ b + obs.b[i])
        dv = vb - va
        if abs(dv) < 1e-15:
            if va >= 0.0:
                return False
            continue
        t_cross = -va / dv
        if dv > 0.0:
            t_hi = min(t_hi, t_cross)
        else:
            t_lo = max(t_lo, t_cross)
        if t_lo >= t_hi - 1e-12:
            return False
    return True


def geom_rrt(env: Environment, system: System, x_init, config: PlannerConfig) -> PlanResult:
    """Plain collision-checked RRT over the planning coordinates."""
    if config.goal is None:
        raise ValueError("config.goal is required")
    psys = planning_system(system)
    x_init = np.asarray(x_init, dtype=float)
    if not in_free_space(env, workspace_point(psys, x_init)):
        raise ValueError("x_init is not in free space")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    tree = Tree(x_init)
    plan = None
    accepted = 0
    it = 0
    for it in range(1, config.iterations + 1):
        x_rand = random_state(env, psys, rng)
        near_idx = nearest_neighbor(tree, x_rand)
        x_near = tree.state(near_idx)
        if np.allclose(x_rand, x_near):
            continue
        x_new = new_state(x_rand, x_near, config.eta)
        if not segment_collision_free(env, workspace_point(psys, x_near),
                                      workspace_point(psys, x_new)):
            continue
        idx = tree.add(x_new, near_idx, None)
        accepted += 1
        if config.goal.contains(x_new):
            plan = _geom_plan(tree, idx, env)
            break
    return PlanResult(tree, plan, it, 0, accepted, time.perf_counter() - t0)


def _geom_plan(tree: Tree, goal_idx: int, env: Environment) -> PathPlan:
    chain = tree.path_to(goal_idx)
    waypoints = tuple(tree.state(i) for i in chain)
    specs = tuple(ControllerSpec(waypoints[i + 1], 1.0, env.alphas)
                  for i in range(len(waypoints) - 1))
    return PathPlan(waypoints, specs)


# -- rollout-filtered baseline ---------------------------------------------------

def cbf_rrt(env: Environment, system: System, x_init, config: PlannerConfig) -> PlanResult:
    """Baseline that grows the tree by rolling out a barrier-filtered
    reference input for a fixed horizon from a random existing vertex.

    Every integration step solves a min-deviation program, so the per-node
    optimization count is the horizon divided by the step."""
    if config.goal is None:
        raise ValueError("config.goal is required")
    psys = planning_system(system)
    if psys.kind != "single_integrator":
        raise ValueError("cbf_rrt supports single-integrator (or lifted) planning")
    x_init = np.asarray(x_init, dtype=float)
    if not in_free_space(env, x_init):
        raise ValueError("x_init is not in free space")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    tree = Tree(x_init)
    plan = None
    solves = 0
    accepted = 0
    steps = int(round(config.cbf_rrt_horizon / config.cbf_rrt_dt))
    it = 0
    for it in range(1, config.iterations + 1):
        root = int(rng.integers(len(tree)))
        x = tree.state(root).copy()
        toward = config.goal.center - x
        norm = float(np.linalg.norm(toward))
        if norm < 1e-9:
            continue
        ref = toward / norm
        ok = True
        for _ in range(steps):
            u = _filtered_reference(env, psys, x, ref)
            solves += 1
            if u is None:
                ok = False
                break
            x = integrate_step(psys, x, u, config.cbf_rrt_dt)
            if not env.bounds.contains(x):
                ok = False
                break
        if not ok or not in_free_space(env, x):
            continue
        idx = tree.add(x, root, None)
        accepted += 1
        if config.goal.contains(x):
            plan = _geom_plan(tree, idx, env)
            break
    return PlanResult(tree, plan, it, solves, accepted, time.perf_counter() - t0)


def _filtered_reference(env: Environment, system: System, x, ref):
    """Input closest to the reference satisfying every active barrier row.

    Substituting w = u - ref turns the filter into the same least-distance
    problem the min-norm controller solves."""
    from .optimizer import least_distance

    rows = []
    rhs = []
    for obs, alpha in zip(env.obstacles, env.alphas):
        for row in barrier_rows(obs, alpha, system, x):
            rows.append(row.lg)
            rhs.append(-row.lf - row.alpha_term - float(row.lg @ ref))
    if not rows:
        return ref.copy()
    res = least_distance(np.array(rows), np.array(rhs))
    if not res.feasible:
        return None
    return ref + res.u
