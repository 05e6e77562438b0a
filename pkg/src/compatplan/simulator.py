"""Closed-loop execution of waypoint plans with the min-norm controller."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clf_cbf import BarrierRow, DecreaseRate, barrier_rows, build_chain, min_norm_control
from .dynamics import System, integrate_step, planning_system, unicycle_input_map, unicycle_lift, workspace_point
from .geometry import CircularObstacle, Environment, PolytopicObstacle, barrier_value
from .planner import PathPlan, find_clf

REACHED = "reached"
TIMEOUT = "timeout"
INFEASIBLE_POINT = "infeasible_point"


@dataclass(frozen=True)
class ExecConfig:
    dt: float = 0.01
    switch_radius: float = 0.5
    segment_timeout: float = 60.0
    barrier_radius: float | None = None  # include obstacles within this workspace distance; None = all

    def __post_init__(self):
        if self.dt <= 0.0 or self.switch_radius <= 0.0 or self.segment_timeout <= 0.0:
            raise ValueError("dt, switch_radius, and segment_timeout must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    min_barrier: np.ndarray
    clf_value: np.ndarray
    segment: np.ndarray
    outcome: str
    infeasible_state: np.ndarray | None = None
    farkas: np.ndarray | None = None

    def to_csv(self, path):
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        header = (["t"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
                  + ["min_h", "V_active", "segment_index"])
        rows = np.column_stack([
            self.times, self.states,
            np.vstack([self.inputs, np.zeros((1, m))])[: len(self.times)],
            self.min_barrier, self.clf_value, self.segment,
        ])
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def _obstacle_near(obs, point, radius) -> bool:
    if radius is None:
        return True
    if isinstance(obs, CircularObstacle):
        return np.linalg.norm(point - obs.center) <= obs.r_eff + radius
    # coarse box check against the face values: within radius of every face plane
    return bool(np.all(obs.A @ point + obs.b <= radius))


def _active_rows(env: Environment, system: System, state, alphas, radius,
                 chains=None) -> list[BarrierRow]:
    point = workspace_point(system, state)
    rows: list[BarrierRow] = []
    for idx, obs in enumerate(env.obstacles):
        if not _obstacle_near(obs, point, radius):
            continue
        if chains is not None:
            rows.append(chains[idx].terminal_row(state))
        else:
            rows.extend(barrier_rows(obs, alphas[idx], system, point))
    return rows


def execute_path(plan: PathPlan, system: System, env: Environment,
                 config: ExecConfig | None = None) -> Trajectory:
    """Run the per-segment min-norm controller from the first waypoint.

    Each step assembles the active barrier rows with the segment's certified
    gains plus the decrease row toward the next waypoint, solves the
    controller, and integrates one zero-order-hold step.  Switching occurs at
    the configured radius; an infeasible controller stops the rollout, which
    is the behavior under study for uncertified plans.
    """
    if config is None:
        config = ExecConfig()
    if not plan.waypoints:
        raise ValueError("empty plan")
    psys = planning_system(system)
    unicycle = system.kind == "unicycle"

    if unicycle:
        p0 = plan.waypoints[0]
        state = np.array([p0[0] - system.lift, p0[1], 0.0])
    else:
        state = plan.waypoints[0].copy()

    times = [0.0]
    states = [state.copy()]
    inputs: list[np.ndarray] = []
    min_h = [_min_barrier(env, _plan_point(system, state))]
    segs = [0]
    vvals: list[float] = []
    outcome = TIMEOUT
    inf_state = None
    farkas = None

    t = 0.0
    max_steps_total = 0
    for seg, spec in enumerate(plan.specs):
        clf, rate0 = find_clf(psys, spec.target)
        rate = DecreaseRate(rate0.Q, rate0.q, spec.sigma)
        chains = None
        if psys.kind == "double_integrator":
            chains = [build_chain(psys, obs, (spec.alphas[i], spec.alphas[i]))
                      for i, obs in enumerate(env.obstacles)]
        seg_steps = int(np.ceil(config.segment_timeout / config.dt))
        max_steps_total += seg_steps
        reached_waypoint = False
        if not vvals:
            vvals.append(clf.value(_plan_state(system, state)))
        for _ in range(seg_steps):
            pstate = _plan_state(system, state)
            if np.linalg.norm(pstate - spec.target) <= config.switch_radius:
                reached_waypoint = True
                break
            rows = _active_rows(env, psys, pstate, spec.alphas, config.barrier_radius, chains)
            res = min_norm_control(psys, pstate, clf, rate, rows)
            if not res.feasible:
                outcome = INFEASIBLE_POINT
                inf_state = state.copy()
                farkas = res.farkas
                break
            u_plan = res.u
            if unicycle:
                v, w = unicycle_input_map(state[2], u_plan, system.lift)
                u_apply = np.array([v, w])
            else:
                u_apply = u_plan
            state = integrate_step(system, state, u_apply, config.dt)
            if not np.all(np.isfinite(state)):
                raise FloatingPointError(f"integrator blow-up at t={t:.3f}: {state}")
            t += config.dt
            times.append(t)
            states.append(state.copy())
            inputs.append(u_apply.copy())
            min_h.append(_min_barrier(env, _plan_point(system, state)))
            vvals.append(clf.value(_plan_state(system, state)))
            segs.append(seg)
        if outcome == INFEASIBLE_POINT:
            break
        if not reached_waypoint:
            outcome = TIMEOUT
            break
        if seg == len(plan.specs) - 1:
            outcome = REACHED
    if not plan.specs:
        outcome = REACHED

    n_steps = len(times)
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        inputs=np.array(inputs) if inputs else np.zeros((0, system.m)),
        min_barrier=np.array(min_h),
        clf_value=np.array(vvals[:n_steps]) if vvals else np.zeros(0),
        segment=np.array(segs),
        outcome=outcome,
        infeasible_state=inf_state,
        farkas=farkas,
    )


def _plan_state(system: System, state) -> np.ndarray:
    """State in planning coordinates (lifted point for the unicycle)."""
    if system.kind == "unicycle":
        return unicycle_lift(state, system.lift)
    return np.asarray(state, dtype=float)


def _plan_point(system: System, state) -> np.ndarray:
    """Workspace point used for barrier evaluation."""
    if system.kind == "unicycle":
        return unicycle_lift(state, system.lift)
    if system.kind == "double_integrator":
        return np.asarray(state, dtype=float)[: system.m]
    return np.asarray(state, dtype=float)


def _min_barrier(env: Environment, point) -> float:
    if not env.obstacles:
        return np.inf
    return min(barrier_value(obs, point) for obs in env.obstacles)


@dataclass(frozen=True)
class SafetyAudit:
    min_barrier: float
    argmin_time: float
    violations: int

    @property
    def safe(self) -> bool:
        return self.violations == 0


def safety_audit(traj: Trajectory, env: Environment, tol: float = 1e-6) -> SafetyAudit:
    """Exact scan of the recorded barrier values."""
    if traj.min_barrier.size == 0:
        return SafetyAudit(np.inf, 0.0, 0)
    i = int(np.argmin(traj.min_barrier))
    violations = int(np.sum(traj.min_barrier < -tol))
    return SafetyAudit(float(traj.min_barrier[i]), float(traj.times[i]), violations)
