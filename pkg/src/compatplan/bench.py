"""Experiment harness: planner runs, sweeps, artifact emission, and audits."""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .clf_cbf import DecreaseRate
from .compatibility import (
    CheckParams,
    CompatCertificate,
    check_circle_closed_form,
    check_double_integrator_circular,
    check_linear_polytopic,
)
from .dynamics import System, parse_system, planning_system
from .geometry import CircularObstacle, Environment, load_environment
from .oracle import grid_compat_oracle
from .planner import GoalRegion, PathPlan, PlannerConfig, c_clf_cbf_rrt, cbf_rrt, find_clf, geom_rrt
from .simulator import ExecConfig, REACHED, execute_path, safety_audit
from .svg import render_run

PLANNERS = {"c_clf_cbf_rrt": c_clf_cbf_rrt, "geom_rrt": geom_rrt, "cbf_rrt": cbf_rrt}

BUNDLED_MISSIONS = {
    "env_obstacles": {"start": [2.0, 10.0], "goal": [48.0, 10.0], "radius": 1.5},
    "env_rooms": {"start": [3.0, 10.0], "goal": [47.0, 10.0], "radius": 1.5},
    "env_two_circles": {"start": [2.0, 10.0], "goal": [18.0, 10.0], "radius": 1.0},
}


def bundled_environment_path(name: str) -> Path:
    name = name.removesuffix(".json")
    ref = resources.files("compatplan").joinpath(f"environments/{name}.json")
    with resources.as_file(ref) as p:
        return Path(p)


def resolve_environment(env: str) -> tuple[Environment, str]:
    """Accepts a bundled name or a filesystem path."""
    name = Path(env).stem
    if name in BUNDLED_MISSIONS and not os.path.exists(env):
        return load_environment(bundled_environment_path(name)), name
    return load_environment(env), name


@dataclass(frozen=True)
class ExperimentSpec:
    environment: str
    system: str = "single_integrator:2"
    planner: str = "c_clf_cbf_rrt"
    seeds: tuple[int, ...] = tuple(range(20))
    out: str = "runs"
    start: tuple[float, ...] | None = None
    goal: tuple[float, ...] | None = None
    goal_radius: float | None = None
    eta: float = 2.0
    alpha0: float | None = None  # overrides every obstacle gain when set
    tau: int = 5
    iterations: int = 10_000
    sigma_factor: float = 0.5
    alpha_growth: float = 2.0
    starts: int = 32
    cbf_rrt_horizon: float = 15.0
    execute: bool = True
    render: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must be nonempty")
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner '{self.planner}'")

    def mission(self) -> dict:
        name = Path(self.environment).stem
        base = dict(BUNDLED_MISSIONS.get(name, {}))
        if self.start is not None:
            base["start"] = list(self.start)
        if self.goal is not None:
            base["goal"] = list(self.goal)
        if self.goal_radius is not None:
            base["radius"] = self.goal_radius
        if "start" not in base or "goal" not in base:
            raise ValueError("start/goal required for non-bundled environments")
        base.setdefault("radius", 1.0)
        return base

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentSpec":
        known = {f for f in ExperimentSpec.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        doc = dict(doc)
        if "seeds" in doc:
            doc["seeds"] = tuple(int(s) for s in doc["seeds"])
        for key in ("start", "goal"):
            if doc.get(key) is not None:
                doc[key] = tuple(float(v) for v in doc[key])
        return ExperimentSpec(**doc)


def apply_alpha_override(env: Environment, alpha0: float | None) -> Environment:
    if alpha0 is None:
        return env
    return Environment(env.bounds, env.obstacles, tuple(alpha0 for _ in env.obstacles))


def _run_tag(spec: ExperimentSpec, seed: int) -> str:
    return f"{spec.planner}_eta{spec.eta:g}_seed{seed}"


def run_single(spec: ExperimentSpec, seed: int) -> dict:
    """One (spec, seed) cell: plan, optionally execute and render."""
    env, _ = resolve_environment(spec.environment)
    env = apply_alpha_override(env, spec.alpha0)
    system = parse_system(spec.system)
    mission = spec.mission()
    goal = GoalRegion(np.array(mission["goal"], dtype=float), float(mission["radius"]))
    start = np.array(mission["start"], dtype=float)
    psys = planning_system(system)
    if psys.kind == "double_integrator":
        start = np.concatenate([start, np.zeros(psys.m)])
        goal = GoalRegion(np.concatenate([goal.center, np.zeros(psys.m)]), goal.radius)
    config = PlannerConfig(
        iterations=spec.iterations, eta=spec.eta, tau=spec.tau, goal=goal, seed=seed,
        sigma_factor=spec.sigma_factor, alpha_growth=spec.alpha_growth,
        check=CheckParams(starts=spec.starts, seed=seed),
        cbf_rrt_horizon=spec.cbf_rrt_horizon)

    result = PLANNERS[spec.planner](env, system, start, config)

    record = {
        "planner": spec.planner,
        "eta": spec.eta,
        "alpha0": spec.alpha0 if spec.alpha0 is not None else "env",
        "seed": seed,
        "plan_found": result.success,
        "iterations": result.iterations_used,
        "accepted_nodes": result.accepted,
        "solves": result.solves,
        "solves_per_node": result.solves / max(result.accepted, 1),
        "plan_time": result.wall_time,
        "waypoints": len(result.plan.waypoints) if result.success else 0,
        "exec_outcome": "",
        "min_barrier": "",
        "exec_time": "",
    }

    out_dir = Path(spec.out) / _run_tag(spec, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = None
    if result.success:
        (out_dir / "plan.json").write_text(json.dumps(result.plan.to_dict(), indent=1))
        if spec.execute:
            t0 = time.perf_counter()
            traj = execute_path(result.plan, system, env,
                                ExecConfig(barrier_radius=2.0 * spec.eta))
            record["exec_time"] = time.perf_counter() - t0
            audit = safety_audit(traj, env)
            record["exec_outcome"] = traj.outcome
            record["min_barrier"] = audit.min_barrier
            traj.to_csv(out_dir / "trajectory.csv")
    (out_dir / "result.json").write_text(json.dumps(
        {k: (v if not isinstance(v, float) or np.isfinite(v) else str(v))
         for k, v in record.items()}, indent=1, default=str))
    if spec.render:
        canvas = render_run(env, tree=result.tree, plan=result.plan,
                            rollout=(traj.states if traj is not None else None),
                            start=start, goal=GoalRegion(goal.center[:2], goal.radius))
        canvas.save(out_dir / "overlay.svg")
    return record


def _worker(args):
    spec_doc, seed = args
    return run_single(ExperimentSpec.from_dict(spec_doc), seed)


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """All seeds of one spec; deterministic aggregation sorted by seed."""
    workers = int(os.environ.get("PLANNER_THREADS", "0")) or (os.cpu_count() or 1)
    workers = min(workers, len(spec.seeds))
    spec_doc = _spec_to_dict(spec)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_worker, [(spec_doc, s) for s in spec.seeds]))
    else:
        records = [run_single(spec, s) for s in spec.seeds]
    records.sort(key=lambda r: r["seed"])
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_summary(out_dir / "summary.csv", records)
    return records


def _spec_to_dict(spec: ExperimentSpec) -> dict:
    doc = {}
    for name in ExperimentSpec.__dataclass_fields__:
        val = getattr(spec, name)
        if isinstance(val, tuple):
            val = list(val)
        doc[name] = val
    return doc


def _write_summary(path, records, append=False):
    mode = "a" if append and Path(path).exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()))
        if mode == "w":
            writer.writeheader()
        writer.writerows(records)


def run_sweep(doc: dict) -> list[dict]:
    """Cartesian sweep: doc holds an ExperimentSpec plus 'sweep': {field: [values]}."""
    sweep = doc.pop("sweep", {})
    base = dict(doc)
    grids = [[(k, v) for v in vals] for k, vals in sweep.items()]
    combos = [[]]
    for grid in grids:
        combos = [c + [kv] for c in combos for kv in grid]
    all_records = []
    for combo in combos:
        spec_doc = dict(base)
        spec_doc.update(dict(combo))
        spec = ExperimentSpec.from_dict(spec_doc)
        all_records.extend(run_experiment(spec))
    out = Path(base.get("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    _write_summary(out / "summary.csv", all_records)
    return all_records


def feasibility_percentage(records) -> float:
    done = [r for r in records if r["plan_found"]]
    if not done:
        return 0.0
    good = sum(1 for r in done if r["exec_outcome"] == REACHED)
    return 100.0 * good / len(done)


# -- certificate audit ----------------------------------------------------------

@dataclass
class AuditReport:
    edges: int = 0
    certificates: int = 0
    mismatches: list = field(default_factory=list)
    oracle_checked: int = 0
    oracle_failures: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.mismatches and not self.oracle_failures


def recompute_certificate(doc: dict, env: Environment, system: System,
                          target, obstacle_idx: int) -> CompatCertificate:
    """Re-run the check recorded in a certificate dict with its stored inputs."""
    psys = planning_system(system)
    obs = env.obstacles[obstacle_idx]
    level = float(doc["level"])
    sigma = float(doc["sigma"])
    method = doc["method"]
    clf, rate0 = find_clf(psys, np.asarray(target, dtype=float))
    rate = DecreaseRate(rate0.Q, rate0.q, sigma)
    starts = doc.get("starts")
    params = CheckParams(starts=int(starts) if starts is not None else None,
                         seed=int(doc.get("seed") or 0))
    if method == "circle_closed_form":
        return check_circle_closed_form(clf.q, float(np.sqrt(level)), obs,
                                        doc["alphas"][0], rate)
    if method == "linear_polytopic":
        return check_linear_polytopic(psys, clf, rate, obs, tuple(doc["pattern"]),
                                      doc["alphas"][0], level, params)
    if method == "double_integrator_circular":
        a1, a2 = doc["alphas"]
        return check_double_integrator_circular(clf.q[: psys.m], obs, a1, a2,
                                                rate, level, params)
    raise ValueError(f"unknown certificate method '{method}'")


def audit_certificates(run_dir, environment: str, system: str = "single_integrator:2",
                       alpha0: float | None = None, oracle: bool = True,
                       oracle_resolution_factor: float = 0.02) -> AuditReport:
    """Re-verify every stored edge certificate under a run directory.

    Closed-form certificates must reproduce bit-identically; solver-based ones
    must reproduce verdict and branch.  With `oracle`, each certified edge is
    re-validated by the grid oracle when the state dimension allows it.
    """
    env, _ = resolve_environment(environment)
    env = apply_alpha_override(env, alpha0)
    sysm = parse_system(system)
    psys = planning_system(sysm)
    report = AuditReport()
    plans = sorted(Path(run_dir).rglob("plan.json"))
    if not plans:
        raise FileNotFoundError(f"no plan.json artifacts under {run_dir}")
    for plan_path in plans:
        plan = PathPlan.from_dict(json.loads(plan_path.read_text()))
        for idx, spec in enumerate(plan.specs):
            report.edges += 1
            for entry in spec.certificates:
                report.certificates += 1
                doc = entry["certificate"]
                fresh = recompute_certificate(doc, env, sysm, spec.target, entry["obstacle"])
                mismatch = fresh.verdict != doc["verdict"] or fresh.branch != doc["branch"]
                if doc["method"] == "circle_closed_form" and not mismatch:
                    mismatch = fresh.to_dict() != doc
                if mismatch:
                    report.mismatches.append(
                        {"plan": str(plan_path), "obstacle": entry["obstacle"],
                         "stored": doc, "fresh": fresh.to_dict()})
            if oracle and psys.n <= 3:
                clf, rate0 = find_clf(psys, spec.target)
                level = clf.value(np.asarray(plan.waypoints[idx], dtype=float))
                if level <= 0.0:
                    continue
                rate = DecreaseRate(rate0.Q, rate0.q, spec.sigma)
                diam = 2.0 * np.sqrt(level / np.linalg.eigvalsh(clf.P).min())
                res = grid_compat_oracle(env, psys, clf, rate, level, list(spec.alphas),
                                         resolution=oracle_resolution_factor * diam)
                report.oracle_checked += 1
                if not res.ok:
                    report.oracle_failures.append(
                        {"plan": str(plan_path), "target": [float(v) for v in spec.target],
                         "failing_point": [float(v) for v in res.failing_point]})
    return report
