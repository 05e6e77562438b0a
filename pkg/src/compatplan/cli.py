"""Command-line entry point: plan runs, sweeps, and certificate audits."""

from __future__ import annotations

import argparse
import json
import sys

from .bench import ExperimentSpec, audit_certificates, run_experiment, run_sweep
from .geometry import EnvironmentFormatError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compatplan",
                                     description="Certificate-gated motion planning bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run one planner configuration over seeds")
    p.add_argument("--env", required=True, help="bundled name or JSON path")
    p.add_argument("--system", default="single_integrator:2")
    p.add_argument("--planner", default="c_clf_cbf_rrt",
                   choices=["c_clf_cbf_rrt", "geom_rrt", "cbf_rrt"])
    p.add_argument("--eta", type=float, default=2.0)
    p.add_argument("--alpha0", type=float, default=None)
    p.add_argument("--tau", type=int, default=5)
    p.add_argument("--k", type=int, default=10_000, help="max iterations")
    p.add_argument("--seed", type=int, action="append", default=None,
                   help="repeatable; defaults to a single seed 0")
    p.add_argument("--out", default="runs")
    p.add_argument("--start", default=None, help="comma-separated coordinates")
    p.add_argument("--goal", default=None, help="comma-separated coordinates")
    p.add_argument("--goal-radius", type=float, default=None)
    p.add_argument("--starts", type=int, default=32, help="QCQP multi-start count")
    p.add_argument("--no-exec", action="store_true")
    p.add_argument("--no-render", action="store_true")

    s = sub.add_parser("sweep", help="run a sweep described by a JSON spec file")
    s.add_argument("--spec", required=True)

    a = sub.add_parser("audit", help="re-verify certificates in a run directory")
    a.add_argument("--dir", required=True)
    a.add_argument("--env", required=True)
    a.add_argument("--system", default="single_integrator:2")
    a.add_argument("--alpha0", type=float, default=None)
    a.add_argument("--no-oracle", action="store_true")
    return parser


def _coords(text):
    return tuple(float(v) for v in text.split(",")) if text else None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plan":
            spec = ExperimentSpec(
                environment=args.env, system=args.system, planner=args.planner,
                seeds=tuple(args.seed) if args.seed else (0,), out=args.out,
                start=_coords(args.start), goal=_coords(args.goal),
                goal_radius=args.goal_radius, eta=args.eta, alpha0=args.alpha0,
                tau=args.tau, iterations=args.k, starts=args.starts,
                execute=not args.no_exec, render=not args.no_render)
            records = run_experiment(spec)
            found = sum(1 for r in records if r["plan_found"])
            reached = sum(1 for r in records if r["exec_outcome"] == "reached")
            print(f"{len(records)} runs: {found} plans found, {reached} rollouts reached; "
                  f"summary in {spec.out}/summary.csv")
        elif args.command == "sweep":
            with open(args.spec) as fh:
                doc = json.load(fh)
            records = run_sweep(doc)
            print(f"{len(records)} runs complete; summary in {doc.get('out', 'runs')}/summary.csv")
        else:
            report = audit_certificates(args.dir, args.env, args.system,
                                        args.alpha0, oracle=not args.no_oracle)
            print(f"audited {report.certificates} certificates over {report.edges} edges; "
                  f"{len(report.mismatches)} mismatches, "
                  f"{len(report.oracle_failures)} oracle failures "
                  f"({report.oracle_checked} oracle checks)")
            if not report.clean:
                for item in report.mismatches + report.oracle_failures:
                    print(json.dumps(item, default=str))
                return 1
    except (EnvironmentFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
