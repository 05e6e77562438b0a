"""Independent brute-force verification of compatibility claims.

Samples the sublevel set on a uniform grid and decides pointwise feasibility
of the controller rows with the exact active-set test; shares nothing with the
local QCQP machinery, so agreement between the two is meaningful evidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clf_cbf import DecreaseRate, QuadraticClf, build_chain
from .dynamics import System
from .geometry import CircularObstacle, Environment, PolytopicObstacle, ellipsoid_bbox
from .optimizer import point_feasibility

ACTIVE_TIE_TOL = 1e-9


@dataclass(frozen=True)
class OracleResult:
    ok: bool
    failing_point: np.ndarray | None
    checked: int

    def __bool__(self) -> bool:
        return self.ok


def grid_compat_oracle(env: Environment, system: System, clf: QuadraticClf,
                       rate: DecreaseRate, level: float, alphas,
                       resolution: float) -> OracleResult:
    """True iff the controller rows are feasible at every grid point of
    {V <= level} intersected with the free space (and, for derivative chains,
    with the admissible intersection).

    alphas holds one gain per obstacle; for the double integrator each entry
    may be a (chain gain, terminal gain) pair.  State dimension is capped at 3
    and grids below 100 interior samples are rejected as too coarse.
    """
    n = system.n
    if n > 3:
        raise ValueError("grid oracle is limited to state dimension <= 3")
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    alphas = list(alphas)
    if len(alphas) != len(env.obstacles):
        raise ValueError("one gain (or gain pair) per obstacle required")

    box = ellipsoid_bbox(clf.P, clf.q, level)
    k = env.dim
    lo = box.lo.copy()
    hi = box.hi.copy()
    lo[:k] = np.maximum(lo[:k], env.bounds.lo)
    hi[:k] = np.minimum(hi[:k], env.bounds.hi)
    if np.any(hi < lo):
        return OracleResult(True, None, 0)

    axes = [np.arange(lo[j], hi[j] + 0.5 * resolution, resolution) for j in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)

    diff = pts - clf.q
    mask = np.einsum("ij,jk,ik->i", diff, clf.P, diff) <= level

    double_int = system.kind == "double_integrator"
    work = pts[:, :k]
    comps_all = []
    for obs in env.obstacles:
        if isinstance(obs, CircularObstacle):
            d = work - obs.center
            comps = (np.einsum("ij,ij->i", d, d) - obs.r_eff ** 2)[:, None]
        else:
            comps = work @ obs.A.T + obs.b
        comps_all.append(comps)
        mask &= comps.max(axis=1) >= 0.0

    chains = []
    if double_int:
        for obs, a in zip(env.obstacles, alphas):
            if not isinstance(obs, CircularObstacle):
                raise ValueError("double-integrator oracle supports circular obstacles")
            a1, a2 = (a if np.ndim(a) else (a, a))
            chain = build_chain(system, obs, (float(a1), float(a2)))
            chains.append(chain)
            for phi in chain.phis[1:]:
                mask &= phi.value_batch(pts) >= 0.0

    idx = np.flatnonzero(mask)
    if idx.size < 100:
        raise ValueError(f"only {idx.size} interior samples; grid too coarse")

    # CLF row coefficients, vectorized over the grid.
    gradV = 2.0 * diff @ clf.P
    if system.is_linear:
        fx = pts @ system.A.T
    else:
        raise ValueError("oracle requires linear-family dynamics")
    lfV = np.einsum("ij,ij->i", gradV, fx)
    lgV = gradV @ system.B
    dW = pts - rate.q
    W = rate.sigma * np.einsum("ij,jk,ik->i", dW, rate.Q, dW)

    checked = 0
    for i in idx:
        C = [-lgV[i]]
        d = [lfV[i] + W[i]]
        point = work[i]
        for o, obs in enumerate(env.obstacles):
            if double_int:
                chain = chains[o]
                row = chain.terminal_row(pts[i])
                C.append(row.lg)
                d.append(-row.lf - row.alpha_term)
                continue
            comps = comps_all[o][i]
            act = np.flatnonzero(comps >= comps.max() - ACTIVE_TIE_TOL)
            for j in act:
                if isinstance(obs, CircularObstacle):
                    grad = 2.0 * (point - obs.center)
                else:
                    grad = obs.A[j]
                lf = float(grad @ fx[i][:k])
                lg = grad @ system.B[:k]
                d.append(-lf - float(alphas[o]) * float(comps[j]))
                C.append(lg)
        checked += 1
        if not point_feasibility(np.array(C), np.array(d)).feasible:
            return OracleResult(False, pts[i].copy(), checked)
    return OracleResult(True, None, checked)
