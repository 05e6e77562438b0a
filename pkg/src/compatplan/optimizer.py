"""Small dense optimization engines.

Three layers, all deterministic:

* an active-set nonnegative least squares routine (least-index anti-cycling),
* a least-distance solver for ``min ||u||^2 s.t. C u >= d`` built on it, which
  doubles as an exact linear feasibility test with Farkas certificates,
* a multi-start projected augmented-Lagrangian solver for small quadratically
  constrained quadratic programs (QCQPs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-10


@dataclass(frozen=True)
class QuadForm:
    """Quadratic function z^T A z + b^T z + c with A symmetric."""

    A: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "A", 0.5 * (A + A.T))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return float(z @ self.A @ z + self.b @ z + self.c)

    def value_batch(self, Z):
        return np.einsum("ij,jk,ik->i", Z, self.A, Z) + Z @ self.b + self.c

    def grad(self, z):
        return 2.0 * (self.A @ z) + self.b

    def grad_batch(self, Z):
        return 2.0 * (Z @ self.A) + self.b

    def coeff_scale(self) -> float:
        return max(np.abs(self.A).max(initial=0.0), np.abs(self.b).max(initial=0.0), abs(self.c))

    @staticmethod
    def linear(b, c=0.0) -> "QuadForm":
        b = np.asarray(b, dtype=float)
        return QuadForm(np.zeros((b.size, b.size)), b, c)

    @staticmethod
    def zero(dim: int) -> "QuadForm":
        return QuadForm(np.zeros((dim, dim)), np.zeros(dim), 0.0)


def nnls(E, f, max_iter=None):
    """Solve min_{lam >= 0} ||E lam - f||^2 with an active-set sweep.

    Least-index selection of entering/leaving variables (Bland-style) avoids
    cycling; the pivot tolerance guards rank-deficient columns.  Returns
    (lam, residual) with residual = f - E lam.
    """
    E = np.asarray(E, dtype=float)
    f = np.asarray(f, dtype=float)
    m, r = E.shape
    if max_iter is None:
        max_iter = 50 * (r + 1)
    lam = np.zeros(r)
    passive = np.zeros(r, dtype=bool)
    scale = max(1.0, np.abs(E).max(initial=0.0)) * max(1.0, np.abs(f).max(initial=0.0))
    tol = PIVOT_TOL * scale

    for _ in range(max_iter):
        w = E.T @ (f - E @ lam)
        candidates = np.flatnonzero(~passive & (w > tol))
        if candidates.size == 0:
            break
        passive[int(candidates[0])] = True

        # Inner loop: restore nonnegativity on the passive set.
        for _ in range(max_iter):
            idx = np.flatnonzero(passive)
            s = np.zeros(r)
            sol, *_ = np.linalg.lstsq(E[:, idx], f, rcond=None)
            s[idx] = sol
            if s[idx].min(initial=1.0) > tol:
                lam = s
                break
            blocking = idx[s[idx] <= tol]
            ratios = lam[blocking] / (lam[blocking] - s[blocking])
            alpha = np.min(ratios)
            lam = lam + alpha * (s - lam)
            lam[blocking[ratios <= alpha + PIVOT_TOL]] = 0.0
            passive &= lam > tol
        else:  # pragma: no cover - inner loop exhausted
            break

    return lam, f - E @ lam


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    u: np.ndarray | None = None
    farkas: np.ndarray | None = None


def least_distance(C, d):
    """Minimum-norm u with C u >= d, or a Farkas infeasibility certificate.

    Reduction to nonnegative least squares: stack E = [C^T; d^T], f = e_last.
    Zero NNLS residual means the rows are inconsistent and the multipliers
    lam >= 0 satisfy C^T lam = 0, d^T lam = 1 (the certificate); otherwise the
    residual encodes the unique minimum-norm point.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if C.size == 0 or C.shape[0] == 0:
        return FeasibilityResult(True, np.zeros(C.shape[1] if C.ndim == 2 else 0))
    m = C.shape[1]

    # Rows with an exactly zero gradient constrain nothing or everything;
    # tiny-but-nonzero rows stay in the reduction (they are meaningful near a
    # CLF target, where both sides of the decrease row vanish together).
    norms = np.linalg.norm(C, axis=1)
    degenerate = norms == 0.0
    if degenerate.any():
        bad = np.flatnonzero(degenerate & (d > 0.0))
        if bad.size:
            farkas = np.zeros(C.shape[0])
            farkas[bad[0]] = 1.0 / d[bad[0]]
            return FeasibilityResult(False, farkas=farkas)
        keep = ~degenerate
        inner = least_distance(C[keep], d[keep])
        if inner.feasible:
            return inner
        farkas = np.zeros(C.shape[0])
        farkas[keep] = inner.farkas
        return FeasibilityResult(False, farkas=farkas)

    # Normalize rows so the residual test is scale-free.
    row_scale = np.maximum(norms, np.abs(d))
    Cn = C / row_scale[:, None]
    dn = d / row_scale

    E = np.vstack([Cn.T, dn[None, :]])
    f = np.zeros(m + 1)
    f[m] = 1.0
    lam, resid = nnls(E, f)
    if np.linalg.norm(resid) <= 1e-9:
        return FeasibilityResult(False, farkas=lam / row_scale)
    if resid[m] == 0.0:  # dual-degenerate corner; conservative answer
        return FeasibilityResult(False, farkas=None)
    u = -resid[:m] / resid[m]
    return FeasibilityResult(True, u=u)


def point_feasibility(C, d):
    """Decide whether {u : C u >= d} is nonempty.

    Exact (active-set) decision; feasible instances return a witness, the
    minimum-norm point, while infeasible ones return nonnegative multipliers
    lam with lam^T C = 0 and lam^T d > 0.
    """
    return least_distance(C, d)


@dataclass(frozen=True)
class SolverParams:
    """Augmented-Lagrangian knobs; defaults sized for desk-scale problems."""

    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    outer_iters: int = 20
    inner_steps: int = 500
    grad_tol: float = 1e-9
    feas_tol: float = 1e-8


@dataclass(frozen=True)
class QcqpProblem:
    """min objective(z) subject to constraints g_j(z) <= 0 and z in a box.

    The box both bounds the variables (projection target) and seeds the
    multi-start pattern, so it must enclose every candidate minimizer.
    Builders may supply problem-specific warm points via extra_starts (for
    example points on a constraint manifold); they are consumed first.
    """

    objective: QuadForm
    constraints: tuple[QuadForm, ...]
    lo: np.ndarray
    hi: np.ndarray
    extra_starts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "extra_starts",
                           tuple(np.asarray(s, dtype=float) for s in self.extra_starts))
        if self.lo.shape != self.hi.shape or self.lo.shape[0] != self.objective.dim:
            raise ValueError("box does not match variable dimension")
        if np.any(self.hi < self.lo):
            raise ValueError("empty box")
        d = self.objective.dim
        J = len(self.constraints)
        As = np.stack([g.A for g in self.constraints]) if J else np.zeros((0, d, d))
        bs = np.stack([g.b for g in self.constraints]) if J else np.zeros((0, d))
        cs = np.array([g.c for g in self.constraints]) if J else np.zeros(0)
        object.__setattr__(self, "_As", As)
        object.__setattr__(self, "_bs", bs)
        object.__setattr__(self, "_cs", cs)
        # objective fused in as row 0 (single tensor evaluation per AL call)
        object.__setattr__(self, "_Fa", np.concatenate([self.objective.A[None], As]))
        object.__setattr__(self, "_Fb", np.vstack([self.objective.b[None], bs]))
        object.__setattr__(self, "_Fc", np.concatenate([[self.objective.c], cs]))

    def fused_values(self, Z):
        """(objective values, constraint values) in one pass."""
        ZA = np.tensordot(Z, self._Fa, axes=([1], [1]))
        vals = (ZA * Z[:, None, :]).sum(axis=2) + Z @ self._Fb.T + self._Fc
        return vals[:, 0], vals[:, 1:], ZA

    def fused_grads(self, ZA):
        grads = 2.0 * ZA + self._Fb
        return grads[:, 0, :], grads[:, 1:, :]

    def _za(self, Z):
        # (S, J, d) tensor Z A_j, shared by values and gradients
        return np.tensordot(Z, self._As, axes=([1], [1]))

    def constraint_values(self, Z, ZA=None):
        """All g_j at all rows of Z, shape (S, J)."""
        if not self.constraints:
            return np.zeros((Z.shape[0], 0))
        if ZA is None:
            ZA = self._za(Z)
        return (ZA * Z[:, None, :]).sum(axis=2) + Z @ self._bs.T + self._cs

    def constraint_grads(self, Z, ZA=None):
        """All grad g_j at all rows of Z, shape (S, J, d)."""
        if not self.constraints:
            return np.zeros((Z.shape[0], 0, self.dim))
        if ZA is None:
            ZA = self._za(Z)
        return 2.0 * ZA + self._bs

    @property
    def dim(self) -> int:
        return self.objective.dim

    def coeff_scale(self) -> float:
        s = self.objective.coeff_scale()
        for g in self.constraints:
            s = max(s, g.coeff_scale())
        return s

    def violation(self, z) -> float:
        if not self.constraints:
            return 0.0
        return max(max(0.0, g.value(z)) for g in self.constraints)


@dataclass(frozen=True)
class SolveReport:
    status: str  # "ok" | "infeasible" | "max_iterations"
    best_value: float
    best_point: np.ndarray | None
    starts: int
    converged: int
    spread: float

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


def zeta_tolerance(problem: QcqpProblem) -> float:
    """Threshold below which an optimal value is treated as zero."""
    return 1e-8 * (1.0 + problem.coeff_scale())


def _latin_hypercube(rng, lo, hi, count):
    dim = lo.size
    pts = np.empty((count, dim))
    for j in range(dim):
        strata = (np.arange(count) + rng.random(count)) / count
        pts[:, j] = lo[j] + rng.permutation(strata) * (hi[j] - lo[j])
    return pts


_HALTON_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def halton(count, dim, skip=20):
    """First `count` points of the Halton sequence in [0,1)^dim."""
    if dim > len(_HALTON_PRIMES):
        raise ValueError("halton supports up to %d dimensions" % len(_HALTON_PRIMES))
    out = np.empty((count, dim))
    idx = np.arange(1 + skip, count + 1 + skip, dtype=np.int64)
    for j in range(dim):
        base = _HALTON_PRIMES[j]
        k = idx.copy()
        f = 1.0
        r = np.zeros(count)
        while k.max() > 0:
            f /= base
            r += f * (k % base)
            k //= base
        out[:, j] = r
    return out


def _boundary_starts(problem: QcqpProblem, probes, budget):
    """Bisect from the box center toward probe points for sign changes of each g_j."""
    if budget <= 0 or not problem.constraints:
        return np.empty((0, problem.dim))
    center = 0.5 * (problem.lo + problem.hi)
    out = []
    for g in problem.constraints:
        gc = g.value(center)
        found = 0
        for p in probes:
            if found >= 2 or len(out) >= budget:
                break
            gp = g.value(p)
            if gc == 0.0:
                out.append(center.copy())
                found += 1
                continue
            if np.sign(gp) == np.sign(gc) or gp == 0.0:
                continue
            a, b = center.copy(), p.copy()
            fa = gc
            for _ in range(40):
                mid = 0.5 * (a + b)
                fm = g.value(mid)
                if fm == 0.0:
                    break
                if np.sign(fm) == np.sign(fa):
                    a, fa = mid, fm
                else:
                    b = mid
            out.append(0.5 * (a + b))
            found += 1
        if len(out) >= budget:
            break
    return np.array(out) if out else np.empty((0, problem.dim))


def _al_value(problem, Z, Mu, rho):
    """Augmented-Lagrangian value only (cheap path for line searches)."""
    if not problem.constraints:
        return problem.objective.value_batch(Z)
    v, gv, _ = problem.fused_values(Z)
    t = np.maximum(0.0, Mu + rho[:, None] * gv)
    return v + ((t * t - Mu * Mu) / (2.0 * rho[:, None])).sum(axis=1)


def _al_value_grad(problem, Z, Mu, rho):
    """Augmented-Lagrangian value and gradient, batched over rows of Z."""
    if not problem.constraints:
        return problem.objective.value_batch(Z), problem.objective.grad_batch(Z)
    v, gv, ZA = problem.fused_values(Z)
    t = np.maximum(0.0, Mu + rho[:, None] * gv)
    v = v + ((t * t - Mu * Mu) / (2.0 * rho[:, None])).sum(axis=1)
    g_obj, g_cons = problem.fused_grads(ZA)
    gr = g_obj + (t[:, :, None] * g_cons).sum(axis=1)
    return v, gr


def _al_hessian(problem, Z, Mu, rho):
    """Batched Hessian of the augmented Lagrangian (exact for quadratic forms)."""
    S, d = Z.shape
    H = np.repeat((2.0 * problem.objective.A)[None, :, :], S, axis=0)
    if problem.constraints:
        ZA = problem._za(Z)
        gv = problem.constraint_values(Z, ZA)
        t = np.maximum(0.0, Mu + rho[:, None] * gv)
        grads = problem.constraint_grads(Z, ZA)
        w = (t > 0.0) * rho[:, None]
        H += np.matmul(grads.transpose(0, 2, 1), grads * w[:, :, None])
        H += 2.0 * np.tensordot(t, problem._As, axes=([1], [0]))
    return H


def _project(Z, lo, hi):
    return np.clip(Z, lo, hi)


DEFAULT_STARTS_SMALL = 32   # variable dimension <= 4
DEFAULT_STARTS_LARGE = 128


def default_starts(dim: int) -> int:
    return DEFAULT_STARTS_SMALL if dim <= 4 else DEFAULT_STARTS_LARGE


def solve_qcqp(problem: QcqpProblem, starts: int | None = None, seed: int = 0,
               params: SolverParams | None = None) -> SolveReport:
    """Multi-start local QCQP solve; deterministic for a fixed seed.

    Starts are any builder-supplied warm points, then a Latin hypercube over
    the box plus a few constraint-boundary points; every start runs a
    projected augmented-Lagrangian descent.  All starts advance together as
    one batched array computation, and the winner is the feasible local
    minimum with the lowest value (lexicographic point order breaks ties), so
    concurrency of starts never changes the answer.
    """
    if params is None:
        params = SolverParams()
    if starts is None:
        starts = default_starts(problem.dim)
    if starts < 1:
        raise ValueError("starts must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = problem.lo, problem.hi
    span = hi - lo
    scale = 1.0 + problem.coeff_scale()
    feas_tol = params.feas_tol * scale

    # Start sequence is nested: requesting more starts appends points without
    # disturbing earlier ones, and every start evolves independently of the
    # batch, so the best value is non-increasing in `starts`.
    lhs_block = _latin_hypercube(rng, lo, hi, 16)
    boundary = _boundary_starts(problem, lhs_block, 2 * len(problem.constraints))
    seq = []
    if problem.extra_starts:
        seq.append(np.vstack(problem.extra_starts))
    seq.append(lhs_block)
    if len(boundary):
        seq.append(boundary)
    have = sum(len(s) for s in seq)
    stream = []
    while have + len(stream) < starts:
        stream.append(lo + rng.random(problem.dim) * span)
    if stream:
        seq.append(np.array(stream))
    Z = _project(np.vstack(seq)[:starts], lo, hi).copy()

    S = Z.shape[0]
    J = len(problem.constraints)
    Mu = np.zeros((S, J))
    rho = np.full(S, params.penalty_init)
    prev_viol = np.full(S, np.inf)
    prev_val = np.full(S, np.inf)
    inner_used = np.zeros(S, dtype=int)
    done = np.zeros(S, dtype=bool)       # start finished (converged or hopeless)
    converged = np.zeros(S, dtype=bool)  # finished via the convergence test

    damp = 1e-9 * scale
    eye_d = damp * np.eye(problem.dim)
    for _ in range(params.outer_iters):
        if done.all():
            break
        # Inner descent on the not-yet-done subset: damped Newton with
        # projected backtracking, steepest-descent fallback.
        live = np.flatnonzero(~done)
        Zl = Z[live]
        Mul = Mu[live]
        rhol = rho[live]
        v, gr = _al_value_grad(problem, Zl, Mul, rhol)
        frozen = np.zeros(live.size, dtype=bool)
        # Inexact inner solves: loose gradient targets while the constraint
        # violation is large, tightening to grad_tol as it shrinks.
        inner_tol = np.maximum(params.grad_tol,
                               np.minimum(1e-3, 0.03 * prev_viol[live])) * scale
        pg_ref = np.full(live.size, np.inf)
        for it_inner in range(params.inner_steps):
            pg = Zl - _project(Zl - gr, lo, hi)
            pg_norm = np.linalg.norm(pg, axis=1)
            if it_inner % 25 == 0:
                # Plateaued starts gain more from the next multiplier update
                # than from further descent on the current subproblem.
                frozen |= pg_norm > 0.9 * pg_ref
                pg_ref = pg_norm.copy()
            active = ~frozen & (pg_norm > inner_tol)
            if not active.any():
                break
            a = np.flatnonzero(active)
            H = _al_hessian(problem, Zl[a], Mul[a], rhol[a]) + eye_d
            try:
                p = -np.linalg.solve(H, gr[a][:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                p = -gr[a]
            slope = np.einsum("ij,ij->i", gr[a], p)
            bad = slope >= 0.0
            if bad.any():
                # Indefinite curvature: retry with a Gershgorin shift that
                # makes the model diagonally dominant, far better than raw
                # steepest descent on stiff penalty valleys.
                shift = np.abs(H[bad]).sum(axis=2).max(axis=1)
                Hb = H[bad] + (shift[:, None, None] + damp) * np.eye(problem.dim)
                try:
                    p[bad] = -np.linalg.solve(Hb, gr[a][bad][:, :, None])[:, :, 0]
                except np.linalg.LinAlgError:
                    p[bad] = -gr[a][bad]
                slope[bad] = np.einsum("ij,ij->i", gr[a][bad], p[bad])
                still = bad.copy()
                still[bad] = slope[bad] >= 0.0
                if still.any():
                    p[still] = -gr[a][still]
                    slope[still] = -np.einsum("ij,ij->i", p[still], p[still])
            # Backtracking with all candidate step lengths evaluated in one
            # batched pass; a second sweep handles the rare deep-backtrack tail.
            improved = np.zeros(a.size, dtype=bool)
            v_before = v[a].copy()
            levels = 2.0 ** -np.arange(8)
            base_alpha = np.ones(a.size)
            for _ in range(5):
                t_idx = np.flatnonzero(~improved & (base_alpha > 1e-13))
                if t_idx.size == 0:
                    break
                rows = a[t_idx]
                alphas = base_alpha[t_idx, None] * levels[None, :]
                cand = Zl[rows][:, None, :] + alphas[:, :, None] * p[t_idx][:, None, :]
                T, L, d = cand.shape
                flat = _project(cand.reshape(T * L, d), lo, hi)
                vueval = _al_value(problem, flat,
                                   np.repeat(Mul[rows], L, axis=0),
                                   np.repeat(rhol[rows], L)).reshape(T, L)
                ok = vueval <= v[rows][:, None] + 1e-4 * alphas * slope[t_idx][:, None]
                first = np.where(ok.any(axis=1), ok.argmax(axis=1), -1)
                hit = first >= 0
                sel = rows[hit]
                Zl[sel] = flat.reshape(T, L, d)[hit, first[hit]]
                v[sel] = vueval[hit, first[hit]]
                improved[t_idx[hit]] = True
                base_alpha[t_idx[~hit]] *= levels[-1] * 0.5
            moved = a[improved]
            if moved.size:
                _, gr[moved] = _al_value_grad(problem, Zl[moved], Mul[moved], rhol[moved])
            # Starts that cannot make measurable progress sit at the numerical
            # floor (often the penalty kink); freeze them for this phase.
            frozen[a] |= ~improved | (v_before - v[a] <= 1e-13 * (np.abs(v_before) + 1.0))
            inner_used[live[a]] += 1
            frozen |= inner_used[live] >= 4 * params.inner_steps

        Z[live] = Zl
        if J == 0:
            pg_done = np.linalg.norm(Zl - _project(Zl - gr, lo, hi), axis=1)
            converged[live] = pg_done <= params.grad_tol * scale * 10
            done[:] = True
            break
        gvals = problem.constraint_values(Zl)
        viol = np.maximum(gvals, 0.0).max(axis=1)
        Mu[live] = np.maximum(0.0, Mul + rhol[:, None] * gvals)
        worse = viol > np.maximum(0.25 * prev_viol[live], feas_tol)
        rho[live[worse]] *= params.penalty_growth
        prev_viol[live] = viol
        pg_now = np.linalg.norm(Zl - _project(Zl - gr, lo, hi), axis=1)
        vals_now = problem.objective.value_batch(Zl)
        stagnant = (viol <= feas_tol) & (np.abs(vals_now - prev_val[live])
                                         <= 1e-12 * (1.0 + np.abs(vals_now)))
        prev_val[live] = vals_now
        newly = (viol <= feas_tol) & (pg_now <= params.grad_tol * scale * 10) | stagnant
        converged[live[newly]] = True
        done[live] |= newly | (rho[live] > 1e12) | (inner_used[live] >= 4 * params.inner_steps)

    if J:
        # Restore feasibility exactly so a reported minimum can never
        # undershoot the true one through constraint slack.  Starts cluster at
        # a few local minima; polish one representative per cluster (the
        # lowest index, so the result of a start never depends on later ones).
        keys = np.round(Z / 1e-9)
        seen: dict = {}
        for s in range(S):
            key = keys[s].tobytes()
            if key in seen:
                Z[s] = Z[seen[key]]
            else:
                Z[s] = _polish_feasibility(problem, Z[s], scale)
                seen[key] = s

    obj = problem.objective.value_batch(Z)
    viol = (np.maximum(problem.constraint_values(Z), 0.0).max(axis=1)
            if J else np.zeros(S))
    feasible = viol <= feas_tol

    if not feasible.any():
        # Dedicated feasibility phase: minimize the squared violation from the
        # least-violating start.
        zf = Z[int(np.argmin(viol))].copy()
        zf = _feasibility_phase(problem, zf, params, scale)
        if zf is not None and problem.violation(zf) <= feas_tol:
            Z = np.vstack([Z, zf[None, :]])
            obj = np.append(obj, problem.objective.value(zf))
            feasible = np.append(feasible, True)
            converged = np.append(converged, False)
        else:
            return SolveReport("infeasible", np.inf, None, S, 0, 0.0)

    vals = obj[feasible]
    pts = Z[feasible]
    order = np.lexsort(np.vstack([pts.T[::-1], vals]))
    best = order[0]
    conv_vals = vals[converged[feasible]]
    spread = float(conv_vals.max() - conv_vals.min()) if conv_vals.size else 0.0
    status = "ok" if converged[feasible][best] else "max_iterations"
    return SolveReport(status, float(vals[best]), pts[best].copy(), S, int(converged.sum()), spread)


def _polish_feasibility(problem, z, scale, iters: int = 8):
    """Drive constraint violations to machine level.

    Each pass takes the minimum-norm step satisfying every linearized row
    (so paired inequalities encoding equalities are corrected jointly).
    """
    best = z.copy()
    best_viol = np.inf
    z = z.copy()
    target = 1e-13 * scale
    span = np.linalg.norm(problem.hi - problem.lo)
    for _ in range(iters):
        row = z[None, :]
        gv = problem.constraint_values(row)[0]
        worst = float(gv.max())
        if worst < best_viol:
            best, best_viol = z.copy(), worst
        if worst <= target:
            break
        grads = problem.constraint_grads(row)[0]
        corr = least_distance(-grads, gv)
        if not corr.feasible or np.linalg.norm(corr.u) > span:
            break
        z = np.clip(z + corr.u, problem.lo, problem.hi)
    return best


def _feasibility_phase(problem, z0, params, scale):
    """Minimize sum of squared violations by projected gradient descent."""
    z = z0.copy()
    step = 1.0 / scale
    for _ in range(params.outer_iters * params.inner_steps // 10):
        val = 0.0
        grad = np.zeros_like(z)
        for g in problem.constraints:
            gv = max(0.0, g.value(z))
            val += gv * gv
            if gv > 0.0:
                grad += 2.0 * gv * g.grad(z)
        if val <= (params.feas_tol * scale) ** 2 * 0.01:
            return z
        gn = np.linalg.norm(grad)
        if gn <= params.grad_tol * scale:
            break
        znew = _project(z - step * grad, problem.lo, problem.hi)
        vnew = sum(max(0.0, g.value(znew)) ** 2 for g in problem.constraints)
        if vnew < val:
            z = znew
            step *= 1.3
        else:
            step *= 0.5
            if step < 1e-15:
                break
    return z if problem.violation(z) <= params.feas_tol * scale else None
