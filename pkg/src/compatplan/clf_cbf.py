"""Lyapunov candidates, decrease rates, barrier derivative chains, and the
pointwise min-norm controller."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import System, lie_derivatives
from .geometry import CircularObstacle, PolytopicObstacle, active_set, barrier_components
from .optimizer import QuadForm, least_distance


@dataclass(frozen=True)
class QuadraticClf:
    """V(x) = (x-q)^T P (x-q) with P positive definite."""

    P: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        P = 0.5 * (P + P.T)
        np.linalg.cholesky(P)  # raises if not positive definite
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return self.q.size

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.q
        return float(d @ self.P @ d)

    def grad(self, x) -> np.ndarray:
        return 2.0 * (self.P @ (np.asarray(x, dtype=float) - self.q))

    @staticmethod
    def identity(q) -> "QuadraticClf":
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return QuadraticClf(np.eye(q.size), q)


def double_integrator_clf(x_f) -> QuadraticClf:
    """V(x, v) = ||x-x_f||^2 + ||v||^2 + (x-x_f)^T v as a quadratic form.

    Positive definite: the Gram matrix [[1, 1/2], [1/2, 1]] (x) I has
    eigenvalues 1/2 and 3/2.
    """
    x_f = np.atleast_1d(np.asarray(x_f, dtype=float))
    k = x_f.size
    P = np.block([[np.eye(k), 0.5 * np.eye(k)],
                  [0.5 * np.eye(k), np.eye(k)]])
    return QuadraticClf(P, np.concatenate([x_f, np.zeros(k)]))


@dataclass(frozen=True)
class DecreaseRate:
    """W(x) = sigma * (x-q)^T Q (x-q); sigma is the planner's relaxation knob."""

    Q: np.ndarray
    q: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        Q = 0.5 * (Q + Q.T)
        np.linalg.cholesky(Q)
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "sigma", float(self.sigma))

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.q
        return float(self.sigma * (d @ self.Q @ d))

    def scaled(self, factor: float) -> "DecreaseRate":
        return DecreaseRate(self.Q, self.q, self.sigma * factor)

    @staticmethod
    def from_clf(clf: QuadraticClf, sigma: float = 1.0) -> "DecreaseRate":
        return DecreaseRate(clf.P, clf.q, sigma)


def clf_row(clf: QuadraticClf, rate: DecreaseRate, system: System, x):
    """Coefficients (L_f V, L_g V, W(x)) of the decrease inequality at x."""
    lf, lg = lie_derivatives(system, clf.grad(x), x)
    return lf, lg, rate.value(x)


@dataclass(frozen=True)
class BarrierRow:
    """One inequality  lf + lg . u + alpha_term >= 0."""

    lf: float
    lg: np.ndarray
    alpha_term: float


def barrier_rows(obstacle, alpha0: float, system: System, x,
                 tol: float = 1e-9) -> list[BarrierRow]:
    """Rows for the active components of a relative-degree-one obstacle."""
    point = np.asarray(x, dtype=float)
    comps = barrier_components(obstacle, point)
    rows = []
    for i in active_set(obstacle, point, tol):
        if isinstance(obstacle, CircularObstacle):
            grad = 2.0 * (point - obstacle.center)
        else:
            grad = obstacle.A[i]
        lf, lg = lie_derivatives(system, grad, point)
        rows.append(BarrierRow(lf, lg, alpha0 * float(comps[i])))
    return rows


@dataclass(frozen=True)
class ControlResult:
    u: np.ndarray | None
    feasible: bool
    farkas: np.ndarray | None = None

    def __bool__(self) -> bool:
        return self.feasible


def min_norm_control(system: System, x, clf: QuadraticClf, rate: DecreaseRate,
                     rows: list[BarrierRow] | tuple = ()) -> ControlResult:
    """Minimum-norm input satisfying the decrease row and every barrier row.

    Solved as a least-distance problem over the stacked inequalities; an
    inconsistent system yields Infeasible with its Farkas multipliers (row
    order: decrease row first, then barrier rows).
    """
    lf_v, lg_v, w = clf_row(clf, rate, system, x)
    C = [-lg_v]
    d = [lf_v + w]
    for row in rows:
        C.append(row.lg)
        d.append(-row.lf - row.alpha_term)
    C = np.array(C, dtype=float)
    d = np.array(d, dtype=float)
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(d))):
        raise ValueError("non-finite controller rows")
    res = least_distance(C, d)
    if not res.feasible:
        return ControlResult(None, False, res.farkas)
    return ControlResult(res.u, True)


@dataclass(frozen=True)
class BarrierChain:
    """Successive barrier derivatives phi_0 = h, phi_i = L_f phi_{i-1} + gain_i phi_{i-1}.

    Valid for linear-family dynamics and quadratic barriers, which keeps every
    phi_i a quadratic form.  gains holds the chain gains (length m-1) and
    terminal_gain the one used in the final inequality.
    """

    system: System
    phis: tuple[QuadForm, ...]
    gains: tuple[float, ...]
    terminal_gain: float

    @property
    def degree(self) -> int:
        return len(self.phis)

    def admissible(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return all(phi.value(x) >= -1e-12 for phi in self.phis)

    def terminal_row(self, x) -> BarrierRow:
        x = np.asarray(x, dtype=float)
        last = self.phis[-1]
        lf, lg = lie_derivatives(self.system, last.grad(x), x)
        return BarrierRow(lf, lg, self.terminal_gain * last.value(x))


def lie_along(system: System, form: QuadForm) -> QuadForm:
    """L_f of a quadratic form along linear drift f(x) = A x."""
    if not system.is_linear:
        raise ValueError("derivative chains need linear-family dynamics")
    A = system.A
    M = form.A @ A
    return QuadForm(M + M.T, A.T @ form.b, 0.0)


def obstacle_quadform(obstacle, n: int, face: int | None = None) -> QuadForm:
    """A barrier component as a quadratic form on the first `dim` coordinates of R^n."""
    if isinstance(obstacle, CircularObstacle):
        k = obstacle.dim
        M = np.zeros((n, n))
        M[:k, :k] = np.eye(k)
        b = np.zeros(n)
        b[:k] = -2.0 * obstacle.center
        c = float(obstacle.center @ obstacle.center - obstacle.r_eff ** 2)
        return QuadForm(M, b, c)
    if face is None:
        raise ValueError("polytopic obstacles need a face index")
    b = np.zeros(n)
    b[: obstacle.dim] = obstacle.A[face]
    return QuadForm(np.zeros((n, n)), b, float(obstacle.b[face]))


def build_chain(system: System, obstacle, gains, face: int | None = None) -> BarrierChain:
    """Derivative chain for a barrier of relative degree len(gains) under `system`.

    gains = (gain_1, ..., gain_{m-1}, terminal); for m = 1 pass a single gain.
    """
    gains = tuple(float(g) for g in gains)
    if not gains:
        raise ValueError("at least a terminal gain is required")
    base = obstacle_quadform(obstacle, system.n, face)
    phis = [base]
    for g in gains[:-1]:
        prev = phis[-1]
        lf = lie_along(system, prev)
        phis.append(QuadForm(lf.A + g * prev.A, lf.b + g * prev.b, lf.c + g * prev.c))
    chain = BarrierChain(system, tuple(phis), gains[:-1], gains[-1])
    _check_relative_degree(chain)
    return chain


def _check_relative_degree(chain: BarrierChain):
    system = chain.system
    B = system.B
    for i, phi in enumerate(chain.phis[:-1]):
        # L_g phi_i = (2 A_i x + b_i)^T B must vanish identically.
        if np.abs(phi.A @ B).max(initial=0.0) > 1e-12 or np.abs(phi.b @ B).max(initial=0.0) > 1e-12:
            raise ValueError(f"input appears at chain level {i}; relative degree too low")
    last = chain.phis[-1]
    if np.abs(last.A @ B).max(initial=0.0) <= 1e-12 and np.abs(last.b @ B).max(initial=0.0) <= 1e-12:
        raise ValueError("input never appears; relative degree too high")


def hocbf_terminal_row(chain: BarrierChain, x) -> BarrierRow:
    """Terminal inequality coefficients at x; x must satisfy every phi_i >= 0."""
    if not chain.admissible(x):
        raise ValueError("state outside the chain's admissible intersection")
    return chain.terminal_row(x)
