"""Obstacles, free space, active faces, and sublevel-set geometry.

Obstacles are open sets {x : max_i h_i(x) < 0}; the safe set keeps h >= 0.
Polytopic obstacles store one affine function per face (h_i = a_i^T x + b_i,
normalized so ||a_i|| = 1); circular obstacles store h = ||x-c||^2 - r_eff^2
with the robot-radius slack folded into the effective radius r_eff = r + r0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .optimizer import point_feasibility

TIE_TOL = 1e-9


class EnvironmentFormatError(ValueError):
    """Raised when an environment document violates the schema or invariants."""


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("invalid box bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def intersect(self, other: "Box") -> "Box":
        return Box(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def sample(self, rng) -> np.ndarray:
        return self.lo + rng.random(self.dim) * (self.hi - self.lo)


@dataclass(frozen=True)
class PolytopicObstacle:
    """Intersection of halfspaces a_i^T x + b_i < 0, faces normalized."""

    A: np.ndarray  # (N, n) rows a_i with ||a_i|| = 1
    b: np.ndarray  # (N,)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValueError("face count mismatch between A and b")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("zero face normal")
        A = A / norms[:, None]
        b = b / norms
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        n = A.shape[1]
        if A.shape[0] < n + 1:
            warnings.warn("polytopic obstacle with fewer than n+1 faces is unbounded",
                          stacklevel=2)
        for i in range(A.shape[0]):
            for j in range(i + 1, A.shape[0]):
                if np.linalg.norm(A[i] - A[j]) < 1e-12 and abs(b[i] - b[j]) < 1e-12:
                    raise ValueError(f"duplicate faces {i} and {j}")
        if interior_point(self) is None:
            raise ValueError("polytopic obstacle has empty interior")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    @staticmethod
    def rectangle(lo, hi) -> "PolytopicObstacle":
        """Axis-aligned box {lo < x < hi} as 2n faces."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.size
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([-hi, lo])
        return PolytopicObstacle(A, b)


@dataclass(frozen=True)
class CircularObstacle:
    center: np.ndarray
    radius: float
    inflation: float = 0.0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "inflation", float(self.inflation))
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if self.inflation < 0.0:
            raise ValueError("inflation must be nonnegative")

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def r_eff(self) -> float:
        return self.radius + self.inflation


Obstacle = PolytopicObstacle | CircularObstacle


def barrier_components(obstacle, x) -> np.ndarray:
    """Component values (h_1(x), ..., h_N(x)); a single entry for circles."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != obstacle.dim:
        raise ValueError(f"point dimension {x.shape[0]} != obstacle dimension {obstacle.dim}")
    if isinstance(obstacle, CircularObstacle):
        d = x - obstacle.center
        return np.array([d @ d - obstacle.r_eff ** 2])
    return obstacle.A @ x + obstacle.b


def barrier_value(obstacle, x) -> float:
    return float(np.max(barrier_components(obstacle, x)))


def active_set(obstacle, x, tol: float = TIE_TOL) -> tuple[int, ...]:
    """Indices of components within tol of the componentwise maximum."""
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    comps = barrier_components(obstacle, x)
    return tuple(np.flatnonzero(comps >= comps.max() - tol))


def interior_point(obstacle: PolytopicObstacle, margin: float = 1e-7):
    """A point with max_i h_i(x) < 0, or None if the interior is empty."""
    res = point_feasibility(-obstacle.A, obstacle.b + margin)
    return res.u if res.feasible else None


@dataclass(frozen=True)
class Environment:
    """Planning region plus obstacles, each with its linear class-K gain."""

    bounds: Box
    obstacles: tuple[Obstacle, ...]
    alphas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if len(self.obstacles) != len(self.alphas):
            raise ValueError("one alpha gain per obstacle required")
        if any(a <= 0.0 for a in self.alphas):
            raise ValueError("alpha gains must be positive")
        for obs in self.obstacles:
            if obs.dim != self.bounds.dim:
                raise ValueError("obstacle dimension does not match bounds")
        _check_disjoint_interiors(self.obstacles)

    @property
    def dim(self) -> int:
        return self.bounds.dim


def _check_disjoint_interiors(obstacles):
    for i in range(len(obstacles)):
        for j in range(i + 1, len(obstacles)):
            if _interiors_overlap(obstacles[i], obstacles[j]):
                raise ValueError(f"obstacles {i} and {j} have overlapping interiors")


def _interiors_overlap(oa, ob) -> bool:
    circle_a = isinstance(oa, CircularObstacle)
    circle_b = isinstance(ob, CircularObstacle)
    if circle_a and circle_b:
        gap = np.linalg.norm(oa.center - ob.center)
        return gap < oa.r_eff + ob.r_eff - 1e-12
    if circle_a != circle_b:
        circ, poly = (oa, ob) if circle_a else (ob, oa)
        res = point_feasibility(-poly.A, poly.b)  # nearest point uses closure
        if not res.feasible:
            return False
        # min ||x - c|| over the polytope closure via the shifted least-distance
        # problem min ||y|| s.t. -A y >= b + A c.
        proj = point_feasibility(-poly.A, poly.b + poly.A @ circ.center)
        dist = float(np.linalg.norm(proj.u)) if proj.feasible else np.inf
        return dist < circ.r_eff - 1e-12
    rows = np.vstack([-oa.A, -ob.A])
    rhs = np.concatenate([oa.b, ob.b]) + 1e-9
    return point_feasibility(rows, rhs).feasible


def in_free_space(env: Environment, x) -> bool:
    """x inside the region and outside every (inflated) obstacle."""
    x = np.asarray(x, dtype=float)
    if not env.bounds.contains(x):
        return False
    return all(barrier_value(obs, x) >= 0.0 for obs in env.obstacles)


def ellipsoid_bbox(P, q, level) -> Box:
    """Axis-aligned bounding box of {x : (x-q)^T P (x-q) <= level}."""
    Pinv = np.linalg.inv(P)
    half = np.sqrt(np.maximum(level, 0.0) * np.maximum(np.diag(Pinv), 0.0))
    return Box(q - half, q + half)


def _cholesky_or_raise(P):
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise ValueError("CLF matrix P must be positive definite") from exc


def min_clf_over_obstacle(P, q, obstacle) -> float:
    """min (x-q)^T P (x-q) over the obstacle closure.

    Polytopic closure: equality-free least-distance QP in whitened
    coordinates.  Circular closure: exact for P = I, otherwise a bounded
    bisection on the Lagrange multiplier of the ball constraint.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    if isinstance(obstacle, PolytopicObstacle):
        L = _cholesky_or_raise(P)
        # h_i <= 0  <=>  -(a_i^T L^-T) y >= b_i + a_i^T q  with  y = L^T (x - q)
        Linv_t = np.linalg.inv(L).T
        C = -(obstacle.A @ Linv_t)
        d = obstacle.b + obstacle.A @ q
        res = point_feasibility(C, d)
        if not res.feasible:  # empty closure cannot happen for valid obstacles
            return np.inf
        return float(res.u @ res.u)

    c, r = obstacle.center, obstacle.r_eff
    _cholesky_or_raise(P)
    if np.linalg.norm(c - q) <= r:
        return 0.0
    if np.allclose(P, np.eye(P.shape[0])):
        return float((np.linalg.norm(c - q) - r) ** 2)

    # Stationarity: P(x-q) + mu (x-c) = 0, mu >= 0; ||x(mu)-c|| decreasing.
    eye = np.eye(P.shape[0])

    def ball_gap(mu):
        x = np.linalg.solve(P + mu * eye, P @ q + mu * c)
        return np.linalg.norm(x - c) - r

    if ball_gap(0.0) <= 0.0:
        return 0.0
    mu_hi = 1.0
    while ball_gap(mu_hi) > 0.0:
        mu_hi *= 2.0
        if mu_hi > 1e16:
            break
    mu_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (mu_lo + mu_hi)
        if ball_gap(mid) > 0.0:
            mu_lo = mid
        else:
            mu_hi = mid
    x = np.linalg.solve(P + mu_hi * eye, P @ q + mu_hi * c)
    return float((x - q) @ P @ (x - q))


def sublevel_intersects_obstacle(P, q, level, obstacle) -> bool:
    """True iff {V <= level} meets the obstacle closure (V = (x-q)^T P (x-q))."""
    return min_clf_over_obstacle(P, q, obstacle) <= level


def min_barrier_over_sublevel(obstacle, P, q, level) -> float:
    """min over {V <= level} of the obstacle barrier h.

    Used to size the appendix-style gain for obstacles dropped from the
    constraint set; positive exactly when the sublevel set misses the closure.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    if isinstance(obstacle, CircularObstacle):
        c, r = obstacle.center, obstacle.r_eff
        if (q - c) @ P @ (q - c) <= level:
            dist2 = 0.0
        elif np.array_equal(P, np.eye(P.shape[0])):
            dist2 = max(0.0, np.linalg.norm(c - q) - np.sqrt(max(level, 0.0))) ** 2
        else:
            # Project c onto the ellipsoid: (x-c) + mu P (x-q) = 0.
            eye = np.eye(P.shape[0])

            def level_gap(mu):
                x = np.linalg.solve(eye + mu * P, c + mu * (P @ q))
                return (x - q) @ P @ (x - q) - level

            mu_lo, mu_hi = 0.0, 1.0
            while level_gap(mu_hi) > 0.0 and mu_hi < 1e16:
                mu_hi *= 2.0
            for _ in range(100):
                mid = 0.5 * (mu_lo + mu_hi)
                if level_gap(mid) > 0.0:
                    mu_lo = mid
                else:
                    mu_hi = mid
            x = np.linalg.solve(eye + mu_hi * P, c + mu_hi * (P @ q))
            dist2 = float((x - c) @ (x - c))
        return dist2 - r ** 2

    # Polytopic: min over the ellipsoid of max_i h_i, a convex piecewise-affine
    # epigraph problem; bisect on t testing feasibility of {h_i <= t} against
    # the ellipsoid (via min_clf over the shifted polytope).  Returns a lower
    # bound within 1% of the minimum, which is the safe side for gain sizing.
    box = ellipsoid_bbox(P, q, level)
    comps_q = obstacle.A @ q + obstacle.b
    t_hi = float(np.max(comps_q))
    half = 0.5 * (box.hi - box.lo)
    reach = float(np.max(np.abs(obstacle.A) @ half))
    t_lo = t_hi - reach - 1.0

    def reachable(t):
        shifted = PolytopicObstacle.__new__(PolytopicObstacle)
        object.__setattr__(shifted, "A", obstacle.A)
        object.__setattr__(shifted, "b", obstacle.b - t)
        return min_clf_over_obstacle(P, q, shifted) <= level

    for _ in range(80):
        if t_lo > 0.0 and t_hi - t_lo <= 0.01 * t_lo:
            break
        if t_hi - t_lo <= 1e-12 * (1.0 + abs(t_hi)):
            break
        mid = 0.5 * (t_lo + t_hi)
        if reachable(mid):
            t_hi = mid
        else:
            t_lo = mid
    return t_lo


def enumerate_active_patterns(obstacle: PolytopicObstacle, region: Box,
                              tol: float = TIE_TOL) -> list[tuple[int, ...]]:
    """Face index sets that can be active somewhere in the region with h >= 0.

    A pattern J is kept when the linear system {h_j <= h_i for j not in J,
    i in J; h_i = h_i' within J; h_i >= 0; x in region box} is feasible.
    Patterns of size up to the state dimension are enumerated.
    """
    from itertools import combinations

    n = obstacle.dim
    N = obstacle.n_faces
    eye = np.eye(n)
    box_rows = np.vstack([eye, -eye])
    box_rhs = np.concatenate([region.lo, -region.hi])
    out = []
    for size in range(1, min(n, N) + 1):
        for J in combinations(range(N), size):
            rows = [box_rows]
            rhs = [box_rhs]
            others = [j for j in range(N) if j not in J]
            for i in J:
                rows.append(obstacle.A[i][None, :])        # h_i >= 0
                rhs.append(np.array([-obstacle.b[i]]))
                if others:
                    diff = obstacle.A[i][None, :] - obstacle.A[others]
                    rows.append(diff)                      # h_j <= h_i
                    rhs.append(obstacle.b[others] - obstacle.b[i])
            first = J[0]
            for i in J[1:]:
                diff = (obstacle.A[first] - obstacle.A[i])[None, :]
                gap = obstacle.b[i] - obstacle.b[first]
                rows.append(np.vstack([diff, -diff]))      # h_first = h_i
                rhs.append(np.array([gap, -gap]))
            if point_feasibility(np.vstack(rows), np.concatenate(rhs)).feasible:
                out.append(J)
    return out


# -- environment file loading -------------------------------------------------

def _require(cond, path, msg):
    if not cond:
        raise EnvironmentFormatError(f"{path}: {msg}")


def environment_from_dict(doc: dict) -> Environment:
    _require(isinstance(doc, dict), "$", "document must be a JSON object")
    _require("bounds" in doc, "$", "missing field 'bounds'")
    bounds = doc["bounds"]
    _require(isinstance(bounds, dict) and "min" in bounds and "max" in bounds,
             "bounds", "expected object with 'min' and 'max' arrays")
    try:
        box = Box(np.asarray(bounds["min"], dtype=float),
                  np.asarray(bounds["max"], dtype=float))
    except (ValueError, TypeError) as exc:
        raise EnvironmentFormatError(f"bounds: {exc}") from exc

    obstacles, alphas = [], []
    for k, entry in enumerate(doc.get("obstacles", [])):
        path = f"obstacles[{k}]"
        _require(isinstance(entry, dict), path, "expected an object")
        kind = entry.get("type")
        _require(kind in ("circle", "polytope"), f"{path}.type",
                 "must be 'circle' or 'polytope'")
        alpha = entry.get("alpha0")
        _require(isinstance(alpha, (int, float)) and alpha > 0,
                 f"{path}.alpha0", "must be a positive number")
        try:
            if kind == "circle":
                obs = CircularObstacle(np.asarray(entry["center"], dtype=float),
                                       float(entry["radius"]),
                                       float(entry.get("inflation", 0.0)))
            else:
                faces = entry.get("faces")
                _require(isinstance(faces, list) and faces, f"{path}.faces",
                         "must be a nonempty list")
                A = np.array([f["a"] for f in faces], dtype=float)
                b = np.array([f["b"] for f in faces], dtype=float)
                obs = PolytopicObstacle(A, b)
        except KeyError as exc:
            raise EnvironmentFormatError(f"{path}: missing field {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise EnvironmentFormatError(f"{path}: {exc}") from exc
        obstacles.append(obs)
        alphas.append(float(alpha))

    try:
        return Environment(box, tuple(obstacles), tuple(alphas))
    except ValueError as exc:
        raise EnvironmentFormatError(f"obstacles: {exc}") from exc


def load_environment(path) -> Environment:
    """Load and validate an environment JSON file."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise EnvironmentFormatError(
                f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return environment_from_dict(doc)
