"""Control-affine plant models, Lie derivatives, and fixed-step integration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LIFT_OFFSET = 0.1


@dataclass(frozen=True)
class System:
    """Control-affine plant xdot = f(x) + g(x) u.

    Linear-family kinds (single_integrator, linear, double_integrator) carry
    explicit (A, B); the unicycle is the one nonlinear kind and exposes the
    lifted lookahead point that follows single-integrator dynamics.
    """

    kind: str
    n: int
    m: int
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    lift: float | None = None

    @property
    def is_linear(self) -> bool:
        return self.A is not None

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_linear:
            return self.A @ x
        return np.zeros(self.n)  # unicycle drift is zero

    def input_matrix(self, x):
        if self.is_linear:
            return self.B
        theta = float(x[2])
        return np.array([[np.cos(theta), 0.0],
                         [np.sin(theta), 0.0],
                         [0.0, 1.0]])


def single_integrator(n: int) -> System:
    return System("single_integrator", n, n, np.zeros((n, n)), np.eye(n))


def linear_system(A, B) -> System:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError("A must be square and B row-compatible")
    return System("linear", A.shape[0], B.shape[1], A, B)


def double_integrator(k: int) -> System:
    A = np.zeros((2 * k, 2 * k))
    A[:k, k:] = np.eye(k)
    B = np.zeros((2 * k, k))
    B[k:, :] = np.eye(k)
    return System("double_integrator", 2 * k, k, A, B)


def unicycle(lift: float = DEFAULT_LIFT_OFFSET) -> System:
    if lift <= 0.0:
        raise ValueError("lookahead offset must be positive")
    return System("unicycle", 3, 2, lift=lift)


def parse_system(spec: str) -> System:
    """Build a system from a CLI string like 'single_integrator:2'."""
    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "single_integrator":
            return single_integrator(int(parts[1]))
        if kind == "double_integrator":
            return double_integrator(int(parts[1]))
        if kind == "unicycle":
            return unicycle(float(parts[1]) if len(parts) > 1 else DEFAULT_LIFT_OFFSET)
        if kind == "linear":
            A = np.loadtxt(parts[1], ndmin=2)
            B = np.loadtxt(parts[2], ndmin=2)
            return linear_system(A, B)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad system spec '{spec}': {exc}") from exc
    raise ValueError(f"unknown system kind '{kind}'")


def planning_system(system: System) -> System:
    """The system the planner reasons about: the unicycle plans in lifted coordinates."""
    if system.kind == "unicycle":
        return single_integrator(2)
    return system


def lie_derivatives(system: System, grad, x):
    """(L_f W, L_g W) for a scalar function with gradient `grad` at x."""
    grad = np.asarray(grad, dtype=float)
    x = np.asarray(x, dtype=float)
    if grad.shape[0] != system.n or x.shape[0] != system.n:
        raise ValueError("gradient/state dimension mismatch")
    return float(grad @ system.drift(x)), grad @ system.input_matrix(x)


def unicycle_lift(state, lift: float) -> np.ndarray:
    """Lookahead point p = (x + l cos(theta), y + l sin(theta))."""
    if lift <= 0.0:
        raise ValueError("lookahead offset must be positive")
    x, y, theta = state
    return np.array([x + lift * np.cos(theta), y + lift * np.sin(theta)])


def unicycle_input_map(theta: float, u_lift, lift: float):
    """Map a lifted-point velocity command to wheel inputs (v, omega).

    (v, omega) = diag(1, 1/l) R(theta)^T u; applying them makes the lifted
    point track u exactly.
    """
    if lift <= 0.0:
        raise ValueError("lookahead offset must be positive")
    u_lift = np.asarray(u_lift, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    body = np.array([c * u_lift[0] + s * u_lift[1],
                     -s * u_lift[0] + c * u_lift[1]])
    return float(body[0]), float(body[1] / lift)


def integrate_step(system: System, x, u, dt: float):
    """One classical RK4 step with the input held constant (zero-order hold)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or input")

    def f(xc):
        return system.drift(xc) + system.input_matrix(xc) @ u

    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def workspace_point(system: System, state) -> np.ndarray:
    """Coordinates in which obstacles are expressed.

    Positions for the double integrator, the lifted point for the unicycle,
    the full state otherwise.
    """
    state = np.asarray(state, dtype=float)
    if system.kind == "double_integrator":
        return state[: system.m]
    if system.kind == "unicycle":
        return unicycle_lift(state, system.lift)
    return state
