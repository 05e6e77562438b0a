"""Minimal static SVG rendering of environments, trees, and rollouts."""

from __future__ import annotations

import numpy as np

from .geometry import CircularObstacle, Environment

TREE_COLOR = "black"
WAYPOINT_COLOR = "#b8860b"  # dark yellow
ROLLOUT_COLOR = "red"
START_COLOR = "green"
GOAL_COLOR = "purple"
OBSTACLE_COLOR = "#c44"


class SvgCanvas:
    def __init__(self, bounds, size: float = 900.0, margin: float = 20.0):
        self.lo = np.asarray(bounds.lo, dtype=float)
        self.hi = np.asarray(bounds.hi, dtype=float)
        span = self.hi - self.lo
        self.scale = (size - 2 * margin) / max(span[0], span[1])
        self.margin = margin
        self.width = span[0] * self.scale + 2 * margin
        self.height = span[1] * self.scale + 2 * margin
        self.parts: list[str] = []

    def _pt(self, x):
        px = self.margin + (x[0] - self.lo[0]) * self.scale
        py = self.height - self.margin - (x[1] - self.lo[1]) * self.scale
        return px, py

    def line(self, a, b, color, width=1.0, opacity=1.0):
        ax, ay = self._pt(a)
        bx, by = self._pt(b)
        self.parts.append(
            f'<line x1="{ax:.2f}" y1="{ay:.2f}" x2="{bx:.2f}" y2="{by:.2f}" '
            f'stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"/>')

    def polyline(self, pts, color, width=2.0):
        coords = " ".join("{:.2f},{:.2f}".format(*self._pt(p)) for p in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def circle(self, center, radius, fill, opacity=0.8, stroke="none"):
        cx, cy = self._pt(center)
        self.parts.append(
            f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius * self.scale:.2f}" '
            f'fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}"/>')

    def dot(self, center, color, px_radius=6.0):
        cx, cy = self._pt(center)
        self.parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{px_radius}" fill="{color}"/>')

    def polygon(self, pts, fill, opacity=0.8):
        coords = " ".join("{:.2f},{:.2f}".format(*self._pt(p)) for p in pts)
        self.parts.append(f'<polygon points="{coords}" fill="{fill}" fill-opacity="{opacity}"/>')

    def to_string(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width:.0f}" '
                f'height="{self.height:.0f}" viewBox="0 0 {self.width:.0f} {self.height:.0f}">')
        frame = (f'<rect x="{self.margin}" y="{self.margin}" '
                 f'width="{self.width - 2 * self.margin:.2f}" '
                 f'height="{self.height - 2 * self.margin:.2f}" '
                 f'fill="white" stroke="#888"/>')
        return "\n".join([head, frame] + self.parts + ["</svg>"])

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_string())


def _polytope_vertices(obs):
    """Vertices of a 2-D polytope by pairwise face intersection."""
    pts = []
    N = obs.n_faces
    for i in range(N):
        for j in range(i + 1, N):
            M = np.vstack([obs.A[i], obs.A[j]])
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            x = np.linalg.solve(M, -np.array([obs.b[i], obs.b[j]]))
            if np.max(obs.A @ x + obs.b) <= 1e-9:
                pts.append(x)
    if not pts:
        return np.zeros((0, 2))
    pts = np.array(pts)
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return pts[order]


def draw_environment(canvas: SvgCanvas, env: Environment):
    for obs in env.obstacles:
        if isinstance(obs, CircularObstacle):
            canvas.circle(obs.center, obs.r_eff, OBSTACLE_COLOR)
        else:
            verts = _polytope_vertices(obs)
            if len(verts):
                canvas.polygon(verts, OBSTACLE_COLOR)


def render_run(env: Environment, tree=None, plan=None, rollout=None,
               start=None, goal=None) -> SvgCanvas:
    """Standard overlay: tree black, waypoints dark yellow, rollout red,
    start green, goal purple."""
    canvas = SvgCanvas(env.bounds)
    draw_environment(canvas, env)
    if tree is not None:
        for i in range(1, len(tree)):
            p = tree.parents[i]
            canvas.line(tree.state(p)[:2], tree.state(i)[:2], TREE_COLOR, 0.8, 0.7)
    if plan is not None:
        way = [np.asarray(w)[:2] for w in plan.waypoints]
        canvas.polyline(way, WAYPOINT_COLOR, 2.5)
        for w in way:
            canvas.dot(w, WAYPOINT_COLOR, 4.0)
    if rollout is not None and len(rollout):
        canvas.polyline([s[:2] for s in rollout], ROLLOUT_COLOR, 1.8)
    if start is not None:
        canvas.dot(np.asarray(start)[:2], START_COLOR, 7.0)
    if goal is not None:
        canvas.circle(goal.center, goal.radius, GOAL_COLOR, opacity=0.25)
        canvas.dot(goal.center, GOAL_COLOR, 7.0)
    return canvas
