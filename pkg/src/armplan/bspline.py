"""Uniform cubic B-spline trajectories over 3D control points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Uniform cubic basis matrix, rows are coefficients of [s^3, s^2, s, 1].
M4 = np.array([
    [-1.0, 3.0, -3.0, 1.0],
    [3.0, -6.0, 3.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [1.0, 4.0, 1.0, 0.0],
]) / 6.0


class OutOfDomain(ValueError):
    pass


@dataclass(frozen=True)
class BSplineTrajectory:
    control_points: np.ndarray  # (N, 3), N >= 4
    knot_interval: float        # s

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "control_points", cp)
        if len(cp) < 4:
            raise ValueError("need at least 4 control points")
        if self.knot_interval <= 0:
            raise ValueError("knot_interval must be > 0")

    @property
    def duration(self) -> float:
        return (len(self.control_points) - 3) * self.knot_interval

    def velocity_control_points(self) -> np.ndarray:
        return np.diff(self.control_points, axis=0) / self.knot_interval

    def acceleration_control_points(self) -> np.ndarray:
        return np.diff(self.control_points, n=2, axis=0) / self.knot_interval ** 2


def bspline_eval(traj: BSplineTrajectory, t: float, derivative_order: int = 0) -> np.ndarray:
    """De Boor (matrix-form) evaluation of position/velocity/acceleration."""
    if derivative_order not in (0, 1, 2):
        raise ValueError("derivative_order must be 0, 1 or 2")
    dt = traj.knot_interval
    n_span = len(traj.control_points) - 3
    u = t / dt
    if t < -1e-12 or u > n_span + 1e-9:
        raise OutOfDomain(f"t={t} outside [0, {traj.duration}]")
    i = min(max(int(np.floor(u)), 0), n_span - 1)
    s = u - i
    q = traj.control_points[i:i + 4]
    if derivative_order == 0:
        basis = np.array([s ** 3, s ** 2, s, 1.0]) @ M4
        return basis @ q
    if derivative_order == 1:
        basis = np.array([3 * s ** 2, 2 * s, 1.0, 0.0]) @ M4
        return basis @ q / dt
    basis = np.array([6 * s, 2.0, 0.0, 0.0]) @ M4
    return basis @ q / dt ** 2


def bspline_eval_many(traj: BSplineTrajectory, ts: np.ndarray, derivative_order: int = 0) -> np.ndarray:
    return np.array([bspline_eval(traj, float(t), derivative_order) for t in ts])


def arc_length(traj: BSplineTrajectory, n_samples: int = 400) -> float:
    ts = np.linspace(0.0, traj.duration, n_samples)
    pts = bspline_eval_many(traj, ts)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def fit_interpolating_spline(points: np.ndarray, knot_interval: float,
                             v_start=None, v_end=None) -> BSplineTrajectory:
    """Control points of a uniform cubic B-spline that interpolates `points`
    at the knots, with prescribed end velocities (default zero).

    For M waypoints there are M+2 control points; the M knot-value equations
    (Q_{i} + 4Q_{i+1} + Q_{i+2})/6 = p_i are closed by the two boundary
    derivative conditions (Q_2 - Q_0)/(2 dt) = v_start and its mirror at the end.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    m = len(points)
    if m < 2:
        raise ValueError("need at least 2 waypoints")
    dt = knot_interval
    v0 = np.zeros(3) if v_start is None else np.asarray(v_start, dtype=float)
    v1 = np.zeros(3) if v_end is None else np.asarray(v_end, dtype=float)
    n = m + 2
    A = np.zeros((n, n))
    rhs = np.zeros((n, 3))
    for i in range(m):
        A[i, i:i + 3] = [1 / 6, 4 / 6, 1 / 6]
        rhs[i] = points[i]
    A[m, 0], A[m, 2] = -1.0, 1.0
    rhs[m] = 2.0 * dt * v0
    A[m + 1, n - 3], A[m + 1, n - 1] = -1.0, 1.0
    rhs[m + 1] = 2.0 * dt * v1
    cp = np.linalg.solve(A, rhs)
    return BSplineTrajectory(control_points=cp, knot_interval=dt)
