"""Pose-error metrics and link/obstacle distance computations.

Pose errors combine a tri-point distance sum (three points offset from each
pose along its frame axes) with the shortest angular difference between the
two orientation quaternions. Obstacle clearances reduce to point-to-segment
distances against the five link segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import FrameChain, link_segments

TRI_POINT_ARM = 0.1  # lever arm d for tri-point generation, m


class EmptyObstacleList(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    position: np.ndarray    # (3,)
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n} != 1")


@dataclass(frozen=True)
class PoseError:
    distance_sum: float  # D_phi + D_theta + D_psi, m
    angle: float         # rad, in [0, pi]


@dataclass(frozen=True)
class ObstacleSphere:
    center: np.ndarray  # (3,)
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("radius must be > 0")


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product, (w, x, y, z) convention."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_slerp(q1: np.ndarray, q2: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    dot = float(np.dot(q1, q2))
    if dot < 0:
        q2, dot = -q2, -dot
    dot = min(dot, 1.0)
    if dot > 1.0 - 1e-12:
        out = (1 - t) * q1 + t * q2
        return out / np.linalg.norm(out)
    omega = np.arccos(dot)
    so = np.sin(omega)
    out = np.sin((1 - t) * omega) / so * q1 + np.sin(t * omega) / so * q2
    return out / np.linalg.norm(out)


def random_unit_quat(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def tri_points(pose: Pose, d: float = TRI_POINT_ARM) -> np.ndarray:
    """Three points offset a distance d from the pose position along the
    rotated frame's x, y, z axes (roll/pitch/yaw axis points). Shape (3, 3)."""
    R = quat_to_matrix(pose.orientation)
    return pose.position[None, :] + d * R.T


def tri_point_distance_sum(a: Pose, b: Pose, d: float = TRI_POINT_ARM) -> float:
    """Sum of Euclidean distances between corresponding tri-points of a and b."""
    pa = tri_points(a, d)
    pb = tri_points(b, d)
    return float(np.sum(np.linalg.norm(pa - pb, axis=1)))


def quat_shortest_angle(q1: np.ndarray, q2: np.ndarray) -> float:
    """Shortest angular difference between two unit quaternions, in [0, pi].

    angle = 2*arccos(clip(q1.q2, -1, 1)), folded to [0, pi] so that the
    double cover (q vs -q) maps to the same value.
    """
    dot = float(np.clip(np.dot(q1, q2), -1.0, 1.0))
    angle = 2.0 * np.arccos(dot)
    if angle > np.pi:
        angle = 2.0 * np.pi - angle
    return float(angle)


def pose_error(a: Pose, b: Pose, d: float = TRI_POINT_ARM) -> PoseError:
    return PoseError(
        distance_sum=tri_point_distance_sum(a, b, d),
        angle=quat_shortest_angle(a.orientation, b.orientation),
    )


def point_segment_distance(p, a, b) -> float:
    """Minimal distance from point p to segment ab (a == b allowed).

    The unconstrained line minimizer is clamped to [0, 1]; endpoints are
    ordered canonically first so the result is exactly symmetric in (a, b).
    """
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # Lexicographic ordering makes the arithmetic identical under (a, b) swap.
    for u, v in zip(a, b):
        if u < v:
            break
        if u > v:
            a, b = b, a
            break
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.dot(p - a, ab)) / denom
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_distances_to_point(segments: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Vectorized point-to-segment distance for an (N, 2, 3) segment array."""
    a = segments[:, 0]
    b = segments[:, 1]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.where(denom > 0, np.einsum("ij,ij->i", p[None, :] - a, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(closest - p[None, :], axis=1)


def obstacle_link_distances(chain: FrameChain, obstacles) -> np.ndarray:
    """Per obstacle: min over the 5 link segments of the surface distance
    (center-to-segment distance minus radius). Negative means penetration."""
    obstacles = list(obstacles)
    if not obstacles:
        raise EmptyObstacleList("at least one obstacle required")
    segs = link_segments(chain)
    out = np.empty(len(obstacles))
    for k, obs in enumerate(obstacles):
        out[k] = float(np.min(segment_distances_to_point(segs, obs.center))) - obs.radius
    return out
