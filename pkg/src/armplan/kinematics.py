"""DH-parameterized forward kinematics of a UR5e and link collision segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

TWO_PI = 2.0 * np.pi


class JointLimitViolation(ValueError):
    """A joint angle is outside its configured range."""


@dataclass(frozen=True)
class DHRow:
    """One row of a standard DH table: alpha/a describe the previous link,
    d/theta the current joint."""

    alpha: float
    a: float
    d: float
    theta_offset: float = 0.0
    theta_min: float = -TWO_PI
    theta_max: float = TWO_PI

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be < theta_max")


@dataclass(frozen=True)
class DHTable:
    rows: tuple[DHRow, ...]

    def __post_init__(self):
        if len(self.rows) != 6:
            raise ValueError("DHTable requires exactly 6 rows")


# Default UR5e table (radians / meters).
UR5E_DH = DHTable(rows=(
    DHRow(alpha=np.pi / 2, a=0.0, d=0.1625),
    DHRow(alpha=0.0, a=-0.425, d=0.0),
    DHRow(alpha=0.0, a=-0.3922, d=0.0),
    DHRow(alpha=np.pi / 2, a=0.0, d=0.1333),
    DHRow(alpha=-np.pi / 2, a=0.0, d=0.0997),
    DHRow(alpha=0.0, a=0.0, d=0.0996),
))


@dataclass(frozen=True)
class FrameChain:
    """Base frame plus the 6 joint frames, as cumulative transforms."""

    origins: np.ndarray     # (7, 3)
    transforms: np.ndarray  # (7, 4, 4)


def load_dh_table(path) -> DHTable:
    """Read a DH table from a YAML file with a ``rows`` list of
    {alpha, a, d, [theta_offset], [theta_min], [theta_max]} mappings."""
    with open(path) as f:
        doc = yaml.safe_load(f)
    rows = tuple(DHRow(**row) for row in doc["rows"])
    return DHTable(rows=rows)


def dh_transform(row: DHRow, q: float) -> np.ndarray:
    """Single-link transform Trot_z(theta) Transl_z(d) Transl_x(a) Trot_x(alpha)."""
    theta = q + row.theta_offset
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(row.alpha), np.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def check_joint_limits(table: DHTable, q: np.ndarray) -> None:
    q = np.asarray(q, dtype=float)
    if q.shape != (6,):
        raise ValueError(f"expected 6 joint angles, got shape {q.shape}")
    for i, (row, qi) in enumerate(zip(table.rows, q)):
        if not (row.theta_min <= qi <= row.theta_max):
            raise JointLimitViolation(
                f"joint {i + 1}: {qi} outside [{row.theta_min}, {row.theta_max}]")


def forward_kinematics(table: DHTable, q: np.ndarray) -> FrameChain:
    """Chain the six DH transforms; origins[k] is the frame-k origin in base
    coordinates. Raises JointLimitViolation on out-of-range angles."""
    check_joint_limits(table, q)
    transforms = np.empty((7, 4, 4))
    transforms[0] = np.eye(4)
    for i in range(6):
        transforms[i + 1] = transforms[i] @ dh_transform(table.rows[i], q[i])
    return FrameChain(origins=transforms[:, :3, 3].copy(), transforms=transforms)


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), canonicalized to w >= 0."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def end_effector_pose(chain: FrameChain) -> tuple[np.ndarray, np.ndarray]:
    """(position, quaternion wxyz) of the last frame."""
    T = chain.transforms[6]
    return T[:3, 3].copy(), rotation_to_quat(T[:3, :3])


def link_segments(chain: FrameChain) -> np.ndarray:
    """The 5 link segments connecting consecutive joint-frame origins
    (base link excluded). Shape (5, 2, 3); zero-length segments are kept."""
    pts = chain.origins[1:7]
    segs = np.empty((5, 2, 3))
    segs[:, 0] = pts[:-1]
    segs[:, 1] = pts[1:]
    return segs
