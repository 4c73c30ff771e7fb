"""Kinematic simulation of the reaching-with-obstacle-avoidance task.

Targets are sampled inside an 85 cm workspace sphere minus a 30 cm base
cylinder; three 5 cm spherical obstacles spawn in a quarter-annulus shell
around the target. The state vector is 25-dimensional: joint angles (6),
end-effector pose (7), target pose (7), pose error (2), per-obstacle
clearance (3). Actions are joint velocities, clipped and integrated with
ideal tracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, kinematics
from .geometry import ObstacleSphere, Pose
from .kinematics import DHTable, UR5E_DH, forward_kinematics


@dataclass(frozen=True)
class WorkspaceSpec:
    outer_radius: float = 0.85
    inner_cyl_radius: float = 0.30
    annulus_major: float = 0.60
    annulus_minor: float = 0.15
    obstacle_diameter: float = 0.05
    obstacle_count: int = 3


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 100
    dt: float = 0.05
    action_limit: float = 3.14      # rad/s
    success_threshold: float = 0.02  # m-equivalent on summed error


@dataclass(frozen=True)
class RewardParams:
    w1: float = 1e-3
    w2: float = 0.1
    d_max: float = 0.08
    tau: float = 1e-4


def sample_target(rng: np.random.Generator, ws: WorkspaceSpec = WorkspaceSpec()) -> Pose:
    """Uniform position in the upper half-ball of radius outer_radius minus
    the base cylinder (rejection sampling); uniform orientation."""
    while True:
        p = rng.uniform(-ws.outer_radius, ws.outer_radius, size=3)
        if np.dot(p, p) > ws.outer_radius ** 2:
            continue
        if p[2] < 0.0:
            continue
        if p[0] ** 2 + p[1] ** 2 < ws.inner_cyl_radius ** 2:
            continue
        return Pose(position=p, orientation=geometry.random_unit_quat(rng))


def sample_obstacles(rng: np.random.Generator, target: Pose,
                     ws: WorkspaceSpec = WorkspaceSpec(),
                     count: int | None = None) -> list[ObstacleSphere]:
    """Spheres with centers uniform in the annulus shell minor <= r <= major
    around the target, restricted to the quarter facing the robot base
    (towards-base hemisphere intersected with z above the target)."""
    n = ws.obstacle_count if count is None else count
    radius = ws.obstacle_diameter / 2.0
    to_base = -target.position  # base at the origin
    out = []
    while len(out) < n:
        c = rng.uniform(-ws.annulus_major, ws.annulus_major, size=3)
        r = np.linalg.norm(c)
        if not (ws.annulus_minor <= r <= ws.annulus_major):
            continue
        if np.dot(c, to_base) < 0.0 or c[2] < 0.0:
            continue
        out.append(ObstacleSphere(center=target.position + c, radius=radius))
    return out


def reward(e: float, d_obs: np.ndarray, params: RewardParams = RewardParams()) -> float:
    """R = -[w1 e^2 + ln(e^2 + tau) + w2 sum_i psi_i] with hinge collision
    penalties psi_i = max(0, 1 - |d_i|/d_max); penetration gives psi = 1."""
    d = np.clip(np.asarray(d_obs, dtype=float), 0.0, None)
    psi = np.maximum(0.0, 1.0 - d / params.d_max)
    return float(-(params.w1 * e ** 2 + np.log(e ** 2 + params.tau)
                   + params.w2 * np.sum(psi)))


def step_joints(q: np.ndarray, a: np.ndarray, cfg: EpisodeConfig,
                table: DHTable = UR5E_DH) -> np.ndarray:
    """Clip the commanded joint velocities, integrate for dt, clamp to the
    joint limits (ideal position tracking, no PD stage)."""
    a = np.clip(np.asarray(a, dtype=float), -cfg.action_limit, cfg.action_limit)
    q_new = np.asarray(q, dtype=float) + a * cfg.dt
    lo = np.array([row.theta_min for row in table.rows])
    hi = np.array([row.theta_max for row in table.rows])
    return np.clip(q_new, lo, hi)


def build_state(q: np.ndarray, target: Pose, obstacles,
                table: DHTable = UR5E_DH,
                position_only: bool = False) -> np.ndarray:
    """25-dim state: [q(6), p_e(3+4), p_t(3+4), error(2), d_obs(3)].

    position_only replaces the tri-point/angle error pair with plain
    Euclidean distance and zero angle (simplified training task)."""
    chain = forward_kinematics(table, q)
    pos, quat = kinematics.end_effector_pose(chain)
    ee = Pose(position=pos, orientation=quat)
    if position_only:
        err = (float(np.linalg.norm(pos - target.position)), 0.0)
    else:
        pe = geometry.pose_error(ee, target)
        err = (pe.distance_sum, pe.angle)
    d_obs = geometry.obstacle_link_distances(chain, obstacles)
    return np.concatenate([np.asarray(q, dtype=float), pos, quat,
                           target.position, target.orientation, err, d_obs])


class ReachEnv:
    """Episodic reaching task. Owns its RNG stream; fully deterministic given
    the seed and the action sequence."""

    def __init__(self, seed: int, episode: EpisodeConfig = EpisodeConfig(),
                 workspace: WorkspaceSpec = WorkspaceSpec(),
                 reward_params: RewardParams = RewardParams(),
                 table: DHTable = UR5E_DH,
                 position_only: bool = False,
                 obstacle_count: int | None = None,
                 home_q: np.ndarray | None = None):
        self.rng = np.random.default_rng(seed)
        self.episode = episode
        self.workspace = workspace
        self.reward_params = reward_params
        self.table = table
        self.position_only = position_only
        self.obstacle_count = (workspace.obstacle_count if obstacle_count is None
                               else obstacle_count)
        self.home_q = (np.array([0.0, -np.pi / 2, np.pi / 2, -np.pi / 2, -np.pi / 2, 0.0])
                       if home_q is None else np.asarray(home_q, dtype=float))
        self.q = self.home_q.copy()
        self.target: Pose | None = None
        self.obstacles: list[ObstacleSphere] = []
        self.steps = 0

    @property
    def state_dim(self) -> int:
        return 22 + self.obstacle_count

    @property
    def action_dim(self) -> int:
        return 6

    def reset(self, target: Pose | None = None) -> np.ndarray:
        self.q = self.home_q.copy()
        self.target = sample_target(self.rng, self.workspace) if target is None else target
        self.obstacles = sample_obstacles(self.rng, self.target, self.workspace,
                                          count=self.obstacle_count)
        self.steps = 0
        return self._state()

    def set_target(self, target: Pose) -> None:
        self.target = target

    def _state(self) -> np.ndarray:
        return build_state(self.q, self.target, self.obstacles, self.table,
                           position_only=self.position_only)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict]:
        self.q = step_joints(self.q, action, self.episode, self.table)
        s = self._state()
        n_obs = self.obstacle_count
        e = float(s[-2 - n_obs] + s[-1 - n_obs])  # distance_sum + angle
        d_obs = s[-n_obs:]
        r = reward(e, d_obs, self.reward_params)
        self.steps += 1
        done = self.steps >= self.episode.max_steps
        info = {"e": e, "min_d_obs": float(np.min(d_obs))}
        return s, r, done, info
