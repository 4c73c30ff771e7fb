"""Task-space trajectory generation.

A best-first kinodynamic lattice search over constant-acceleration motion
primitives seeds a uniform cubic B-spline, which is then refined by gradient
descent on smoothness + clearance + dynamic-feasibility costs. Replanning is
triggered by path collisions against a fresh map snapshot or by a periodic
timer, with position/velocity continuity at the handoff.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .bspline import (BSplineTrajectory, arc_length, bspline_eval,
                      bspline_eval_many, fit_interpolating_spline)
from .geometry import Pose, quat_slerp
from .gridmap import (DistanceField, VoxelGrid, compute_edf,
                      query_distance_grad, query_distance_many,
                      query_occupied_many)


class NoPathFound(RuntimeError):
    pass


class StartInCollision(NoPathFound):
    pass


class GoalInCollision(NoPathFound):
    pass


class InfeasibleSeed(RuntimeError):
    pass


@dataclass(frozen=True)
class KinoState:
    position: np.ndarray  # (3,)
    velocity: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))


@dataclass(frozen=True)
class PlannerConfig:
    v_max: float = 0.5            # m/s
    a_lim: float = 1.0            # m/s^2
    tau_prim: float = 0.2         # primitive duration, s
    rho: float = 1.0              # time-cost weight
    lambda_smooth: float = 10.0
    lambda_collision: float = 200.0
    lambda_feasible: float = 10.0
    safe_clearance: float = 0.05  # m
    replan_period: float = 0.5    # s
    goal_tolerance: float = 0.02  # m
    node_budget: int = 200_000
    heuristic_weight: float = 2.5
    prim_samples: int = 4         # clearance samples along each primitive
    max_opt_iters: int = 200
    grad_tol: float = 1e-4


@dataclass(frozen=True)
class MapSnapshot:
    """Immutable occupancy + distance field pair the planner consumes."""
    grid: VoxelGrid
    field: DistanceField


def build_snapshot(grid: VoxelGrid) -> MapSnapshot:
    return MapSnapshot(grid=grid, field=compute_edf(grid))


# ---------------------------------------------------------------------------
# kinodynamic search

def _primitive_accels(a_lim: float) -> np.ndarray:
    vals = np.array([-a_lim, 0.0, a_lim])
    return np.array(np.meshgrid(vals, vals, vals, indexing="ij")).reshape(3, -1).T  # (27, 3)


def kino_search(start: KinoState, goal: np.ndarray, snapshot: MapSnapshot,
                cfg: PlannerConfig) -> list[tuple[float, KinoState]]:
    """Best-first search over bounded-acceleration primitives.

    Returns (time, state) pairs at tau_prim spacing from start to a node
    within goal_tolerance of goal (exact goal appended). Cost per primitive
    is (|u|^2 + rho) * tau; the heuristic is the weighted Euclidean-time
    lower bound rho * dist / v_max.
    """
    goal = np.asarray(goal, dtype=float)
    fld = snapshot.field
    if query_distance_many(fld, start.position[None])[0] <= 0.0:
        raise StartInCollision(f"start {start.position} has no clearance")
    if query_distance_many(fld, goal[None])[0] <= 0.0:
        raise GoalInCollision(f"goal {goal} is inside an obstacle")

    if np.linalg.norm(start.position - goal) <= cfg.goal_tolerance:
        return [(0.0, start)]

    tau = cfg.tau_prim
    accels = _primitive_accels(cfg.a_lim)
    n_prim = len(accels)
    # sample fractions along each primitive for clearance checks
    fracs = (np.arange(cfg.prim_samples) + 1.0) / cfg.prim_samples  # (S,)
    arrival_speed = 2.0 * cfg.a_lim * tau
    res = fld.resolution
    vel_res = cfg.a_lim * tau / 2.0

    def h(p):
        return cfg.rho * np.linalg.norm(p - goal) / cfg.v_max

    # node records: (pos, vel, g, parent_index)
    nodes = [(start.position, start.velocity, 0.0, -1)]
    open_heap = [(cfg.heuristic_weight * h(start.position), 0.0, 0)]
    best_g = {}
    expanded = 0
    while open_heap:
        f_val, g, idx = heapq.heappop(open_heap)
        pos, vel, g_node, parent = nodes[idx]
        if g > g_node + 1e-12:
            continue
        expanded += 1
        if expanded > cfg.node_budget:
            raise NoPathFound("node budget exhausted")

        # vectorized expansion of all primitives
        new_vel = vel[None, :] + accels * tau                      # (27, 3)
        ok = np.linalg.norm(new_vel, axis=1) <= cfg.v_max + 1e-12
        new_pos = pos[None, :] + vel[None, :] * tau + 0.5 * accels * tau ** 2
        # clearance along each primitive
        t_s = fracs[None, :, None] * tau                           # (1, S, 1)
        samples = (pos[None, None, :] + vel[None, None, :] * t_s
                   + 0.5 * accels[:, None, :] * t_s ** 2)          # (27, S, 3)
        clear = query_distance_many(fld, samples.reshape(-1, 3)).reshape(n_prim, -1)
        ok &= np.all(clear >= cfg.safe_clearance, axis=1)
        if not ok.any():
            continue
        costs = (np.sum(accels ** 2, axis=1) + cfg.rho) * tau
        dists = np.linalg.norm(new_pos - goal, axis=1)

        for j in np.flatnonzero(ok):
            child_g = g_node + costs[j]
            if dists[j] <= cfg.goal_tolerance and np.linalg.norm(new_vel[j]) <= arrival_speed:
                nodes.append((new_pos[j], new_vel[j], child_g, idx))
                return _reconstruct(nodes, len(nodes) - 1, tau, goal)
            key = (int(new_pos[j, 0] / res), int(new_pos[j, 1] / res),
                   int(new_pos[j, 2] / res),
                   int(new_vel[j, 0] / vel_res), int(new_vel[j, 1] / vel_res),
                   int(new_vel[j, 2] / vel_res))
            prev = best_g.get(key)
            if prev is not None and prev <= child_g:
                continue
            best_g[key] = child_g
            nodes.append((new_pos[j], new_vel[j], child_g, idx))
            heapq.heappush(open_heap,
                           (child_g + cfg.heuristic_weight * h(new_pos[j]),
                            child_g, len(nodes) - 1))
    raise NoPathFound("open set exhausted")


def _reconstruct(nodes, idx, tau, goal) -> list[tuple[float, KinoState]]:
    chain = []
    while idx >= 0:
        pos, vel, _, parent = nodes[idx]
        chain.append(KinoState(position=pos, velocity=vel))
        idx = parent
    chain.reverse()
    out = [(k * tau, s) for k, s in enumerate(chain)]
    last_t, last_s = out[-1]
    if np.linalg.norm(last_s.position - goal) > 1e-12:
        out.append((last_t + tau, KinoState(position=goal, velocity=np.zeros(3))))
    return out


# ---------------------------------------------------------------------------
# B-spline optimization

def _spline_cost_grad(cp: np.ndarray, dt: float, fld: DistanceField,
                      cfg: PlannerConfig) -> tuple[float, np.ndarray]:
    """Total cost and its gradient w.r.t. all control points.

    smoothness: sum |Q_{i+1} - 2 Q_i + Q_{i-1}|^2
    collision:  sum max(0, safe_clearance - dist(Q_i))^2
    feasible:   per-axis hinge^2 on velocity / acceleration control points
    """
    n = len(cp)
    grad = np.zeros_like(cp)
    cost = 0.0

    d2 = cp[2:] - 2 * cp[1:-1] + cp[:-2]
    cost += cfg.lambda_smooth * float(np.sum(d2 ** 2))
    g = 2.0 * cfg.lambda_smooth * d2
    grad[2:] += g
    grad[1:-1] -= 2 * g
    grad[:-2] += g

    dists = query_distance_many(fld, cp)
    for i in np.flatnonzero((dists < cfg.safe_clearance) & np.isfinite(dists)):
        d, dgrad = query_distance_grad(fld, cp[i])
        viol = cfg.safe_clearance - d
        cost += cfg.lambda_collision * viol ** 2
        grad[i] += cfg.lambda_collision * 2.0 * viol * (-dgrad)

    v = np.diff(cp, axis=0) / dt
    ve = np.abs(v) - cfg.v_max
    mask = ve > 0
    cost += cfg.lambda_feasible * float(np.sum(ve[mask] ** 2))
    gv = np.zeros_like(v)
    gv[mask] = 2.0 * cfg.lambda_feasible * ve[mask] * np.sign(v[mask]) / dt
    grad[1:] += gv
    grad[:-1] -= gv

    a = np.diff(cp, n=2, axis=0) / dt ** 2
    ae = np.abs(a) - cfg.a_lim
    mask = ae > 0
    cost += cfg.lambda_feasible * float(np.sum(ae[mask] ** 2))
    ga = np.zeros_like(a)
    ga[mask] = 2.0 * cfg.lambda_feasible * ae[mask] * np.sign(a[mask]) / dt ** 2
    grad[2:] += ga
    grad[1:-1] -= 2 * ga
    grad[:-2] += ga

    return cost, grad


def optimize_bspline(seed_points: np.ndarray, snapshot: MapSnapshot,
                     cfg: PlannerConfig, v_start=None, v_end=None,
                     knot_interval: float | None = None) -> BSplineTrajectory:
    """Fit an interpolating spline through the seed path, then minimize the
    spline cost with L-BFGS on the interior control points. The first and last three
    control points are pinned so the boundary position and velocity of the
    curve are preserved exactly."""
    seed_points = np.asarray(seed_points, dtype=float).reshape(-1, 3)
    if len(seed_points) < 2:
        raise ValueError("seed must contain at least 2 points")
    dt = cfg.tau_prim if knot_interval is None else knot_interval
    traj = fit_interpolating_spline(seed_points, dt, v_start=v_start, v_end=v_end)
    cp = traj.control_points.copy()
    n = len(cp)
    free = np.zeros(n, dtype=bool)
    free[3:-3] = True
    if not free.any():
        return traj

    fld = snapshot.field
    seed_blocked = _min_cp_clearance(cp, fld) <= 0.0
    free_idx = np.flatnonzero(free)

    def fun(x):
        full = cp.copy()
        full[free_idx] = x.reshape(-1, 3)
        c, g = _spline_cost_grad(full, dt, fld, cfg)
        return c, g[free_idx].ravel()

    x0 = cp[free_idx].ravel()
    cost0, _ = fun(x0)
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": cfg.max_opt_iters,
                                     "gtol": cfg.grad_tol})
    cp[free_idx] = res.x.reshape(-1, 3)

    made_progress = res.fun < cost0 - 1e-12
    if seed_blocked and not made_progress and _min_cp_clearance(cp, fld) <= 0.0:
        raise InfeasibleSeed("seed path penetrates obstacles beyond repair")
    return BSplineTrajectory(control_points=cp, knot_interval=dt)


def _min_cp_clearance(cp: np.ndarray, fld: DistanceField) -> float:
    return float(np.min(query_distance_many(fld, cp)))


def spline_cost(traj: BSplineTrajectory, snapshot: MapSnapshot, cfg: PlannerConfig) -> float:
    return _spline_cost_grad(traj.control_points, traj.knot_interval,
                             snapshot.field, cfg)[0]


def spline_cost_grad(traj: BSplineTrajectory, snapshot: MapSnapshot,
                     cfg: PlannerConfig) -> tuple[float, np.ndarray]:
    return _spline_cost_grad(traj.control_points, traj.knot_interval,
                             snapshot.field, cfg)


# ---------------------------------------------------------------------------
# trajectory checking and replanning

@dataclass(frozen=True)
class TrajectoryReport:
    collision_time: float | None
    min_clearance: float

    @property
    def clean(self) -> bool:
        return self.collision_time is None


def check_trajectory(traj: BSplineTrajectory, snapshot: MapSnapshot,
                     cfg: PlannerConfig, t_from: float = 0.0) -> TrajectoryReport:
    """Sample at roughly half-voxel arc spacing; report the earliest time in
    an occupied voxel (hard collision) or the minimum clearance if clean."""
    res = snapshot.grid.resolution
    dur = traj.duration
    t_from = min(max(t_from, 0.0), dur)
    dt_s = res / (2.0 * cfg.v_max)
    n = max(int(np.ceil((dur - t_from) / dt_s)), 1) + 1
    ts = np.linspace(t_from, dur, n)
    pts = bspline_eval_many(traj, ts)
    occ = query_occupied_many(snapshot.grid, pts)
    clear = query_distance_many(snapshot.field, pts)
    if occ.any():
        k = int(np.argmax(occ))
        return TrajectoryReport(collision_time=float(ts[k]),
                                min_clearance=float(np.min(clear)))
    return TrajectoryReport(collision_time=None, min_clearance=float(np.min(clear)))


def _segment_clear(a: np.ndarray, b: np.ndarray, snapshot: MapSnapshot,
                   cfg: PlannerConfig) -> bool:
    """Whole segment at half-voxel spacing keeps safe_clearance."""
    n = max(int(np.ceil(np.linalg.norm(b - a) / (snapshot.grid.resolution / 2))), 1) + 1
    ts = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return bool(np.all(query_distance_many(snapshot.field, pts) >= cfg.safe_clearance))


def _straight_seed(a: np.ndarray, b: np.ndarray, cfg: PlannerConfig) -> np.ndarray:
    """Waypoints along the straight segment following a trapezoidal (or
    triangular) speed profile at v_max / a_lim, sampled every tau_prim."""
    dist = float(np.linalg.norm(b - a))
    if dist < 1e-12:
        return np.vstack([a, b])
    u = (b - a) / dist
    t_acc = cfg.v_max / cfg.a_lim
    d_acc = 0.5 * cfg.a_lim * t_acc ** 2
    if dist <= 2 * d_acc:
        t_acc = np.sqrt(dist / cfg.a_lim)
        t_total = 2 * t_acc
        v_peak = cfg.a_lim * t_acc
    else:
        t_total = 2 * t_acc + (dist - 2 * d_acc) / cfg.v_max
        v_peak = cfg.v_max

    def s_of_t(t):
        if t <= t_acc:
            return 0.5 * cfg.a_lim * t ** 2
        if t >= t_total - t_acc:
            td = t_total - t
            return dist - 0.5 * cfg.a_lim * td ** 2
        return 0.5 * cfg.a_lim * t_acc ** 2 + v_peak * (t - t_acc)

    n = max(int(np.ceil(t_total / cfg.tau_prim)), 1) + 1
    ts = np.linspace(0.0, t_total, n)
    return a[None, :] + np.array([s_of_t(t) for t in ts])[:, None] * u[None, :]


def plan_trajectory(start: KinoState, goal: np.ndarray, snapshot: MapSnapshot,
                    cfg: PlannerConfig) -> BSplineTrajectory:
    """Seed path -> B-spline optimization, boundary states preserved.

    A clear straight segment short-circuits the lattice search with a
    trapezoidal-profile seed; otherwise a kinodynamic search finds one."""
    goal = np.asarray(goal, dtype=float)
    if _segment_clear(start.position, goal, snapshot, cfg):
        pts = _straight_seed(start.position, goal, cfg)
    else:
        path = kino_search(start, goal, snapshot, cfg)
        pts = np.array([s.position for _, s in path])
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
    return optimize_bspline(pts, snapshot, cfg,
                            v_start=start.velocity, v_end=np.zeros(3))


@dataclass(frozen=True)
class ReplanResult:
    kind: str  # "keep" | "replanned"
    trajectory: BSplineTrajectory
    t0: float  # wall time at which the trajectory starts


class ReplanManager:
    """Holds the active trajectory and applies the two replanning triggers:
    (a) the remaining path collides in the latest snapshot, (b) the periodic
    refresh timer elapsed."""

    def __init__(self, cfg: PlannerConfig, goal: np.ndarray):
        self.cfg = cfg
        self.goal = np.asarray(goal, dtype=float)
        self.trajectory: BSplineTrajectory | None = None
        self.t0 = 0.0
        self.last_plan_time = -np.inf

    def state_at(self, now: float) -> KinoState:
        t = min(max(now - self.t0, 0.0), self.trajectory.duration)
        return KinoState(position=bspline_eval(self.trajectory, t, 0),
                         velocity=bspline_eval(self.trajectory, t, 1))

    def plan_initial(self, start: KinoState, snapshot: MapSnapshot,
                     now: float = 0.0) -> BSplineTrajectory:
        self.trajectory = plan_trajectory(start, self.goal, snapshot, self.cfg)
        self.t0 = now
        self.last_plan_time = now
        return self.trajectory

    def set_goal(self, goal: np.ndarray) -> None:
        self.goal = np.asarray(goal, dtype=float)

    def replan_step(self, now: float, snapshot: MapSnapshot,
                    force: bool = False) -> ReplanResult:
        if self.trajectory is None:
            raise RuntimeError("no active trajectory; call plan_initial first")
        report = check_trajectory(self.trajectory, snapshot, self.cfg,
                                  t_from=now - self.t0)
        periodic = now - self.last_plan_time >= self.cfg.replan_period
        if not (force or periodic or not report.clean):
            return ReplanResult(kind="keep", trajectory=self.trajectory, t0=self.t0)
        start = self.state_at(now)
        self.trajectory = plan_trajectory(start, self.goal, snapshot, self.cfg)
        self.t0 = now
        self.last_plan_time = now
        return ReplanResult(kind="replanned", trajectory=self.trajectory, t0=self.t0)


# ---------------------------------------------------------------------------
# waypoint emission and export

def emit_waypoints(traj: BSplineTrajectory, dt: float, start_orientation,
                   goal_orientation) -> list[tuple[Pose, np.ndarray]]:
    """(Pose, velocity) samples at dt spacing, endpoints included; orientation
    is slerped from the start orientation to the goal orientation by arc-length
    fraction."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    dur = traj.duration
    n = max(int(round(dur / dt)), 1) + 1
    ts = np.linspace(0.0, dur, n)
    pts = bspline_eval_many(traj, ts)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    fracs = cum / total if total > 0 else np.linspace(0.0, 1.0, n)
    out = []
    for k, t in enumerate(ts):
        quat = quat_slerp(start_orientation, goal_orientation, float(fracs[k]))
        vel = bspline_eval(traj, float(t), 1)
        out.append((Pose(position=pts[k], orientation=quat), vel))
    return out


def export_trajectory_csv(traj: BSplineTrajectory, path, dt: float = 0.05,
                          header_extra: str = "") -> None:
    with open(path, "w") as f:
        f.write(f"# t,x,y,z,vx,vy,vz {header_extra}\n")
        t = 0.0
        while t <= traj.duration + 1e-9:
            tt = min(t, traj.duration)
            p = bspline_eval(traj, tt, 0)
            v = bspline_eval(traj, tt, 1)
            f.write(f"{tt},{p[0]},{p[1]},{p[2]},{v[0]},{v[1]},{v[2]}\n")
            t += dt


def export_trajectory_json(traj: BSplineTrajectory, path, waypoints=None) -> None:
    doc = {
        "control_points": traj.control_points.tolist(),
        "knot_interval": traj.knot_interval,
        "degree": 3,
    }
    if waypoints is not None:
        doc["waypoints"] = [
            {"position": p.position.tolist(), "orientation": p.orientation.tolist(),
             "velocity": v.tolist()} for p, v in waypoints]
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


@dataclass(frozen=True)
class PlanMetrics:
    length: float
    plan_time: float
    success: bool


def plan_with_metrics(start: KinoState, goal: np.ndarray, snapshot: MapSnapshot,
                      cfg: PlannerConfig) -> tuple[BSplineTrajectory | None, PlanMetrics]:
    t0 = time.perf_counter()
    try:
        traj = plan_trajectory(start, goal, snapshot, cfg)
    except NoPathFound:
        return None, PlanMetrics(length=np.nan, plan_time=time.perf_counter() - t0,
                                 success=False)
    elapsed = time.perf_counter() - t0
    return traj, PlanMetrics(length=arc_length(traj), plan_time=elapsed, success=True)
