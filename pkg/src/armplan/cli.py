"""Command-line entry points: training, planning, tracking, benchmarking.

Every command is a pure function of (config file, seed list); outputs carry
a header naming their columns and the config hash so runs can be compared
and reproduced exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np
import yaml

from . import env as env_mod
from . import kinematics
from .bspline import bspline_eval
from .env import EpisodeConfig, ReachEnv, RewardParams, WorkspaceSpec
from .geometry import ObstacleSphere, Pose, pose_error
from .gridmap import voxelize_spheres
from .kinematics import UR5E_DH, forward_kinematics
from .planner import (KinoState, PlannerConfig, ReplanManager,
                      build_snapshot, emit_waypoints, export_trajectory_csv,
                      export_trajectory_json, plan_with_metrics)
from .ppo import (EnsembleSchedule, PpoConfig, load_checkpoint,
                  save_checkpoint, train)

ENV_PREFIX = "ARMPLAN_"


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    # flat environment-variable overrides: ARMPLAN_SECTION_KEY=value
    for key, val in os.environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("_", 1)
        if len(parts) != 2:
            continue
        section, name = parts
        if section in cfg and isinstance(cfg[section], dict):
            cfg[section][name] = yaml.safe_load(val)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = yaml.safe_dump(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _parse_seeds(text: str) -> list[int]:
    seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _ppo_config(doc: dict) -> PpoConfig:
    fields = dict(doc.get("ppo", {}))
    if "hidden" in fields:
        fields["hidden"] = tuple(fields["hidden"])
    return PpoConfig(**fields)


def _schedule(doc: dict) -> EnsembleSchedule:
    return EnsembleSchedule(**doc.get("schedule", {}))


def _planner_config(doc: dict) -> PlannerConfig:
    return PlannerConfig(**doc.get("planner", {}))


def _env_factory(doc: dict):
    env_cfg = doc.get("env", {})
    episode = EpisodeConfig(**env_cfg.get("episode", {}))
    workspace = WorkspaceSpec(**env_cfg.get("workspace", {}))
    rparams = RewardParams(**env_cfg.get("reward", {}))
    position_only = bool(env_cfg.get("position_only", False))
    obstacle_count = env_cfg.get("obstacle_count")

    def factory(seed: int) -> ReachEnv:
        return ReachEnv(seed, episode=episode, workspace=workspace,
                        reward_params=rparams, position_only=position_only,
                        obstacle_count=obstacle_count)
    return factory


def run_train(doc: dict, seeds: list[int], out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(doc)
    cfg = _ppo_config(doc)
    schedule = _schedule(doc)
    factory = _env_factory(doc)
    threshold = doc.get("env", {}).get("episode", {}).get("success_threshold", 0.02)
    curves = []
    for seed in seeds:
        result = train(factory, cfg, schedule, seed)
        curves.append(result.episode_returns)
        curve_path = os.path.join(out_dir, f"curve_seed{seed}.csv")
        with open(curve_path, "w") as f:
            f.write(f"# episode,return,success config={chash} seed={seed} "
                    f"threshold={threshold}\n")
            for i, ret in enumerate(result.episode_returns):
                f.write(f"{i},{float(ret)!r},\n")
        save_checkpoint(os.path.join(out_dir, f"checkpoint_seed{seed}.bin"),
                        result.policy, result.value_net, cfg)
    curves = np.array(curves)
    agg_path = os.path.join(out_dir, "aggregate.csv")
    with open(agg_path, "w") as f:
        f.write(f"# episode,mean_return,var_return config={chash} "
                f"seeds={','.join(map(str, seeds))}\n")
        for i in range(curves.shape[1]):
            f.write(f"{i},{float(curves[:, i].mean())!r},"
                    f"{float(curves[:, i].var())!r}\n")
    return 0


def _scene_from_doc(doc: dict):
    scene = doc.get("scene", {})
    obstacles = [ObstacleSphere(center=np.array(o["center"], dtype=float),
                                radius=float(o["radius"]))
                 for o in scene.get("obstacles", [])]
    return scene, obstacles


def _grid_spec(doc: dict):
    g = doc.get("grid", {})
    origin = np.array(g.get("origin", [-0.6, -0.6, -0.6]), dtype=float)
    resolution = float(g.get("resolution", 0.02))
    dims = tuple(g.get("dims", [60, 60, 60]))
    return origin, resolution, dims


def run_plan(doc: dict, seeds: list[int], out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(doc)
    pcfg = _planner_config(doc)
    scene, obstacles = _scene_from_doc(doc)
    origin, resolution, dims = _grid_spec(doc)
    snapshot = build_snapshot(voxelize_spheres(obstacles, origin, resolution, dims))
    start = np.array(scene["start"], dtype=float)
    goal = np.array(scene["goal"], dtype=float)
    metrics_path = os.path.join(out_dir, "plan_metrics.csv")
    with open(metrics_path, "w") as f:
        f.write(f"# trial,length_m,time_s,success config={chash}\n")
        for trial, seed in enumerate(seeds):
            rng = np.random.default_rng(seed)
            jitter = rng.normal(scale=float(scene.get("start_jitter", 0.0)), size=3)
            st = KinoState(position=start + jitter, velocity=np.zeros(3))
            traj, metrics = plan_with_metrics(st, goal, snapshot, pcfg)
            f.write(f"{trial},{metrics.length!r},{metrics.plan_time!r},"
                    f"{int(metrics.success)}\n")
            if traj is not None and trial == 0:
                export_trajectory_csv(traj, os.path.join(out_dir, "trajectory.csv"),
                                      header_extra=f"config={chash}")
                wps = emit_waypoints(traj, 0.05, np.array([1.0, 0, 0, 0]),
                                     np.array([1.0, 0, 0, 0]))
                export_trajectory_json(traj, os.path.join(out_dir, "trajectory.json"),
                                       waypoints=wps)
    return 0


def run_track(doc: dict, seeds: list[int], out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(doc)
    status = 0
    for seed in seeds:
        log_path = os.path.join(out_dir, f"track_seed{seed}.csv")
        track_episode(doc, seed, log_path, chash)
    return status


def track_episode(doc: dict, seed: int, log_path: str, chash: str) -> dict:
    """Closed planner->waypoints->controller loop with scripted scene events."""
    pcfg = _planner_config(doc)
    scene, obstacles = _scene_from_doc(doc)
    origin, resolution, dims = _grid_spec(doc)
    events = sorted(scene.get("events", []), key=lambda e: e["time"])
    policy, _ = load_checkpoint(doc["track"]["checkpoint"])
    episode = EpisodeConfig(**doc.get("env", {}).get("episode", {}))
    position_only = bool(doc.get("env", {}).get("position_only", False))
    max_ticks = int(doc.get("track", {}).get("max_ticks", 400))

    goal_pos = np.array(scene["goal"], dtype=float)
    goal_quat = np.array(scene.get("goal_orientation", [1.0, 0, 0, 0]), dtype=float)
    q = np.array(doc.get("track", {}).get(
        "home_q", [0.0, -np.pi / 2, np.pi / 2, -np.pi / 2, -np.pi / 2, 0.0]))

    obstacles = list(obstacles)
    snapshot = build_snapshot(voxelize_spheres(obstacles, origin, resolution, dims))
    chain = forward_kinematics(UR5E_DH, q)
    ee_pos, ee_quat = kinematics.end_effector_pose(chain)
    manager = ReplanManager(pcfg, goal_pos)
    manager.plan_initial(KinoState(position=ee_pos, velocity=np.zeros(3)), snapshot)

    replan_events = 0
    rows = []
    now = 0.0
    final_error = np.inf
    for tick in range(max_ticks):
        # scripted events
        map_changed = False
        goal_changed = False
        while events and events[0]["time"] <= now:
            ev = events.pop(0)
            if ev["action"] == "add_obstacle":
                obstacles.append(ObstacleSphere(center=np.array(ev["center"], dtype=float),
                                                radius=float(ev["radius"])))
                map_changed = True
            elif ev["action"] == "set_goal":
                goal_pos = np.array(ev["position"], dtype=float)
                manager.set_goal(goal_pos)
                goal_changed = True
        if map_changed:
            snapshot = build_snapshot(voxelize_spheres(obstacles, origin,
                                                       resolution, dims))
        result = manager.replan_step(now, snapshot, force=goal_changed)
        if result.kind == "replanned":
            replan_events += 1
        # waypoint at the current time is the controller target
        t_local = min(now - manager.t0, manager.trajectory.duration)
        wp_pos = bspline_eval(manager.trajectory, t_local, 0)
        frac = t_local / max(manager.trajectory.duration, 1e-9)
        from .geometry import quat_slerp
        wp_quat = quat_slerp(ee_quat, goal_quat, min(frac, 1.0))
        target = Pose(position=wp_pos, orientation=wp_quat)
        # the policy has a fixed input width: feed it the nearest obstacles,
        # padding with far-away dummies when the scene has fewer
        n_slots = policy.mean_net.in_dim - 22
        by_dist = sorted(obstacles,
                         key=lambda o: float(np.linalg.norm(o.center - ee_pos)))
        dummy = ObstacleSphere(center=np.array([10.0, 10.0, 10.0]), radius=0.01)
        slots = (by_dist + [dummy] * n_slots)[:n_slots]
        state = env_mod.build_state(q, target, slots, position_only=position_only)
        a = np.clip(policy.mean(state), -episode.action_limit, episode.action_limit)
        q = env_mod.step_joints(q, a, episode)
        chain = forward_kinematics(UR5E_DH, q)
        ee_pos, cur_quat = kinematics.end_effector_pose(chain)
        ee = Pose(position=ee_pos, orientation=cur_quat)
        goal_pose = Pose(position=goal_pos, orientation=goal_quat)
        if position_only:
            final_error = float(np.linalg.norm(ee_pos - goal_pos))
        else:
            pe = pose_error(ee, goal_pose)
            final_error = pe.distance_sum + pe.angle
        clearance = (float(np.min(env_mod.geometry.obstacle_link_distances(
            chain, obstacles))) if obstacles else np.inf)
        rows.append((tick, now, final_error, clearance,
                     1 if result.kind == "replanned" else 0))
        now += episode.dt
    with open(log_path, "w") as f:
        f.write(f"# tick,t,error,min_clearance,replanned config={chash} seed={seed}\n")
        for row in rows:
            f.write(",".join(repr(v) for v in row) + "\n")
    return {"replan_events": replan_events, "final_error": final_error,
            "rows": rows}


def run_bench(doc: dict, seeds: list[int], out_dir: str) -> int:
    """Seeded random-scene planning benchmark (length / time / success)."""
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(doc)
    pcfg = _planner_config(doc)
    origin, resolution, dims = _grid_spec(doc)
    bench = doc.get("bench", {})
    n_obs = int(bench.get("obstacles", 10))
    obs_radius = float(bench.get("obstacle_radius", 0.04))
    start = np.array(bench.get("start", [0.35, -0.35, 0.3]), dtype=float)
    goal = np.array(bench.get("goal", [0.35, 0.35, 0.3]), dtype=float)
    path = os.path.join(out_dir, "bench_metrics.csv")
    with open(path, "w") as f:
        f.write(f"# seed,length_m,time_s,success,min_clearance config={chash}\n")
        for seed in seeds:
            rng = np.random.default_rng(seed)
            obstacles = _random_bench_obstacles(rng, start, goal, n_obs, obs_radius)
            snapshot = build_snapshot(voxelize_spheres(obstacles, origin,
                                                       resolution, dims))
            st = KinoState(position=start, velocity=np.zeros(3))
            traj, metrics = plan_with_metrics(st, goal, snapshot, pcfg)
            min_clear = np.nan
            if traj is not None:
                ts = np.linspace(0, traj.duration, 200)
                pts = np.array([bspline_eval(traj, float(t)) for t in ts])
                min_clear = min(
                    float(np.min(np.linalg.norm(pts - o.center, axis=1)) - o.radius)
                    for o in obstacles)
            f.write(f"{seed},{metrics.length!r},{metrics.plan_time!r},"
                    f"{int(metrics.success)},{min_clear!r}\n")
    return 0


def _random_bench_obstacles(rng, start, goal, n_obs, radius,
                            keep_out: float = 0.08):
    obstacles = []
    while len(obstacles) < n_obs:
        c = rng.uniform([-0.55, -0.55, 0.05], [0.55, 0.55, 0.55])
        if (np.linalg.norm(c - start) < radius + keep_out
                or np.linalg.norm(c - goal) < radius + keep_out):
            continue
        obstacles.append(ObstacleSphere(center=c, radius=radius))
    return obstacles


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="armplan")
    parser.add_argument("--mode", required=True,
                        choices=["train", "plan", "track", "bench"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--seeds", default="0")
    parser.add_argument("--out", default="out")
    args = parser.parse_args(argv)
    try:
        doc = load_config(args.config)
        seeds = _parse_seeds(args.seeds)
    except (OSError, ConfigError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    runner = {"train": run_train, "plan": run_plan,
              "track": run_track, "bench": run_bench}[args.mode]
    return runner(doc, seeds, args.out)


if __name__ == "__main__":
    sys.exit(main())
