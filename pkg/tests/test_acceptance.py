"""End-to-end acceptance suite.

Each test covers one numbered release criterion and prints a single
pass/fail line; run with `pytest -v -s tests/test_acceptance.py` to see them
inline. The long-running learning-ordering comparison (criterion 8) sits at
the end of the file.
"""

import pathlib
import time

import numpy as np

from armplan import geometry, kinematics
from armplan.bspline import BSplineTrajectory, bspline_eval
from armplan.env import ReachEnv, reward
from armplan.geometry import ObstacleSphere
from armplan.gridmap import VoxelGrid, voxelize_spheres
from armplan.kinematics import UR5E_DH, forward_kinematics
from armplan.nets import GaussianPolicy, Mlp
from armplan.planner import (KinoState, PlannerConfig, ReplanManager,
                             build_snapshot, check_trajectory,
                             plan_with_metrics, spline_cost, spline_cost_grad)
from armplan.ppo import (EnsembleSchedule, PpoConfig, compute_gae,
                         ensemble_action, pf_return, policy_loss, train,
                         value_loss)

DATA = pathlib.Path(__file__).parent / "data"


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    print(f"\n[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------------------
# 1. forward kinematics vs independent naive matrix chain

def _naive_dh_chain(table, q):
    frames = [np.eye(4)]
    for row, theta in zip(table.rows, q):
        th = theta + row.theta_offset
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(row.alpha), np.sin(row.alpha)
        rot_z = np.array([[ct, -st, 0, 0], [st, ct, 0, 0],
                          [0, 0, 1, 0], [0, 0, 0, 1]])
        tz = np.eye(4)
        tz[2, 3] = row.d
        tx = np.eye(4)
        tx[0, 3] = row.a
        rot_x = np.array([[1, 0, 0, 0], [0, ca, -sa, 0],
                          [0, sa, ca, 0], [0, 0, 0, 1]])
        frames.append(frames[-1] @ rot_z @ tz @ tx @ rot_x)
    return frames


def test_criterion_01_kinematics_oracle():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    max_pos = 0.0
    max_quat = 0.0
    for _ in range(1000):
        q = rng.uniform(-2 * np.pi, 2 * np.pi, size=6)
        chain = forward_kinematics(UR5E_DH, q)
        ref = _naive_dh_chain(UR5E_DH, q)[-1]
        pos, quat = kinematics.end_effector_pose(chain)
        max_pos = max(max_pos, float(np.max(np.abs(pos - ref[:3, 3]))))
        ref_quat = kinematics.rotation_to_quat(ref[:3, :3])
        max_quat = max(max_quat, float(np.min([np.linalg.norm(quat - ref_quat),
                                               np.linalg.norm(quat + ref_quat)])))
    elapsed = time.perf_counter() - t0
    ok = max_pos <= 1e-9 and max_quat <= 1e-9 and elapsed < 1.0
    _report(1, "forward-kinematics oracle", ok,
            f"pos_err={max_pos:.2e} quat_err={max_quat:.2e} t={elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. geometry oracles

def test_criterion_02_geometry_oracles():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    ts = np.linspace(0.0, 1.0, 100_000)
    max_seg = 0.0
    for _ in range(1000):
        p = rng.uniform(-1, 1, size=3)
        a = rng.uniform(-1, 1, size=3)
        b = rng.uniform(-1, 1, size=3)
        d = geometry.point_segment_distance(p, a, b)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        brute = float(np.min(np.linalg.norm(pts - p, axis=1)))
        max_seg = max(max_seg, abs(d - brute))
    max_ang = 0.0
    for _ in range(1000):
        q1 = geometry.random_unit_quat(rng)
        q2 = geometry.random_unit_quat(rng)
        ang = geometry.quat_shortest_angle(q1, q2)
        r_rel = geometry.quat_to_matrix(q1).T @ geometry.quat_to_matrix(q2)
        geo = np.arccos(np.clip((np.trace(r_rel) - 1.0) / 2.0, -1.0, 1.0))
        max_ang = max(max_ang, abs(ang - geo))
    elapsed = time.perf_counter() - t0
    ok = max_seg <= 1e-4 and max_ang <= 1e-9 and elapsed < 10.0
    _report(2, "geometry oracles", ok,
            f"seg_err={max_seg:.2e} ang_err={max_ang:.2e} t={elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3. reward anchor

def test_criterion_03_reward_anchor():
    r = reward(0.0, np.full(3, 1.0))
    target = 4.0 * np.log(10.0)
    ok = abs(r - target) <= 1e-6
    _report(3, "reward anchor 4 ln 10", ok, f"R={r:.8f} target={target:.8f}")


# ---------------------------------------------------------------------------
# 4. GAE and policy-feedback return vs expanded sums

def test_criterion_04_return_oracles():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = 100
        r = rng.normal(size=n)
        v = rng.normal(size=n)
        g = rng.uniform(0.9, 1.0, size=n)
        gamma, lam = 0.99, 0.95
        adv = compute_gae(r, v, 0.0, gamma, lam)
        v_ext = np.concatenate([v, [0.0]])
        deltas = r + gamma * v_ext[1:] - v
        ref_adv = np.array([sum((gamma * lam) ** k * deltas[t + k]
                                for k in range(n - t)) for t in range(n)])
        worst = max(worst, float(np.max(np.abs(adv - ref_adv))))
        ret = pf_return(r, g)
        ref_ret = np.array([sum(r[i] * np.prod(g[t:i + 1]) for i in range(t, n))
                            for t in range(n)])
        worst = max(worst, float(np.max(np.abs(ret - ref_ret))))
    ok = worst <= 1e-10
    _report(4, "GAE / PF-return expanded-sum oracles", ok, f"err={worst:.2e}")


# ---------------------------------------------------------------------------
# 5. end-to-end loss gradients vs finite differences

def test_criterion_05_loss_gradients():
    rng = np.random.default_rng(3)
    n, sdim, adim = 12, 10, 3
    policy = GaussianPolicy(Mlp(sdim, adim, hidden=(8, 8), out_gain=1.0,
                                rng=rng))
    value_net = Mlp(sdim, 1, hidden=(8, 8), out_gain=1.0, rng=rng)
    states = rng.normal(size=(n, sdim))
    actions = policy.mean(states) + rng.normal(size=(n, adim)) * 0.5
    old_logp = policy.log_prob(states, actions) + rng.normal(size=n) * 0.05
    adv = rng.normal(size=n)
    targets = rng.normal(size=n)
    eps = 0.2

    def p_loss_at(params):
        policy.set_parameters([q.copy() for q in params])
        return policy_loss(policy.log_prob(states, actions), old_logp,
                           adv, eps)[0]

    def v_loss_at(params):
        value_net.set_parameters([q.copy() for q in params])
        return value_loss(value_net.forward(states)[:, 0], targets)[0]

    # analytic gradients via the same chain rule the update step uses
    p_params = [q.copy() for q in policy.parameters()]
    cache: list = []
    mu = policy.mean(states, cache)
    _, d_logp, _ = policy_loss(policy.log_prob_value(mu, actions), old_logp,
                               adv, eps)
    dmu_logp, dls_logp = policy.log_prob_grads(mu, actions)
    net_grads, _ = policy.mean_net.backward(cache, d_logp[:, None] * dmu_logp)
    p_grads = [*net_grads, np.sum(d_logp[:, None] * dls_logp, axis=0)]

    v_params = [q.copy() for q in value_net.parameters()]
    cache = []
    vb = value_net.forward(states, cache)[:, 0]
    _, dv = value_loss(vb, targets)
    v_grads, _ = value_net.backward(cache, dv[:, None])

    h = 1e-6
    n_ok = n_tot = 0
    for loss_at, params, grads in [(p_loss_at, p_params, p_grads),
                                   (v_loss_at, v_params, v_grads)]:
        for gi, g in enumerate(grads):
            flat_g = np.asarray(g).reshape(-1)
            for k in range(flat_g.size):
                pert = [q.copy() for q in params]
                pert[gi].reshape(-1)[k] += h
                hi = loss_at(pert)
                pert[gi].reshape(-1)[k] -= 2 * h
                lo = loss_at(pert)
                fd = (hi - lo) / (2 * h)
                an = flat_g[k]
                n_tot += 1
                if abs(fd - an) / max(abs(fd), abs(an), 1e-6) <= 1e-4:
                    n_ok += 1
        loss_at(params)  # restore
    frac = n_ok / n_tot
    ok = frac >= 0.99
    _report(5, "policy/value loss gradient check", ok,
            f"{n_ok}/{n_tot} params ({100 * frac:.2f}%)")


# ---------------------------------------------------------------------------
# 6. ensemble averaging variance law

def test_criterion_06_ensemble_variance_law():
    rng = np.random.default_rng(4)
    policy = GaussianPolicy(Mlp(4, 3, hidden=(8,), rng=rng))
    s = np.zeros(4)
    base_var = policy.std ** 2
    worst = 0.0
    for i in (2, 4, 8):
        draws = np.array([ensemble_action(policy, s, i, rng)[0]
                          for _ in range(100_000)])
        ratio = draws.var(axis=0) / base_var
        worst = max(worst, float(np.max(np.abs(ratio * i - 1.0))))
    ok = worst <= 0.1
    _report(6, "ensemble variance law 1/i", ok, f"max_rel_dev={worst:.3f}")


# ---------------------------------------------------------------------------
# 7. vanilla reduction regression lock

def test_criterion_07_vanilla_regression_lock():
    ref = np.load(DATA / "vanilla_reference_curve.npy")
    cfg = PpoConfig(hidden=(16, 16), steps_per_update=1000, total_steps=3000)
    res = train(lambda s: ReachEnv(s, position_only=True, obstacle_count=1),
                cfg, EnsembleSchedule(variant="NONE"), seed=1234)
    ok = (res.episode_returns.shape == ref.shape
          and np.array_equal(res.episode_returns, ref))
    diff = (float(np.max(np.abs(res.episode_returns - ref)))
            if res.episode_returns.shape == ref.shape else np.inf)
    _report(7, "vanilla-reduction bitwise regression lock", ok,
            f"max_abs_diff={diff:.1e}")


# ---------------------------------------------------------------------------
# 9/10/11/12: planning criteria (8 runs last; see end of file)

ORIGIN = np.array([-0.6, -0.6, -0.6])
RES = 0.02
DIMS = (60, 60, 60)
PCFG = PlannerConfig()


def _empty_snapshot():
    return build_snapshot(VoxelGrid(origin=ORIGIN, resolution=RES,
                                    occupancy=np.zeros(DIMS, dtype=bool)))


def test_criterion_09_free_space_optimality():
    snapshot = _empty_snapshot()
    rng = np.random.default_rng(5)
    n_success = 0
    worst_ratio = 0.0
    worst_time = 0.0
    for _ in range(100):
        while True:
            start = rng.uniform(-0.45, 0.45, size=3)
            goal = rng.uniform(-0.45, 0.45, size=3)
            if np.linalg.norm(goal - start) >= 0.3:
                break
        st = KinoState(position=start, velocity=np.zeros(3))
        traj, metrics = plan_with_metrics(st, goal, snapshot, PCFG)
        straight = float(np.linalg.norm(goal - start))
        if metrics.success and metrics.length <= 1.05 * straight:
            n_success += 1
        worst_ratio = max(worst_ratio, metrics.length / straight)
        worst_time = max(worst_time, metrics.plan_time)
    ok = n_success == 100 and worst_time <= 0.05
    _report(9, "free-space planner optimality / speed", ok,
            f"success={n_success}/100 worst_ratio={worst_ratio:.4f} "
            f"worst_time={1000 * worst_time:.1f}ms")


def _random_spheres(rng, start, goal, n=10, radius=0.04, keep_out=0.08):
    out = []
    while len(out) < n:
        c = rng.uniform(-0.45, -0.45 + 0.9, size=3)
        if (np.linalg.norm(c - start) < radius + keep_out
                or np.linalg.norm(c - goal) < radius + keep_out):
            continue
        out.append(ObstacleSphere(center=c, radius=radius))
    return out


def test_criterion_10_cluttered_scene_safety():
    start = np.array([-0.4, -0.4, 0.0])
    goal = np.array([0.4, 0.4, 0.0])
    st = KinoState(position=start, velocity=np.zeros(3))
    n_success = 0
    min_clear_on_success = np.inf
    for seed in range(100):
        rng = np.random.default_rng(seed)
        obstacles = _random_spheres(rng, start, goal)
        snapshot = build_snapshot(voxelize_spheres(obstacles, ORIGIN, RES, DIMS))
        traj, metrics = plan_with_metrics(st, goal, snapshot, PCFG)
        if traj is None:
            continue
        report = check_trajectory(traj, snapshot, PCFG)
        end_err = float(np.linalg.norm(bspline_eval(traj, traj.duration) - goal))
        if not report.clean or end_err > 0.02:
            continue
        # sampled clearance against the true sphere surfaces
        ts = np.linspace(0.0, traj.duration, 400)
        pts = np.array([bspline_eval(traj, float(t)) for t in ts])
        clear = min(float(np.min(np.linalg.norm(pts - o.center, axis=1))
                          - o.radius) for o in obstacles)
        n_success += 1
        min_clear_on_success = min(min_clear_on_success, clear)
    ok = n_success >= 95 and min_clear_on_success >= 0.0
    _report(10, "cluttered-scene safety", ok,
            f"success={n_success}/100 min_clearance={min_clear_on_success:.4f}")


def test_criterion_11_replanning_triggers():
    dt = 0.05
    goal = np.array([0.35, 0.0, 0.0])
    mgr = ReplanManager(PCFG, goal)
    mgr.plan_initial(KinoState(position=np.array([-0.35, 0.0, 0.0]),
                               velocity=np.zeros(3)), _empty_snapshot(), now=0.0)
    # (a) scripted obstacle injection: replan fires in the same cycle with
    # boundary continuity at the handoff state
    inject_at = 4 * dt
    state_before = mgr.state_at(inject_at)
    snapshot = build_snapshot(voxelize_spheres(
        [ObstacleSphere(center=np.array([0.1, 0.0, 0.0]), radius=0.06)],
        ORIGIN, RES, DIMS))
    res = mgr.replan_step(inject_at, snapshot)
    cont = float(np.max(np.abs(bspline_eval(res.trajectory, 0.0)
                               - state_before.position)))
    same_cycle = res.kind == "replanned"
    # (b) periodic trigger cadence on a static map
    mgr2 = ReplanManager(PCFG, goal)
    mgr2.plan_initial(KinoState(position=np.array([-0.35, 0.0, 0.0]),
                                velocity=np.zeros(3)), _empty_snapshot(), now=0.0)
    free = _empty_snapshot()
    replan_times = []
    now = 0.0
    for _ in range(40):
        now += dt
        if mgr2.replan_step(now, free).kind == "replanned":
            replan_times.append(now)
    gaps = np.diff([0.0, *replan_times])
    periodic_ok = (len(gaps) > 0
                   and np.all(np.abs(gaps - PCFG.replan_period) <= dt + 1e-9))
    ok = same_cycle and cont <= 1e-6 and periodic_ok
    _report(11, "replanning triggers + continuity", ok,
            f"same_cycle={same_cycle} continuity={cont:.1e} "
            f"periodic_gaps={np.round(gaps, 3).tolist()}")


def test_criterion_12_bspline_invariants():
    rng = np.random.default_rng(6)
    worst_hull = -np.inf
    n_pts = 0
    while n_pts < 10_000:
        cp = rng.uniform(-0.4, 0.4, size=(rng.integers(4, 12), 3))
        traj = BSplineTrajectory(control_points=cp, knot_interval=0.2)
        for t in rng.uniform(0.0, traj.duration, size=50):
            span = min(int(t / 0.2), len(cp) - 4)
            local = cp[span:span + 4]
            p = bspline_eval(traj, float(t))
            viol = max(float(np.max(local.min(axis=0) - p)),
                       float(np.max(p - local.max(axis=0))))
            worst_hull = max(worst_hull, viol)
            n_pts += 1
    hull_ok = worst_hull <= 1e-9

    snapshot = build_snapshot(voxelize_spheres(
        [ObstacleSphere(center=np.array([0.05, 0.02, 0.01]), radius=0.1)],
        ORIGIN, RES, DIMS))
    cp = np.random.default_rng(7).uniform(-0.25, 0.25, size=(9, 3))
    traj = BSplineTrajectory(control_points=cp, knot_interval=0.3)
    _, grad = spline_cost_grad(traj, snapshot, PCFG)
    h = 1e-6
    worst_rel = 0.0
    for i in range(9):
        for k in range(3):
            d = np.zeros_like(cp)
            d[i, k] = h
            hi = spline_cost(BSplineTrajectory(cp + d, 0.3), snapshot, PCFG)
            lo = spline_cost(BSplineTrajectory(cp - d, 0.3), snapshot, PCFG)
            fd = (hi - lo) / (2 * h)
            rel = abs(fd - grad[i, k]) / max(abs(fd), abs(grad[i, k]), 1e-3)
            worst_rel = max(worst_rel, rel)
    grad_ok = worst_rel <= 1e-5
    ok = hull_ok and grad_ok
    _report(12, "B-spline convex hull + cost gradient", ok,
            f"hull_viol={worst_hull:.1e} grad_rel={worst_rel:.1e}")


# ---------------------------------------------------------------------------
# 8. learning-ordering comparison (long-running, kept last)

def test_criterion_08_desk_scale_ablation():
    t0 = time.perf_counter()

    def factory(seed):
        return ReachEnv(seed, position_only=True, obstacle_count=1)

    vanilla_cfg = PpoConfig(hidden=(64, 64), total_steps=200_000)
    improved_cfg = PpoConfig(hidden=(64, 64), total_steps=200_000,
                             use_pf=True, pf_in_gae=True,
                             ensemble_density="effective")
    wins = 0
    rows = []
    for seed in range(5):
        v = train(factory, vanilla_cfg, EnsembleSchedule(variant="NONE"),
                  seed=seed)
        p = train(factory, improved_cfg, EnsembleSchedule(variant="AEW"),
                  seed=seed)
        fv = float(np.mean(v.episode_returns[-100:]))
        fp = float(np.mean(p.episode_returns[-100:]))
        wins += fp >= fv
        rows.append(f"seed{seed}: vanilla={fv:.1f} improved={fp:.1f}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 3 and elapsed <= 3600.0
    _report(8, "improved-PPO vs vanilla ordering", ok,
            f"wins={wins}/5 t={elapsed / 60:.1f}min | " + " | ".join(rows))
