"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict (see conftest.py) that is printed in
the "acceptance criteria" section at the end of the pytest run.
"""
import itertools
import math
import time

import numpy as np
import pytest

from covy.cli import main
from covy.drl.ddpg import DdpgAgent, DdpgConfig
from covy.drl.env import ACTION_HIGH, ACTION_LOW, NavEnv, RewardParams, Terminal, compute_reward
from covy.drl.sac import SacAgent, SacConfig, unit_to_box
from covy.drl.training import TrainingConfig, evaluate_policy, run_training
from covy.geometry import Pose2D, wrap_angle
from covy.harness import FaultSpec, run_breach_eval, run_localization_sweep, run_nav_eval
from covy.hybrid import Outcome
from covy.localization import (
    AmclParams,
    DistanceField,
    PoseDelta,
    amcl_update,
    estimate_pose,
    integrate_odometry,
    uniform_particles,
)
from covy.perception import DetectorProfile, detect_breaches, hungarian_assign
from covy.world import LidarConfig, LidarScan, builtin_scenario, cast_lidar

import oracles as O

pytestmark = pytest.mark.acceptance


def verdict(record_property, number, detail):
    record_property("criterion", number)
    record_property("detail", detail)
    print(f"criterion {number}: {detail}")


# -- 1 -------------------------------------------------------------------------
class _Track:
    def __init__(self, tid, history):
        self.id = tid
        self.history = list(history)


def test_c01_breach_graph_matches_oracle(record_property):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        centres = rng.uniform(0, 6, (n, 2))
        tracks = [_Track(i + 1, c + rng.normal(0, 0.05, (20, 2))) for i, c in enumerate(centres)]
        rep = detect_breaches(tracks, 1.5, 20)
        avg = {t.id: (math.fsum(h[0] for h in t.history) / 20, math.fsum(h[1] for h in t.history) / 20)
               for t in tracks}
        pairs, groups, target = O.brute_force_breaches(avg, 1.5)
        same = (rep.breach_pairs == pairs
                and sorted(map(sorted, rep.groups)) == sorted(map(sorted, groups))
                and (rep.target is None) == (target is None)
                and (target is None or np.allclose(rep.target, target, rtol=0, atol=1e-12)))
        mismatches += not same
    dt = time.perf_counter() - t0
    verdict(record_property, 1, f"{mismatches} mismatches in 1000 scenes, {dt:.2f} s")
    assert mismatches == 0 and dt < 5


# -- 2 -------------------------------------------------------------------------
def test_c02_hungarian_is_optimal(record_property):
    rng = np.random.default_rng(0)
    perms = np.array(list(itertools.permutations(range(6))))
    t0 = time.perf_counter()
    bad = 0
    for _ in range(500):
        cost = rng.uniform(0, 10, (6, 6))
        got = sum(cost[r, c] for r, c in hungarian_assign(cost))
        best = cost[np.arange(6), perms].sum(axis=1).min()
        bad += not math.isclose(got, best, rel_tol=0, abs_tol=1e-12)
    dt = time.perf_counter() - t0
    verdict(record_property, 2, f"{bad} non-optimal of 500, {dt:.2f} s")
    assert bad == 0 and dt < 5


# -- 3 -------------------------------------------------------------------------
def _states(rng, n):
    return np.concatenate([rng.uniform(0, 1, (n, 10)), rng.uniform(0, 0.2, (n, 1)),
                           rng.uniform(-2, 2, (n, 1)), rng.uniform(0, 4, (n, 1)),
                           rng.uniform(-np.pi, np.pi, (n, 1))], axis=1)


def test_c03_gradients_match_finite_differences(record_property):
    from covy.drl.buffer import Batch

    rng = np.random.default_rng(0)
    b = 4
    batch = Batch(_states(rng, b), np.stack([rng.uniform(0, 0.2, b), rng.uniform(-2, 2, b)], axis=1),
                  rng.normal(0, 10, b), _states(rng, b), (rng.random(b) < 0.3).astype(float))
    t0 = time.perf_counter()
    worst = {}

    sac = SacAgent(SacConfig(), np.random.default_rng(1))
    y = sac.q_target(batch, rng.standard_normal((b, 2)))
    for name, q in (("sac_q1", sac.q1), ("sac_q2", sac.q2)):
        _, g = sac.q_loss_and_grads(q, batch, y)
        worst[name] = O.gradient_check(q.params, g, lambda q=q: O.q_regression_loss(
            q.params, batch.states, batch.actions, y), 100, rng).max()
    eps = rng.standard_normal((b, 2))
    _, g, logp = sac.policy_loss_and_grads(batch, eps)
    worst["sac_policy"] = O.gradient_check(sac.policy.params, g, lambda: O.sac_policy_loss(
        sac.policy.params, sac.q1.params, sac.q2.params, batch.states, eps, sac.alpha), 100, rng).max()
    _, ga = sac.alpha_loss_and_grad(logp)
    target = np.asarray(logp, O.LD) + sac.config.target_entropy
    worst["sac_alpha"] = O.gradient_check([sac.log_alpha], [np.asarray(ga)], lambda: -np.mean(
        np.asarray(sac.log_alpha, O.LD) * target), 1, rng).max()

    ddpg = DdpgAgent(DdpgConfig(), np.random.default_rng(2))
    y = ddpg.critic_target_values(batch)
    _, g = ddpg.critic_loss_and_grads(batch, y)
    worst["ddpg_critic"] = O.gradient_check(ddpg.critic.params, g, lambda: O.q_regression_loss(
        ddpg.critic.params, batch.states, batch.actions, y), 100, rng).max()
    _, g = ddpg.actor_loss_and_grads(batch)
    worst["ddpg_actor"] = O.gradient_check(ddpg.actor.params, g, lambda: O.ddpg_actor_loss(
        ddpg.actor.params, ddpg.critic.params, batch.states), 100, rng).max()
    dt = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    verdict(record_property, 3, f"max relative error {worst[top]:.2e} ({top}), {dt:.1f} s")
    assert all(v < 1e-4 for v in worst.values()) and dt < 60


# -- 4 -------------------------------------------------------------------------
def test_c04_amcl_converges_on_asymmetric_map(record_property):
    sc = builtin_scenario("asymmetric_room")
    df = DistanceField(sc.map)
    lidar = LidarConfig(360, noise_sigma=0.01)
    moves = [(0.15, 0, 0)] * 7 + [(0.12, 0, 0.3)] * 8 + [(0.05, 0, 0.0)] * 15
    traj = [Pose2D(2.5, 1.2, 1.6)]
    for m in moves:
        traj.append(integrate_odometry(traj[-1], PoseDelta(*m)))
    params = AmclParams()
    t0 = time.perf_counter()
    ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ps = uniform_particles(sc.map, 500, rng)
        for k in range(1, len(traj)):
            scan = cast_lidar(sc.map, (), traj[k], lidar, rng)
            ps = amcl_update(ps, PoseDelta.between(traj[k - 1], traj[k]), scan, sc.map, df, params, rng)
        est, _ = estimate_pose(ps)
        true = traj[-1]
        ok += (math.hypot(est.x - true.x, est.y - true.y) < 0.1
               and abs(wrap_angle(est.theta - true.theta)) < math.radians(5))
    dt = time.perf_counter() - t0
    verdict(record_property, 4, f"{ok}/100 runs converged after {len(moves)} updates, {dt:.0f} s")
    assert ok >= 95 and dt < 120


# -- 5 -------------------------------------------------------------------------
def test_c05_actions_stay_in_box(record_property):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    total = outside = 0
    lo, hi = ACTION_LOW, ACTION_HIGH
    for k in range(250):
        scale = 10.0 ** rng.uniform(-1, 2)      # include saturated networks
        ddpg = DdpgAgent(DdpgConfig(hidden=(16, 16)), np.random.default_rng([0, k]))
        sac = SacAgent(SacConfig(hidden=(16, 16)), np.random.default_rng([1, k]))
        for p in ddpg.actor.params + sac.policy.params:
            p *= scale
        s = rng.normal(0, 5, (2000, 14))
        a_d = ddpg.policy(s)
        eps = rng.standard_normal((2000, 2)) * 3
        u, _, _ = sac.policy_forward(s, eps)
        a_s = unit_to_box(u)
        a_det = unit_to_box(np.tanh(sac.policy(s)[:, :2]))
        for a in (a_d, a_s):
            outside += int(np.sum(np.any((a < lo) | (a > hi), axis=1)))
            total += len(a)
        outside += int(np.sum(np.any((a_det < lo) | (a_det > hi), axis=1)))
    dt = time.perf_counter() - t0
    verdict(record_property, 5, f"{outside} of {total:,} actions outside the box, {dt:.1f} s")
    assert total >= 10 ** 6 and outside == 0 and dt < 30


# -- 6 -------------------------------------------------------------------------
def _scan(r):
    return LidarScan(np.full(10, r), -math.pi / 2, math.pi / 2, 10, 3.5)


def test_c06_reward_cases(record_property):
    p = RewardParams()
    clear, blocked = _scan(3.5), _scan(0.1)
    checks = [
        compute_reward(0.5, 0.25, clear, 1, p) == (100.0, Terminal.GOAL),
        compute_reward(1.0, 0.75, blocked, 1, p) == (-100.0, Terminal.COLLISION),
        compute_reward(2.0, 1.75, clear, 1, p) == (125.0, Terminal.NONE),
        compute_reward(1.0, 1.25, clear, 1, p) == (-1.0, Terminal.NONE),
        compute_reward(1.0, 1.0, clear, 1, p) == (-1.0, Terminal.NONE),          # no progress
        compute_reward(1.0, 0.25, blocked, 1, p) == (100.0, Terminal.GOAL),       # goal beats collision
        compute_reward(1.0, 1.0, blocked, 1, p) == (-100.0, Terminal.COLLISION),  # collision beats stall
        compute_reward(0.3, 0.3, clear, 1, p) == (-1.0, Terminal.NONE),           # radius is exclusive
        compute_reward(2.0, 1.75, clear, 500, p) == (125.0, Terminal.TIMEOUT),
    ]
    verdict(record_property, 6, f"{sum(checks)}/{len(checks)} reward cases exact")
    assert all(checks)


# -- 7 and 8 share one training run ----------------------------------------------
TRAIN_EPISODES = 300


@pytest.fixture(scope="module")
def trained_sac():
    env = NavEnv([builtin_scenario("empty_room")])
    agent = SacAgent(SacConfig(dtype="float32"), np.random.default_rng(0))
    t0 = time.perf_counter()
    log = run_training(env, agent, TrainingConfig(episodes=TRAIN_EPISODES, seed=0))
    return agent, log, env, time.perf_counter() - t0


@pytest.mark.slow
def test_c07_desk_scale_sac_training(record_property, trained_sac):
    agent, log, env, dt = trained_sac
    evals = evaluate_policy(env, agent, 50, seed=12345)
    success = sum(e.outcome == Terminal.GOAL.value for e in evals) / 50
    r = log.returns
    first, last = float(r[:100].mean()), float(r[-100:].mean())
    ratio = last / first if first > 0 else math.inf
    verdict(record_property, 7, f"eval success {success:.0%}, return first-100 {first:.0f} last-100 {last:.0f} "
                                f"(ratio {ratio:.2f}, need >= 2), {TRAIN_EPISODES} episodes in {dt / 60:.1f} min")
    assert success >= 0.8
    assert last >= 2 * first


@pytest.mark.slow
def test_c08_hybrid_vs_pure_under_odometry_jump(record_property, trained_sac):
    agent = trained_sac[0]
    sc = [builtin_scenario("empty_room")]
    kw = dict(fault=FaultSpec(1.0, 10, 30), seed=0, lidar=LidarConfig(noise_sigma=0.01))
    t0 = time.perf_counter()
    pure, _ = run_nav_eval(agent, sc, 100, "pure_odom", **kw)
    hyb, _ = run_nav_eval(agent, sc, 100, "hybrid", **kw)
    dt = time.perf_counter() - t0
    lost_p, lost_h = pure.count(Outcome.LOST), hyb.count(Outcome.LOST)
    verdict(record_property, 8, f"lost pure {lost_p} hybrid {lost_h}; speed (successes) pure "
                                f"{pure.average_speed:.3f} hybrid {hyb.average_speed:.3f} m/s; {dt:.0f} s")
    assert lost_p > 0 and lost_h == 0
    assert hyb.average_speed < pure.average_speed
    assert dt < 600


# -- 9 -------------------------------------------------------------------------
def test_c09_ale_sweep_calibration(record_property):
    t0 = time.perf_counter()
    out, off = {}, []
    for prof in (DetectorProfile.rgbd(), DetectorProfile.rgb()):
        table = run_localization_sweep(prof, repeats=50, step=1.0, seed=0)
        out[prof.mode.value] = table
        for row in table.rows:
            want = float(prof.ale(row.distance))
            if abs(row.mean_ale - want) > 0.10 * want:
                off.append(f"{prof.mode.value}@{row.distance:g}m {row.mean_ale / want - 1:+.0%}")
    dt = time.perf_counter() - t0
    rgbd_end, rgb_end = out["RGBD"].distances[-1], out["RGB"].distances[-1]
    n = sum(len(t.rows) for t in out.values())
    verdict(record_property, 9, f"{n - len(off)}/{n} stations within 10% "
                                f"{'(outside: ' + ', '.join(off) + ')' if off else ''}; "
                                f"RGBD ends {rgbd_end:g} m, RGB ends {rgb_end:g} m; {dt:.1f} s")
    assert rgbd_end == 6.0 and rgb_end >= 16.0 and dt < 30
    assert not off


# -- 10 ------------------------------------------------------------------------
def test_c10_zero_noise_vision(record_property):
    exact = dict(ale_intercept=0.0, ale_slope=0.0)
    rgbd, rgb = DetectorProfile.rgbd(**exact), DetectorProfile.rgb(**exact)
    t0 = time.perf_counter()
    mats, _ = run_breach_eval({"RGBD": (rgbd, None), "RGB": (None, rgb), "compound": (rgbd, rgb)}, scenes=200)
    dt = time.perf_counter() - t0
    parts = [f"{m} acc/prec/rec {cm.accuracy:.0%}/{cm.precision:.0%}/{cm.recall:.0%}" for m, cm in mats.items()]
    verdict(record_property, 10, "; ".join(parts) + f"; {dt:.1f} s")
    assert all(cm.accuracy == cm.precision == cm.recall == 1.0 for cm in mats.values())
    assert all(cm.total == 200 for cm in mats.values()) and dt < 30


# -- 11 ------------------------------------------------------------------------
def test_c11_cli_outputs_are_bit_identical(record_property, tmp_path, capsys):
    small = ["--set", "agent.sac.hidden=[16,16]", "--set", "training.warmup=50",
             "--set", "training.batch_size=16", "--set", "reward.max_steps=60", "--seed", "7"]
    runs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        codes = [
            main(["train", "--episodes", "5", "--out", str(d), *small]),
            main(["train", "--episodes", "3", "--algorithm", "ddpg", "--out", str(d / "ddpg"),
                  "--set", "agent.ddpg.hidden=[16,16]", *small]),
            main(["eval-nav", "--checkpoint", str(d / "checkpoint.npz"), "--episodes", "3", "--out", str(d),
                  *small]),
            main(["eval-breach", "--scenes", "20", "--seed", "7", "--out", str(d)]),
            main(["sweep-ale", "--seed", "7", "--set", "sweep.repeats=10", "--out", str(d)]),
        ]
        capsys.readouterr()
        assert codes == [0] * len(codes)
        runs.append({str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
                     if p.suffix in (".csv", ".json")})
    same = runs[0] == runs[1]
    verdict(record_property, 11, f"{len(runs[0])} data files, identical across runs: {same}")
    assert same and len(runs[0]) >= 10
