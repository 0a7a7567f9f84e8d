import json
import math

import numpy as np
import pytest

from covy.drl.env import NavEnv, RewardParams
from covy.drl.sac import SacAgent, SacConfig
from covy.drl.training import TrainingConfig
from covy.errors import InputDomainError
from covy.harness import (
    AleRow,
    AleTable,
    ConfusionMatrix,
    FaultSpec,
    NavStats,
    ale_table_to_result,
    breach_scenes,
    outcomes_from_table,
    run_breach_eval,
    run_localization_sweep,
    run_nav_eval,
    run_training_cli,
)
from covy.hybrid import EpisodeOutcome, Outcome
from covy.perception import DetectorProfile
from covy.records import export, read_table
from covy.world import builtin_scenario

EXACT = dict(ale_intercept=0.0, ale_slope=0.0)


# -- confusion matrix ------------------------------------------------------
def test_confusion_matrix_metrics():
    cm = ConfusionMatrix(tp=3, fp=1, tn=4, fn=2)
    assert cm.total == 10
    assert cm.accuracy == pytest.approx(0.7)
    assert cm.precision == pytest.approx(0.75)
    assert cm.recall == pytest.approx(0.6)


def test_confusion_matrix_undefined_is_none_not_zero():
    cm = ConfusionMatrix()
    assert cm.accuracy is None and cm.precision is None and cm.recall is None
    cm.add(False, False)
    assert cm.accuracy == 1.0
    assert cm.precision is None and cm.recall is None
    rec = cm.to_record()
    assert rec["precision"] is None and rec["tn"] == 1


def test_confusion_matrix_rejects_negative():
    with pytest.raises(InputDomainError):
        ConfusionMatrix(tp=-1)


# -- nav stats -------------------------------------------------------------
def _outcomes(spec):
    return [EpisodeOutcome(o, 10, path, 1.0) for o, path in spec]


def test_nav_stats_invariants():
    stats = NavStats(_outcomes([(Outcome.SUCCESS, 0.2), (Outcome.SUCCESS, 0.4), (Outcome.COLLISION, 0.1),
                                (Outcome.LOST, 0.3), (Outcome.LOST, 0.0)]))
    assert stats.collision_rate + stats.lost_rate == pytest.approx(stats.failure_rate)
    assert stats.success_rate == pytest.approx(100 - stats.failure_rate)
    assert stats.failure_rate == pytest.approx(60.0)
    assert stats.average_speed == pytest.approx(0.3)
    assert stats.average_speed_all == pytest.approx(0.2)
    assert NavStats().failure_rate is None and NavStats().average_speed is None


# -- ALE sweep ---------------------------------------------------------------
def test_zero_noise_sweep_has_zero_error():
    table = run_localization_sweep(DetectorProfile.rgbd(**EXACT), repeats=5)
    assert table.rows and all(r.mean_ale == 0.0 and r.ci_half_width == 0.0 for r in table.rows)


def test_rgbd_sweep_ends_at_max_range():
    table = run_localization_sweep(DetectorProfile.rgbd(max_range=6.0), repeats=50)
    assert table.distances == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    assert all(r.samples == 50 for r in table.rows)
    assert table.ci_level == 0.95


def test_sweep_matches_configured_curve_at_four_meters():
    prof = DetectorProfile.rgbd(ale_intercept=0.05, ale_slope=0.03)
    row = next(r for r in run_localization_sweep(prof, repeats=50, seed=0).rows if r.distance == 4.0)
    assert row.mean_ale == pytest.approx(0.17, rel=0.10)


@pytest.mark.parametrize("profile", [DetectorProfile.rgbd(), DetectorProfile.rgb()], ids=["rgbd", "rgb"])
def test_sweep_calibration_with_many_samples(profile):
    # with 2000 samples the standard error of each station mean is about 1.2%
    table = run_localization_sweep(profile, repeats=2000, seed=1)
    ratios = [r.mean_ale / float(profile.ale(r.distance)) for r in table.rows]
    assert max(abs(q - 1) for q in ratios) < 0.05


def test_ci_level_changes_half_width():
    prof = DetectorProfile.rgbd()
    a = run_localization_sweep(prof, repeats=30, seed=3, ci_level=0.95)
    b = run_localization_sweep(prof, repeats=30, seed=3, ci_level=0.99)
    ratio = b.rows[0].ci_half_width / a.rows[0].ci_half_width
    assert ratio == pytest.approx(2.5758293 / 1.9599640, rel=1e-6)


def test_ale_table_export(tmp_path):
    table = AleTable("RGBD", [AleRow(1.0, 0.08, 0.01, 50), AleRow(2.0, 0.11, 0.012, 50),
                              AleRow(3.0, 0.14, 0.02, 50)])
    path = export(ale_table_to_result(table), "csv", tmp_path / "ale.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema_version")
    assert lines[1] == "mode,distance,mean_ale,ci_half_width,samples"
    assert len(lines) == 5
    back = read_table(path)
    assert [r["mean_ale"] for r in back.rows] == [0.08, 0.11, 0.14]


def test_empty_table_exports_header_only(tmp_path):
    path = export(ale_table_to_result(AleTable("RGB")), "csv", tmp_path / "empty.csv")
    assert len(path.read_text().splitlines()) == 2
    assert read_table(path).rows == []


# -- breach evaluation -------------------------------------------------------
@pytest.mark.parametrize("n", [1, 2, 7, 200])
def test_breach_scenes_are_balanced(n):
    dists = breach_scenes(n, np.random.default_rng(0))
    pos = sum(d < 1.5 for d in dists)
    assert len(dists) == n and abs(pos - (n - pos)) <= 1


def test_threshold_distance_is_a_negative():
    dists = breach_scenes(10, np.random.default_rng(0))
    assert 1.5 in dists
    _, table = run_breach_eval({"RGBD": (DetectorProfile.rgbd(**EXACT), None)}, scenes=10)
    at = [r for r in table.rows if r["distance"] == pytest.approx(1.5, abs=1e-12)]
    assert at and all(r["actual"] is False and r["predicted"] is False for r in at)


def test_zero_noise_breach_eval_is_perfect():
    profiles = {"RGBD": (DetectorProfile.rgbd(**EXACT), None),
                "RGB": (None, DetectorProfile.rgb(**EXACT))}
    mats, _ = run_breach_eval(profiles, scenes=40)
    for cm in mats.values():
        assert cm.accuracy == cm.precision == cm.recall == 1.0


def test_noisy_rgbd_breach_eval_in_sanity_band():
    mats, table = run_breach_eval({"RGBD": (DetectorProfile.rgbd(), None)}, scenes=200)
    cm = mats["RGBD"]
    assert 0.5 < cm.accuracy < 1.0
    # the reported matrix recomputes exactly from the per-scene rows
    redo = ConfusionMatrix()
    for r in table.rows:
        redo.add(r["predicted"], r["actual"])
    assert redo == cm


def test_breach_eval_needs_full_window():
    with pytest.raises(InputDomainError):
        run_breach_eval({"RGBD": (DetectorProfile.rgbd(), None)}, scenes=2, frames=10)


# -- navigation ----------------------------------------------------------------
@pytest.fixture(scope="module")
def untrained():
    return SacAgent(SacConfig(hidden=(8,)), np.random.default_rng(0))


@pytest.fixture(scope="module")
def short_eval(untrained):
    return run_nav_eval(untrained, [builtin_scenario("empty_room")], 10, "hybrid",
                        FaultSpec(1.0), seed=0, reward=RewardParams(max_steps=60))


def test_untrained_nav_eval_is_consistent(short_eval):
    stats, table = short_eval
    assert stats.episodes == 10 and len(table.rows) == 10
    assert stats.failure_rate >= 50
    assert stats.collision_rate + stats.lost_rate == pytest.approx(stats.failure_rate)
    for row in table.rows:
        assert set(row) == set(table.columns)
        assert row["outcome"] in {o.value for o in Outcome}
        assert 10 <= row["fault_step"] <= 30


def test_nav_aggregates_recompute_from_rows(short_eval, tmp_path):
    stats, table = short_eval
    assert outcomes_from_table(table).summary() == stats.summary()
    back = read_table(export(table, "json", tmp_path / "nav.json"))
    again = outcomes_from_table(back).summary()
    for key, value in stats.summary().items():
        assert again[key] == pytest.approx(value, rel=1e-5)
    assert json.loads((tmp_path / "nav.json").read_text())["summary"]["episodes"] == 10


def test_modes_face_identical_episodes(untrained):
    sc = [builtin_scenario("empty_room"), builtin_scenario("static_obstacles")]
    _, a = run_nav_eval(untrained, sc, 4, "pure_odom", FaultSpec(1.0), seed=5,
                        reward=RewardParams(max_steps=20))
    _, b = run_nav_eval(untrained, sc, 4, "hybrid", FaultSpec(1.0), seed=5,
                        reward=RewardParams(max_steps=20))
    assert [r["scenario"] for r in a.rows] == [r["scenario"] for r in b.rows]
    assert [r["fault_step"] for r in a.rows] == [r["fault_step"] for r in b.rows]


def test_configuration_pool_repeats_episodes(untrained):
    _, t = run_nav_eval(untrained, [builtin_scenario("empty_room")], 4, "pure_odom", FaultSpec(1.0),
                        reward=RewardParams(max_steps=15), configurations=2)
    rows = t.rows
    assert [r["fault_step"] for r in rows[:2]] == [r["fault_step"] for r in rows[2:]]


def test_fault_spec_draw():
    assert FaultSpec(0.0).draw(np.random.default_rng(0)) is None
    f = FaultSpec(1.0, 5, 5).draw(np.random.default_rng(0))
    assert f.trigger_step == 5
    assert math.hypot(f.jump.dx, f.jump.dy) == pytest.approx(1.0)


def test_nav_eval_rejects_zero_episodes(untrained):
    with pytest.raises(InputDomainError):
        run_nav_eval(untrained, [builtin_scenario("empty_room")], 0)


# -- training wrapper ------------------------------------------------------------
def _train(episodes):
    env = NavEnv([builtin_scenario("empty_room")], RewardParams(max_steps=20))
    agent = SacAgent(SacConfig(hidden=(8,)), np.random.default_rng(1))
    cfg = TrainingConfig(episodes=episodes, seed=2, warmup=10, batch_size=8)
    return run_training_cli(env, agent, cfg, window=25)


def test_training_curve_has_one_point_per_window():
    log, episodes, curve = _train(25)
    assert len(episodes.rows) == 25
    assert len(curve.rows) == 1
    assert curve.rows[0]["window_end"] == 25
    assert curve.rows[0]["mean_return"] == pytest.approx(float(np.mean(log.returns)))


def test_training_tables_are_deterministic(tmp_path):
    a = _train(6)
    b = _train(6)
    pa = export(a[1], "csv", tmp_path / "a.csv")
    pb = export(b[1], "csv", tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()
