import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covy.errors import InputDomainError
from covy.geometry import Pose2D
from covy.perception import (
    CompoundPipeline,
    DetectionObservation,
    DetectorProfile,
    SensorMode,
    SortTracker,
    Track,
    TrackerParams,
    breach_graph,
    detect_breaches,
    emulate_detections,
    hungarian_assign,
    select_mode,
    sort_update,
)
from covy.world import PedestrianAgent, WorldMap

from oracles import brute_force_assignment_cost, brute_force_breaches

ORIGIN = Pose2D(0, 0, 0)


def det(x, y, mode=SensorMode.RGBD):
    return DetectionObservation((x, y), 1.0, 0, mode, None)


class FakeTrack:
    def __init__(self, tid, pos, n=20):
        self.id = tid
        self.history = [np.asarray(pos, float)] * n


# -- detector emulation ------------------------------------------------------
def test_profile_validation():
    with pytest.raises(InputDomainError):
        DetectorProfile.rgbd(max_range=0)
    with pytest.raises(InputDomainError):
        DetectorProfile.rgbd(fov=7.0)
    with pytest.raises(InputDomainError):
        DetectorProfile.rgbd(ale_intercept=0.1, ale_slope=-0.1)


def test_out_of_range_pedestrian_is_not_detected():
    ped = PedestrianAgent(1, (8.0, 0.0))
    assert emulate_detections(None, [ped], ORIGIN, DetectorProfile.rgbd(), np.random.default_rng(0)) == []


def test_zero_noise_detection_is_exact():
    prof = DetectorProfile.rgbd(ale_intercept=0.0, ale_slope=0.0)
    ped = PedestrianAgent(1, (2.0, 0.3))
    (d,) = emulate_detections(None, [ped], ORIGIN, prof, np.random.default_rng(0))
    assert d.position == (2.0, 0.3)
    assert d.mode is SensorMode.RGBD


def test_detection_is_in_robot_frame():
    prof = DetectorProfile.rgbd(ale_intercept=0.0, ale_slope=0.0)
    ped = PedestrianAgent(1, (1.0, 3.0))
    (d,) = emulate_detections(None, [ped], Pose2D(1.0, 1.0, math.pi / 2), prof, np.random.default_rng(0))
    assert d.position == pytest.approx((2.0, 0.0))


def test_outside_fov_and_occluded():
    prof = DetectorProfile.rgbd(ale_intercept=0.0, ale_slope=0.0)
    behind = PedestrianAgent(1, (-2.0, 0.0))
    assert emulate_detections(None, [behind], ORIGIN, prof, np.random.default_rng(0)) == []
    wall = WorldMap((-1, -5, 10, 5), obstacles=[[[1.0, -0.5], [1.2, -0.5], [1.2, 0.5], [1.0, 0.5]]])
    hidden = PedestrianAgent(2, (3.0, 0.0))
    assert emulate_detections(wall, [hidden], ORIGIN, prof, np.random.default_rng(0)) == []
    seen = emulate_detections(wall, [hidden], ORIGIN, DetectorProfile.rgbd(occlusion_enabled=False,
                              ale_intercept=0.0, ale_slope=0.0), np.random.default_rng(0))
    assert len(seen) == 1


def test_noise_calibration_matches_ale():
    prof = DetectorProfile.rgb(ale_intercept=0.0, ale_slope=0.05)
    ped = PedestrianAgent(1, (10.0, 0.0))
    rng = np.random.default_rng(11)
    errs = []
    for _ in range(10_000):
        (d,) = emulate_detections(None, [ped], ORIGIN, prof, rng)
        errs.append(math.hypot(d.position[0] - 10.0, d.position[1]))
    assert np.mean(errs) == pytest.approx(0.5, rel=0.05)


def test_logistic_detect_prob():
    prof = DetectorProfile.rgb(detect_model="logistic", falloff_center=10.0, falloff_width=1.0)
    assert prof.detect_prob(10.0) == pytest.approx(0.5)
    assert prof.detect_prob(25.0) == 0.0
    assert prof.detect_prob(2.0) > 0.99


def test_select_mode():
    assert select_mode([det(1, 0), det(2, 0)]) is SensorMode.RGBD
    assert select_mode([det(1, 0)]) is SensorMode.RGBD
    assert select_mode([]) is SensorMode.RGB


# -- assignment ---------------------------------------------------------------
def test_hungarian_examples():
    assert hungarian_assign([[1, 2], [2, 1]]) == [(0, 0), (1, 1)]
    assert hungarian_assign([[5]]) == [(0, 0)]
    assert hungarian_assign(np.zeros((0, 3))) == []


def test_hungarian_rectangular():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0]])
    pairs = hungarian_assign(cost)
    assert len(pairs) == 2
    assert sum(cost[r, c] for r, c in pairs) == brute_force_assignment_cost(cost)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_hungarian_matches_permutations(n, m, seed):
    cost = np.random.default_rng(seed).integers(0, 10, (n, m)).astype(float)
    pairs = hungarian_assign(cost)
    assert len(pairs) == min(n, m)
    assert len({r for r, _ in pairs}) == len({c for _, c in pairs}) == len(pairs)
    assert sum(cost[r, c] for r, c in pairs) == brute_force_assignment_cost(cost)
    assert hungarian_assign(cost) == pairs


def test_hungarian_rejects_non_finite():
    with pytest.raises(InputDomainError):
        hungarian_assign([[1.0, math.nan]])


# -- tracking -----------------------------------------------------------------
def test_new_tracks_get_sequential_ids():
    tr = SortTracker()
    sort_update(tr, [det(0, 0), det(3, 0)])
    assert [t.id for t in tr.tracks] == [1, 2]


def test_kalman_update_lands_between_prediction_and_measurement():
    p = TrackerParams()
    t = Track(1, (0.0, 0.0), p)
    t.x[2] = 1.0
    t.predict(1.0, p.process_var)
    assert t.position == pytest.approx((1.0, 0.0))
    t.update((1.02, 0.0), 0.01)
    assert 1.0 < t.position[0] < 1.02


def test_tracker_matches_predicted_track():
    tr = SortTracker(TrackerParams())
    sort_update(tr, [det(0.0, 0.0)])
    tr.tracks[0].x[2] = 1.0
    sort_update(tr, [det(1.02, 0.0)])
    assert len(tr.tracks) == 1
    assert 1.0 < tr.tracks[0].position[0] <= 1.02


def test_track_dies_after_max_age():
    p = TrackerParams()
    tr = SortTracker(p)
    sort_update(tr, [det(0, 0)])
    for _ in range(p.max_age + 1):
        sort_update(tr, [])
    assert tr.tracks == []


def test_ids_never_reused_and_covariance_psd():
    tr = SortTracker(TrackerParams(), [DetectorProfile.rgbd()])
    rng = np.random.default_rng(2)
    seen = set()
    for frame in range(60):
        dets = [det(*rng.uniform(0.5, 4, 2)) for _ in range(rng.integers(0, 4))]
        sort_update(tr, dets)
        for t in tr.tracks:
            assert np.allclose(t.P, t.P.T)
            assert np.linalg.eigvalsh(t.P).min() >= -1e-12
            assert t.hits <= frame + 1
        seen |= {t.id for t in tr.tracks}
    assert max(seen) == tr._next_id - 1


def test_gate_rejects_far_detection():
    tr = SortTracker(TrackerParams())
    sort_update(tr, [det(0, 0)])
    sort_update(tr, [det(5, 0)], gate=1.0)
    assert sorted(t.id for t in tr.tracks) == [1, 2]


# -- breaches -----------------------------------------------------------------
def test_breach_single_pair():
    rep = detect_breaches([FakeTrack(1, (0, 0)), FakeTrack(2, (0, 1.0))], 1.5, 20)
    assert rep.breach_pairs == {(1, 2)}
    assert rep.groups == [{1, 2}]
    assert rep.target == pytest.approx((0.0, 0.5))


def test_no_breach_beyond_threshold():
    rep = detect_breaches([FakeTrack(1, (0, 0)), FakeTrack(2, (0, 2.0))], 1.5, 20)
    assert rep.breach_pairs == set() and rep.groups == [] and rep.target is None


def test_exact_threshold_is_not_a_breach():
    rep = detect_breaches([FakeTrack(1, (0, 0)), FakeTrack(2, (1.5, 0.0))], 1.5, 20)
    assert rep.breach_pairs == set()


def test_chain_forms_one_group():
    tracks = [FakeTrack(1, (0, 0)), FakeTrack(2, (0, 1.2)), FakeTrack(3, (0, 2.4))]
    rep = detect_breaches(tracks, 1.5, 20)
    assert rep.breach_pairs == {(1, 2), (2, 3)}
    assert rep.groups == [{1, 2, 3}]
    assert rep.target == pytest.approx((0.0, 1.2))


def test_short_history_tracks_do_not_participate():
    rep = detect_breaches([FakeTrack(1, (0, 0)), FakeTrack(2, (0, 1.0), n=5)], 1.5, 20)
    assert rep.averaged_positions.keys() == {1}


def test_tie_breaks_by_lowest_id():
    pos = {5: (0, 0), 6: (0, 1), 1: (10, 0), 2: (10, 1)}
    _, _, target = breach_graph(pos, 1.5)
    assert target == pytest.approx((10.0, 0.5))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-4, 4), st.floats(-4, 4)), min_size=0, max_size=8))
def test_breach_graph_matches_oracle(points):
    pos = {i + 1: p for i, p in enumerate(points)}
    pairs, groups, target = breach_graph(pos, 1.5)
    o_pairs, o_groups, o_target = brute_force_breaches(pos, 1.5)
    assert pairs == o_pairs
    assert sorted(map(sorted, groups)) == sorted(map(sorted, o_groups))
    assert (target is None) == (o_target is None)
    if target is not None:
        assert target == pytest.approx(o_target)
    # groups partition the ids that appear in pairs
    in_pairs = {k for p in pairs for k in p}
    assert set().union(*groups) == in_pairs if groups else not in_pairs


def test_report_record_is_plain_data():
    rep = detect_breaches([FakeTrack(1, (0, 0)), FakeTrack(2, (0, 1.0))], 1.5, 20, frame=7)
    rec = rep.to_record()
    assert rec["frame"] == 7 and rec["pairs"] == [[1, 2]] and rec["target"] == [0.0, 0.5]


# -- compound pipeline --------------------------------------------------------
def test_compound_falls_back_to_rgb():
    exact = dict(ale_intercept=0.0, ale_slope=0.0)
    pipe = CompoundPipeline(DetectorProfile.rgbd(**exact), DetectorProfile.rgb(**exact))
    far = [PedestrianAgent(1, (10.0, 0.0)), PedestrianAgent(2, (10.0, 1.0))]
    rng = np.random.default_rng(0)
    for _ in range(20):
        _, report = pipe.step(None, far, ORIGIN, rng)
        assert pipe.last_mode is SensorMode.RGB
    assert report.breach_pairs == {(1, 2)}
    near = [PedestrianAgent(1, (2.0, 0.0))]
    pipe.step(None, near, ORIGIN, rng)
    assert pipe.last_mode is SensorMode.RGBD


def test_compound_pipeline_is_seeded():
    peds = [PedestrianAgent(1, (3.0, 0.0)), PedestrianAgent(2, (3.0, 1.2))]
    out = []
    for _ in range(2):
        pipe = CompoundPipeline(DetectorProfile.rgbd(), DetectorProfile.rgb())
        rng = np.random.default_rng(9)
        for _ in range(25):
            _, rep = pipe.step(None, peds, ORIGIN, rng)
        out.append(rep.to_record())
    assert out[0] == out[1]
