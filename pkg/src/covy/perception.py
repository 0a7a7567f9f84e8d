"""Compound breach detection: emulated detectors, SORT tracking, breach groups.

The two detector profiles stand in for the short-range depth pipeline and the
long-range monocular pipeline.  A frame is scanned with the depth profile
first; only when it sees nobody does the monocular profile take over.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputDomainError
from .geometry import Pose2D, ray_segment_distances

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


class SensorMode(str, enum.Enum):
    RGBD = "RGBD"
    RGB = "RGB"


@dataclass(frozen=True)
class DetectorProfile:
    """Range, field of view and linear localization-error model of one detector.

    The average localization error at distance ``d`` is ``ale_intercept +
    ale_slope * d``.  ``detect_model`` is ``"step"`` (certain detection inside
    ``max_range``) or ``"logistic"`` (falloff centred on ``falloff_center``).
    """

    mode: SensorMode
    max_range: float
    fov: float
    ale_intercept: float = 0.0
    ale_slope: float = 0.0
    detect_model: str = "step"
    falloff_center: float = 0.0
    falloff_width: float = 1.0
    occlusion_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", SensorMode(self.mode))
        if not self.max_range > 0:
            raise InputDomainError("max_range must be positive")
        if not 0 < self.fov <= 2 * math.pi:
            raise InputDomainError("fov must lie in (0, 2*pi]")
        if self.ale_intercept < 0:
            raise InputDomainError("ale_intercept must be >= 0")
        if self.ale(self.max_range) < 0:
            raise InputDomainError("ale must stay non-negative over [0, max_range]")
        if self.detect_model not in ("step", "logistic"):
            raise InputDomainError(f"unknown detect_model {self.detect_model!r}")

    def ale(self, d):
        return self.ale_intercept + self.ale_slope * np.asarray(d, dtype=float)

    def noise_sigma(self, d):
        """Per-axis std of the isotropic noise whose mean radial error is ale(d)."""
        return self.ale(d) / SQRT_HALF_PI

    def detect_prob(self, d):
        d = np.asarray(d, dtype=float)
        inside = d <= self.max_range
        if self.detect_model == "step":
            return inside.astype(float)
        z = (d - self.falloff_center) / self.falloff_width
        return np.where(inside, 1.0 / (1.0 + np.exp(z)), 0.0)

    def sees(self, local_xy) -> bool:
        x, y = float(local_xy[0]), float(local_xy[1])
        d = math.hypot(x, y)
        return d <= self.max_range and abs(math.atan2(y, x)) <= self.fov / 2

    @classmethod
    def rgbd(cls, **kw) -> "DetectorProfile":
        base = dict(mode=SensorMode.RGBD, max_range=6.0, fov=math.radians(87),
                    ale_intercept=0.05, ale_slope=0.03)
        base.update(kw)
        return cls(**base)

    @classmethod
    def rgb(cls, **kw) -> "DetectorProfile":
        base = dict(mode=SensorMode.RGB, max_range=20.0, fov=math.radians(70),
                    ale_intercept=0.20, ale_slope=0.06)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class DetectionObservation:
    position: tuple          # robot frame
    confidence: float
    frame: int
    mode: SensorMode
    true_id: Optional[int] = None   # ground-truth pedestrian, for evaluation only


def emulate_detections(world_map, pedestrians, robot_pose: Pose2D, profile: DetectorProfile,
                       rng: np.random.Generator, frame: int = 0):
    """Noisy robot-frame detections of every visible pedestrian.

    Visibility is decided on the true position (range, field of view, obstacle
    occlusion); the reported position then carries isotropic Gaussian noise.
    """
    out = []
    if world_map is not None:
        seg_a, seg_b = world_map.obstacle_segments
    else:
        seg_a = seg_b = np.zeros((0, 2))
    for ped in pedestrians:
        local = robot_pose.to_local(np.asarray(ped.position, dtype=float))
        d = float(np.hypot(local[0], local[1]))
        if not profile.sees(local):
            continue
        if profile.occlusion_enabled and len(seg_a) and d > 0:
            direction = (np.asarray(ped.position) - robot_pose.xy) / d
            hit = ray_segment_distances(robot_pose.xy, direction[None, :], seg_a, seg_b)[0]
            if hit < d:
                continue
        p = float(profile.detect_prob(d))
        if p < 1.0 and rng.random() >= p:
            continue
        sigma = float(profile.noise_sigma(d))
        noise = rng.normal(0.0, sigma, 2) if sigma > 0 else np.zeros(2)
        pos = local + noise
        out.append(DetectionObservation((float(pos[0]), float(pos[1])), p, frame,
                                        profile.mode, ped.id))
    return out


def select_mode(rgbd_detections) -> SensorMode:
    return SensorMode.RGBD if len(rgbd_detections) > 0 else SensorMode.RGB


def hungarian_assign(cost):
    """Minimum-cost assignment of min(n, m) (row, col) pairs, sorted by row."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise InputDomainError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


@dataclass
class TrackerParams:
    gate: float = 1.0
    gate_sigmas: float = 3.0
    max_age: int = 3
    min_hits: int = 3
    window: int = 20
    dt: float = 1.0
    init_pos_var: float = 0.1
    init_vel_var: float = 1.0
    process_var: float = 0.01
    meas_scale: float = 1.0
    meas_var_floor: float = 1e-6


class Track:
    """Constant-velocity Kalman track over (x, y, vx, vy)."""

    def __init__(self, track_id: int, xy, params: TrackerParams):
        self.id = track_id
        self.x = np.array([xy[0], xy[1], 0.0, 0.0], dtype=float)
        self.P = np.diag([params.init_pos_var, params.init_pos_var,
                          params.init_vel_var, params.init_vel_var])
        self.hits = 1
        self.hit_streak = 1
        self.age = 0
        self.history = deque([self.x[:2].copy()], maxlen=params.window)

    @property
    def position(self) -> np.ndarray:
        return self.x[:2].copy()

    def predict(self, dt: float, process_var: float):
        F = np.eye(4)
        F[0, 2] = F[1, 3] = dt
        self.x = F @ self.x
        self.P = F @ self.P @ F.T + process_var * np.eye(4)
        self.P = 0.5 * (self.P + self.P.T)
        self.age += 1
        if self.age > 1:
            self.hit_streak = 0

    def update(self, z, meas_var: float):
        H = np.zeros((2, 4))
        H[0, 0] = H[1, 1] = 1.0
        S = H @ self.P @ H.T + meas_var * np.eye(2)
        K = self.P @ H.T @ np.linalg.inv(S)
        self.x = self.x + K @ (np.asarray(z, dtype=float) - H @ self.x)
        # Joseph form keeps P symmetric PSD
        IKH = np.eye(4) - K @ H
        self.P = IKH @ self.P @ IKH.T + meas_var * K @ K.T
        self.P = 0.5 * (self.P + self.P.T)
        self.hits += 1
        self.hit_streak += 1
        self.age = 0
        self.history.append(self.x[:2].copy())


class SortTracker:
    """SORT-style tracker on ground-plane positions."""

    def __init__(self, params: Optional[TrackerParams] = None, profiles=None):
        self.params = params or TrackerParams()
        self.profiles = {p.mode: p for p in (profiles or ())}
        self.tracks: list[Track] = []
        self.frame_count = 0
        self._next_id = 1

    def _meas_var(self, det: DetectionObservation) -> float:
        prof = self.profiles.get(det.mode)
        if prof is None:
            return self.params.meas_var_floor
        d = math.hypot(*det.position)
        var = (self.params.meas_scale * float(prof.ale(d))) ** 2
        return max(var, self.params.meas_var_floor)

    def update(self, detections):
        """Advance one frame; returns the tracks that are currently reported."""
        p = self.params
        self.frame_count += 1
        for t in self.tracks:
            t.predict(p.dt, p.process_var)
        matched_tracks, matched_dets = set(), set()
        if self.tracks and detections:
            pred = np.array([t.x[:2] for t in self.tracks])
            obs = np.array([d.position for d in detections])
            cost = np.linalg.norm(pred[:, None, :] - obs[None, :, :], axis=2)
            mvar = [self._meas_var(d) for d in detections]
            for r, c in hungarian_assign(cost):
                # the gate widens with the innovation spread so noisy far tracks survive
                P = self.tracks[r].P
                spread = math.sqrt(0.5 * (P[0, 0] + P[1, 1]) + mvar[c])
                if cost[r, c] > max(p.gate, p.gate_sigmas * spread):
                    continue
                self.tracks[r].update(obs[c], mvar[c])
                matched_tracks.add(r)
                matched_dets.add(c)
        for j, det in enumerate(detections):
            if j not in matched_dets:
                self.tracks.append(Track(self._next_id, det.position, p))
                self._next_id += 1
        self.tracks = [t for t in self.tracks if t.age <= p.max_age]
        return self.reported()

    def reported(self):
        p = self.params
        return [t for t in self.tracks
                if t.age == 0 and (t.hit_streak >= p.min_hits or self.frame_count <= p.min_hits)]


def sort_update(tracker: SortTracker, detections, gate: Optional[float] = None):
    if gate is not None:
        tracker.params.gate = gate
    return tracker.update(detections)


@dataclass
class BreachReport:
    frame: int
    averaged_positions: dict
    breach_pairs: set
    groups: list
    target: Optional[tuple]

    def to_record(self) -> dict:
        return {
            "frame": self.frame,
            "ids": sorted(self.averaged_positions),
            "positions": {str(k): list(v) for k, v in sorted(self.averaged_positions.items())},
            "pairs": sorted([list(p) for p in self.breach_pairs]),
            "groups": [sorted(g) for g in self.groups],
            "target": list(self.target) if self.target is not None else None,
        }


def breach_graph(positions: dict, threshold: float):
    """Breach pairs, connected components and largest-group centroid."""
    ids = sorted(positions)
    pairs = set()
    for i, j in itertools.combinations(ids, 2):
        pi, pj = positions[i], positions[j]
        if math.hypot(pi[0] - pj[0], pi[1] - pj[1]) < threshold:
            pairs.add((i, j))
    adj = {i: set() for i in ids}
    for i, j in pairs:
        adj[i].add(j)
        adj[j].add(i)
    groups, seen = [], set()
    for i in ids:
        if i in seen or not adj[i]:
            continue
        comp, stack = set(), [i]
        while stack:
            k = stack.pop()
            if k in comp:
                continue
            comp.add(k)
            stack.extend(adj[k] - comp)
        seen |= comp
        groups.append(comp)
    target = None
    if groups:
        best = max(groups, key=lambda g: (len(g), -min(g)))
        pts = np.array([positions[k] for k in sorted(best)], dtype=float)
        c = pts.mean(axis=0)
        target = (float(c[0]), float(c[1]))
    return pairs, groups, target


def detect_breaches(tracks, threshold: float = 1.5, window: int = 20, frame: int = 0) -> BreachReport:
    """Average each track's last ``window`` positions and flag close pairs."""
    if not threshold > 0:
        raise InputDomainError("threshold must be positive")
    if window < 1:
        raise InputDomainError("window must be >= 1")
    positions = {}
    for t in tracks:
        hist = list(t.history)
        if len(hist) < window:
            continue
        h = np.asarray(hist[-window:])
        # offsets from the oldest sample, so a constant history averages to itself exactly
        m = h[0] + np.mean(h - h[0], axis=0)
        positions[t.id] = (float(m[0]), float(m[1]))
    pairs, groups, target = breach_graph(positions, threshold)
    return BreachReport(frame, positions, pairs, groups, target)


class CompoundPipeline:
    """Depth-first, monocular-fallback detection feeding one SORT tracker.

    Pass ``rgb=None`` for a depth-only pipeline.
    """

    def __init__(self, rgbd: Optional[DetectorProfile], rgb: Optional[DetectorProfile],
                 tracker_params: Optional[TrackerParams] = None, threshold: float = 1.5):
        self.rgbd = rgbd
        self.rgb = rgb
        self.threshold = threshold
        profiles = [p for p in (rgbd, rgb) if p is not None]
        self.tracker = SortTracker(tracker_params or TrackerParams(), profiles)
        self.frame = 0
        self.last_mode: Optional[SensorMode] = None
        self.last_detections = []

    def step(self, world_map, pedestrians, robot_pose: Pose2D, rng: np.random.Generator):
        dets = []
        mode = None
        if self.rgbd is not None:
            dets = emulate_detections(world_map, pedestrians, robot_pose, self.rgbd, rng, self.frame)
            mode = select_mode(dets)
        if self.rgb is not None and (self.rgbd is None or mode is SensorMode.RGB):
            dets = emulate_detections(world_map, pedestrians, robot_pose, self.rgb, rng, self.frame)
            mode = SensorMode.RGB
        self.last_mode = mode
        self.last_detections = dets
        tracks = self.tracker.update(dets)
        report = detect_breaches(self.tracker.tracks, self.threshold,
                                 self.tracker.params.window, self.frame)
        self.frame += 1
        return tracks, report
