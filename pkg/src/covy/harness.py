"""Evaluation protocols: ALE sweep, breach classification, navigation, training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .drl.env import NavEnv, RewardParams, sample_start_goal
from .drl.training import TrainingConfig, run_training, smooth_returns
from .errors import InputDomainError
from .geometry import Pose2D
from .hybrid import EpisodeOutcome, HybridConfig, Outcome, run_episode
from .localization import AmclParams, DistanceField, FaultConfig, PoseDelta
from .perception import (
    CompoundPipeline,
    DetectorProfile,
    TrackerParams,
    emulate_detections,
)
from .records import ResultTable
from .world import LidarConfig, PedestrianAgent, Scenario


# -- metrics --------------------------------------------------------------
@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InputDomainError("confusion counts must be >= 0")

    def add(self, predicted: bool, actual: bool):
        if predicted and actual:
            self.tp += 1
        elif predicted:
            self.fp += 1
        elif actual:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @staticmethod
    def _ratio(num, den) -> Optional[float]:
        return num / den if den else None

    @property
    def accuracy(self):
        return self._ratio(self.tp + self.tn, self.total)

    @property
    def precision(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return self._ratio(self.tp, self.tp + self.fn)

    def to_record(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall}


@dataclass
class NavStats:
    """Aggregate of per-episode outcomes.

    ``average_speed`` is the mean of path_length / elapsed over episodes that
    reached the goal, i.e. it is derived from the time to goal.  The mean
    over every episode is kept alongside as ``average_speed_all``.
    """

    records: list = field(default_factory=list)       # EpisodeOutcome per episode

    @property
    def episodes(self) -> int:
        return len(self.records)

    def count(self, outcome: Outcome) -> int:
        return sum(1 for r in self.records if r.outcome is outcome)

    def _pct(self, n) -> Optional[float]:
        return 100.0 * n / self.episodes if self.episodes else None

    @property
    def collision_rate(self):
        return self._pct(self.count(Outcome.COLLISION))

    @property
    def lost_rate(self):
        return self._pct(self.count(Outcome.LOST))

    @property
    def failure_rate(self):
        return self._pct(self.count(Outcome.COLLISION) + self.count(Outcome.LOST))

    @property
    def success_rate(self):
        return self._pct(self.count(Outcome.SUCCESS))

    @staticmethod
    def _mean_speed(recs) -> Optional[float]:
        speeds = [r.average_speed for r in recs if r.average_speed is not None]
        return float(np.mean(speeds)) if speeds else None

    @property
    def average_speed(self):
        return self._mean_speed([r for r in self.records if r.outcome is Outcome.SUCCESS])

    @property
    def average_speed_all(self):
        return self._mean_speed(self.records)

    def summary(self) -> dict:
        return {"episodes": self.episodes, "success": self.count(Outcome.SUCCESS),
                "collision": self.count(Outcome.COLLISION), "lost": self.count(Outcome.LOST),
                "failure_rate": self.failure_rate, "collision_rate": self.collision_rate,
                "lost_rate": self.lost_rate, "success_rate": self.success_rate,
                "average_speed": self.average_speed, "average_speed_all": self.average_speed_all}


@dataclass
class AleRow:
    distance: float
    mean_ale: float
    ci_half_width: float
    samples: int


@dataclass
class AleTable:
    mode: str
    rows: list = field(default_factory=list)
    ci_level: float = 0.95

    @property
    def distances(self):
        return [r.distance for r in self.rows]


# -- vision protocols -----------------------------------------------------
def run_localization_sweep(profile: DetectorProfile, repeats: int = 50, step: float = 1.0,
                           seed: int = 0, ci_level: float = 0.95,
                           max_stations: int = 1000, attempts_per_sample: int = 20) -> AleTable:
    """Move one pedestrian away along the sensor axis in ``step`` increments.

    At each station ``repeats`` detections are collected and the mean radial
    error reported; the sweep ends at the first station where nothing is
    detected.
    """
    if repeats < 1 or not step > 0:
        raise InputDomainError("repeats must be >= 1 and step > 0")
    rng = np.random.default_rng(seed)
    z = float(stats.norm.ppf(0.5 + ci_level / 2.0))
    table = AleTable(profile.mode.value, ci_level=ci_level)
    origin = Pose2D(0.0, 0.0, 0.0)
    for k in range(1, max_stations + 1):
        d = k * step
        ped = PedestrianAgent(id=1, position=(d, 0.0))
        errors = []
        for _ in range(repeats * attempts_per_sample):
            dets = emulate_detections(None, [ped], origin, profile, rng, frame=len(errors))
            if dets:
                p = dets[0].position
                errors.append(math.hypot(p[0] - d, p[1]))
                if len(errors) == repeats:
                    break
        if len(errors) < repeats:
            break
        e = np.asarray(errors)
        half = z * float(e.std(ddof=1)) / math.sqrt(len(e)) if len(e) > 1 else 0.0
        table.rows.append(AleRow(d, float(e.mean()), half, len(e)))
    return table


def _sample_pair(rng, profile: DetectorProfile, pair_dist: float, near: float, margin: float):
    """Two points inside the profile's field-of-view annulus, ``pair_dist`` apart."""
    far = profile.max_range - margin
    half = profile.fov / 2.0 - math.radians(2.0)
    for _ in range(10_000):
        r = math.sqrt(rng.uniform(near ** 2, far ** 2))
        a = rng.uniform(-half, half)
        p = np.array([r * math.cos(a), r * math.sin(a)])
        b = rng.uniform(-math.pi, math.pi)
        q = p + pair_dist * np.array([math.cos(b), math.sin(b)])
        rq = math.hypot(q[0], q[1])
        if near <= rq <= far and abs(math.atan2(q[1], q[0])) <= half:
            return p, q
    raise InputDomainError("could not place a pedestrian pair inside the field of view")


def breach_scenes(n: int, rng: np.random.Generator, threshold: float = 1.5,
                  min_gap: float = 0.6, max_gap: float = 3.0):
    """Balanced (label, distance) list: alternating positives and negatives.

    Positive distances are stratified over [min_gap, threshold), negatives
    over [threshold, max_gap]; the first negative sits exactly on the
    threshold.
    """
    n_pos = (n + 1) // 2
    n_neg = n - n_pos
    pos = [min_gap + (threshold - min_gap) * (i + rng.random()) / n_pos for i in range(n_pos)]
    neg = [threshold + (max_gap - threshold) * (i + (rng.random() if i else 0.0)) / max(n_neg, 1)
           for i in range(n_neg)]
    rng.shuffle(pos)
    rng.shuffle(neg)
    out = []
    for i in range(n):
        if i % 2 == 0 and pos:
            out.append(pos.pop())
        elif neg:
            out.append(neg.pop())
        else:
            out.append(pos.pop())
    return out


def run_breach_eval(profiles: dict, scenes: int = 200, frames: int = 25, seed: int = 0,
                    threshold: float = 1.5, tracker: Optional[TrackerParams] = None,
                    near: float = 0.5, margin: float = 0.3):
    """Classify two-pedestrian scenes as breach / no breach per sensor mode.

    ``profiles`` maps a mode name to a ``(rgbd, rgb)`` pair for
    :class:`CompoundPipeline` (either may be None).  Scenes are placed inside
    the field of view of the first non-None profile.  Returns
    ``({mode: ConfusionMatrix}, ResultTable of per-scene rows)``.
    """
    tracker = tracker or TrackerParams()
    if frames < tracker.window:
        raise InputDomainError(f"need at least {tracker.window} frames per scene")
    table = ResultTable("breach_scenes", ["mode", "scene", "distance", "actual", "predicted"])
    matrices = {}
    for mode, (rgbd, rgb) in profiles.items():
        rng = np.random.default_rng([seed, _stable_hash(mode)])
        place = rgbd if rgbd is not None else rgb
        cm = ConfusionMatrix()
        for i, dist in enumerate(breach_scenes(scenes, rng, threshold)):
            p, q = _sample_pair(rng, place, dist, near, margin)
            dist = float(np.hypot(*(p - q)))
            peds = [PedestrianAgent(id=1, position=tuple(p)), PedestrianAgent(id=2, position=tuple(q))]
            pipe = CompoundPipeline(rgbd, rgb, tracker, threshold)
            report = None
            for _ in range(frames):
                _, report = pipe.step(None, peds, Pose2D(0.0, 0.0, 0.0), rng)
            actual = dist < threshold
            predicted = bool(report.breach_pairs)
            cm.add(predicted, actual)
            table.add(mode=mode, scene=i, distance=dist, actual=actual, predicted=predicted)
        matrices[mode] = cm
        table.summary[mode] = cm.to_record()
    return matrices, table


def _stable_hash(text: str) -> int:
    return int.from_bytes(text.encode()[:8].ljust(8, b"\0"), "little")


# -- navigation -----------------------------------------------------------
@dataclass(frozen=True)
class FaultSpec:
    """Per-episode odometry jump of fixed size in a random direction."""

    magnitude: float = 0.0
    trigger_min: int = 10
    trigger_max: int = 30

    def draw(self, rng: np.random.Generator) -> Optional[FaultConfig]:
        if self.magnitude <= 0:
            return None
        ang = rng.uniform(-math.pi, math.pi)
        step = int(rng.integers(self.trigger_min, self.trigger_max + 1))
        jump = PoseDelta(self.magnitude * math.cos(ang), self.magnitude * math.sin(ang), 0.0)
        return FaultConfig(step, jump)


def run_nav_eval(agent, scenarios: Sequence[Scenario], episodes: int, mode: str = "hybrid",
                 fault: FaultSpec = FaultSpec(), seed: int = 0,
                 hybrid: Optional[HybridConfig] = None, amcl: AmclParams = AmclParams(),
                 reward: RewardParams = RewardParams(), lidar: Optional[LidarConfig] = None,
                 clearance: float = 0.4, min_goal_dist: float = 1.0, max_goal_dist: float = 3.0,
                 configurations: Optional[int] = None):
    """Seeded episodes through the hybrid controller; returns (NavStats, ResultTable).

    Episode ``i`` draws its scenario, start, goal and fault from a stream
    keyed on (seed, i) only, so different modes face identical episodes.
    With ``configurations=k`` the episodes cycle over a pool of ``k`` such
    draws instead (episode ``i`` reuses configuration ``i % k``).
    """
    if episodes < 1:
        raise InputDomainError("episodes must be >= 1")
    if configurations is not None and configurations < 1:
        raise InputDomainError("configurations must be >= 1")
    cfg = hybrid or HybridConfig(mode=mode)
    if cfg.mode != mode:
        cfg = replace(cfg, mode=mode)
    fields = {}
    stats_ = NavStats()
    table = ResultTable("nav_episodes", ["episode", "scenario", "mode", "outcome", "steps",
                                         "path_length", "elapsed", "average_speed",
                                         "reinit_events", "fault_step"])
    for ep in range(episodes):
        cid = ep if configurations is None else ep % configurations
        ep_rng = np.random.default_rng([seed, cid, 0])
        sc = scenarios[int(ep_rng.integers(len(scenarios)))]
        start, goal = sample_start_goal(sc.map, ep_rng, clearance, min_goal_dist, max_goal_dist,
                                        sc.pedestrians)
        fcfg = fault.draw(ep_rng)
        if sc.name not in fields and mode == "hybrid":
            fields[sc.name] = DistanceField(sc.map)
        trace, out = run_episode(agent, sc, start, goal, cfg, np.random.default_rng([seed, ep, 1]),
                                 fcfg, amcl, lidar, reward, fields.get(sc.name),
                                 sensor_rng=np.random.default_rng([seed, ep, 2]))
        stats_.records.append(out)
        table.add(episode=ep, scenario=sc.name, mode=mode, outcome=out.outcome.value,
                  steps=out.steps, path_length=out.path_length, elapsed=out.elapsed,
                  average_speed=out.average_speed, reinit_events=len(trace.reinit_steps),
                  fault_step=fcfg.trigger_step if fcfg else None)
    table.summary = stats_.summary()
    return stats_, table


def outcomes_from_table(table: ResultTable) -> NavStats:
    """Rebuild NavStats from exported per-episode rows (for auditing)."""
    recs = []
    for r in table.rows:
        recs.append(EpisodeOutcome(Outcome(r["outcome"]), int(r["steps"]),
                                   float(r["path_length"]), float(r["elapsed"])))
    return NavStats(recs)


def run_training_cli(env: NavEnv, agent, config: TrainingConfig, window: int = 25):
    """Train and return (TrainingLog, per-episode table, smoothed-curve table)."""
    log = run_training(env, agent, config)
    episodes = ResultTable("training_episodes", ["episode", "return", "outcome", "steps"],
                           log.data_rows())
    curve = ResultTable("training_curve", ["window_end", "mean_return"])
    for i, m in enumerate(smooth_returns(log.returns, window)):
        curve.add(window_end=(i + 1) * window, mean_return=float(m))
    return log, episodes, curve


def ale_table_to_result(table: AleTable) -> ResultTable:
    out = ResultTable("ale_sweep", ["mode", "distance", "mean_ale", "ci_half_width", "samples"])
    for r in table.rows:
        out.add(mode=table.mode, distance=r.distance, mean_ale=r.mean_ale,
                ci_half_width=r.ci_half_width, samples=r.samples)
    out.summary = {"ci_level": table.ci_level}
    return out
