"""Policy-driven navigation on lidar odometry with periodic AMCL cross-checks."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .drl.env import RewardParams, build_state, clip_action, compute_reward
from .drl.training import policy_action
from .errors import DegenerateScanError, InputDomainError
from .geometry import Pose2D, wrap_angle
from .localization import (
    AmclParams,
    DistanceField,
    FaultConfig,
    PoseDelta,
    amcl_update,
    estimate_pose,
    gaussian_particles,
    inject_fault,
    integrate_odometry,
    scan_match,
)
from .perception import BreachReport
from .world import (
    LidarConfig,
    RobotState,
    Scenario,
    cast_lidar,
    check_collision,
    step_pedestrians,
    step_robot,
)

MODES = ("pure_odom", "hybrid")


@dataclass(frozen=True)
class HybridConfig:
    """Divergence-check schedule and thresholds.

    ``amcl_motion`` picks the motion input of the particle filter:
    ``"command"`` integrates the last issued velocity command (a wheel
    odometry stand-in, independent of the scan-matching odometry), while
    ``"odometry"`` reuses the scan-matched delta, faults included.
    """

    check_interval: int = 20
    pos_threshold: float = 0.3
    heading_threshold: float = math.radians(15.0)
    mode: str = "hybrid"
    amcl_motion: str = "command"

    def __post_init__(self):
        if self.check_interval < 1:
            raise InputDomainError("check_interval must be >= 1")
        if not (self.pos_threshold > 0 and self.heading_threshold > 0):
            raise InputDomainError("divergence thresholds must be positive")
        if self.mode not in MODES:
            raise InputDomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.amcl_motion not in ("command", "odometry"):
            raise InputDomainError(f"amcl_motion must be 'command' or 'odometry', got {self.amcl_motion!r}")


def pose_divergence(odom: Pose2D, amcl: Pose2D):
    """(position gap in meters, absolute wrapped heading gap in radians)."""
    d_pos = math.hypot(odom.x - amcl.x, odom.y - amcl.y)
    d_theta = abs(wrap_angle(odom.theta - amcl.theta))
    return d_pos, d_theta


def arc_delta(v: float, w: float, dt: float) -> PoseDelta:
    """Body-frame displacement of a unicycle holding (v, w) for ``dt``."""
    if abs(w) < 1e-9:
        return PoseDelta(v * dt, 0.0, 0.0)
    r = v / w
    th = w * dt
    return PoseDelta(r * math.sin(th), r * (1.0 - math.cos(th)), th)


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    LOST = "lost"


@dataclass(frozen=True)
class EpisodeOutcome:
    outcome: Outcome
    steps: int
    path_length: float
    elapsed: float

    @property
    def average_speed(self) -> Optional[float]:
        return self.path_length / self.elapsed if self.elapsed > 0 else None


@dataclass
class TraceStep:
    step: int
    true_pose: Pose2D
    believed_pose: Pose2D
    amcl_pose: Optional[Pose2D]
    action: tuple
    reward: float
    reinit: bool
    goal_dist: float          # true distance after the action
    collided: bool

    def to_record(self) -> dict:
        def p(q):
            return None if q is None else [q.x, q.y, q.theta]
        return {"step": self.step, "true_pose": p(self.true_pose),
                "believed_pose": p(self.believed_pose), "amcl_pose": p(self.amcl_pose),
                "action": list(self.action), "reward": self.reward, "reinit": self.reinit,
                "goal_dist": self.goal_dist, "collided": self.collided}


@dataclass
class EpisodeTrace:
    goal: tuple
    start: Pose2D
    dt: float
    goal_radius: float
    max_steps: int
    steps: list = field(default_factory=list)
    aborted: Optional[str] = None     # reason for a localization abort

    @property
    def reinit_steps(self):
        return [s.step for s in self.steps if s.reinit]


def classify_episode(trace: EpisodeTrace) -> EpisodeOutcome:
    """Success, collision or lost, decided by whichever happens first."""
    path = 0.0
    prev = trace.start
    outcome = Outcome.LOST
    n = 0
    for s in trace.steps:
        n += 1
        path += math.hypot(s.true_pose.x - prev.x, s.true_pose.y - prev.y)
        prev = s.true_pose
        if s.goal_dist < trace.goal_radius:
            outcome = Outcome.SUCCESS
            break
        if s.collided:
            outcome = Outcome.COLLISION
            break
    return EpisodeOutcome(outcome, n, path, n * trace.dt)


class HybridController:
    """Believed pose from scan matching, optionally corrected by AMCL.

    ``tick`` takes the current full scan and returns the command to issue.
    The AMCL filter runs every tick in hybrid mode; its mean is compared with
    the odometry pose on steps that are multiples of ``check_interval``.
    """

    def __init__(self, agent, scenario: Scenario, config: HybridConfig = HybridConfig(),
                 amcl_params: AmclParams = AmclParams(), fault: Optional[FaultConfig] = None,
                 rng: Optional[np.random.Generator] = None, distance_field: Optional[DistanceField] = None,
                 init_spread: float = 0.05, icp_kwargs: Optional[dict] = None, explore: bool = False):
        self.agent = agent
        self.scenario = scenario
        self.config = config
        self.amcl_params = amcl_params
        self.fault = fault
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.df = distance_field
        if config.mode == "hybrid" and self.df is None:
            self.df = DistanceField(scenario.map)
        self.init_spread = init_spread
        self.icp_kwargs = dict(max_iter=15, tol=1e-5)
        self.icp_kwargs.update(icp_kwargs or {})
        self.explore = explore
        self.goal = None

    def reset(self, start: Pose2D, goal):
        self.believed = start
        self.goal = (float(goal[0]), float(goal[1]))
        self.prev_scan = None
        self.last_cmd = (0.0, 0.0)
        self.particles = None
        self.amcl_pose = None
        self.reinit_events = []
        if self.config.mode == "hybrid":
            self.particles = gaussian_particles(start, self.amcl_params.count, self.rng,
                                                self.init_spread, self.init_spread, self.scenario.map)
            self.amcl_pose = start

    def set_target(self, target) -> bool:
        """Adopt a robot-frame point or a breach report's target as the goal.

        Returns False (and leaves the goal untouched) for a report that has
        no target.
        """
        if isinstance(target, BreachReport):
            if target.target is None:
                return False
            target = target.target
        world = self.believed.to_world(np.asarray(target, dtype=float))
        self.goal = (float(world[0]), float(world[1]))
        return True

    def tick(self, scan, step: int):
        """Returns (action, reinit_flag)."""
        if self.prev_scan is not None:
            guess = arc_delta(self.last_cmd[0], self.last_cmd[1], self.scenario.dt)
            delta = scan_match(self.prev_scan, scan, init=guess, **self.icp_kwargs)
            delta = inject_fault(delta, self.fault, step)
            self.believed = integrate_odometry(self.believed, delta)
            if self.particles is not None:
                motion = guess if self.config.amcl_motion == "command" else delta
                self.particles = amcl_update(self.particles, motion, scan, self.scenario.map,
                                             self.df, self.amcl_params, self.rng)
                self.amcl_pose = estimate_pose(self.particles)[0]
        self.prev_scan = scan
        reinit = False
        cfg = self.config
        if cfg.mode == "hybrid" and step % cfg.check_interval == 0:
            d_pos, d_th = pose_divergence(self.believed, self.amcl_pose)
            if d_pos > cfg.pos_threshold or d_th > cfg.heading_threshold:
                self.believed = self.amcl_pose
                self.reinit_events.append(step)
                reinit = True
        robot = RobotState(self.believed, self.last_cmd[0], self.last_cmd[1])
        state = build_state(scan, robot, self.goal)
        action = clip_action(policy_action(self.agent, state, self.rng, explore=self.explore))
        self.last_cmd = (float(action[0]), float(action[1]))
        return action, reinit


def run_episode(agent, scenario: Scenario, start: Pose2D, goal, config: HybridConfig,
                rng: np.random.Generator, fault: Optional[FaultConfig] = None,
                amcl_params: AmclParams = AmclParams(), lidar: Optional[LidarConfig] = None,
                reward: RewardParams = RewardParams(), distance_field=None,
                sensor_rng: Optional[np.random.Generator] = None):
    """Roll out one episode; returns (EpisodeTrace, EpisodeOutcome).

    ``rng`` drives the controller (AMCL and any exploration); ``sensor_rng``
    drives lidar noise, so both modes can see identical scans.
    """
    lidar = lidar or LidarConfig(noise_sigma=0.01)
    sensor_rng = sensor_rng if sensor_rng is not None else rng
    ctl = HybridController(agent, scenario, config, amcl_params, fault, rng, distance_field)
    ctl.reset(start, goal)
    robot = RobotState(start, radius=scenario.robot_radius)
    peds = list(scenario.pedestrians)
    trace = EpisodeTrace(ctl.goal, start, scenario.dt, reward.goal_radius, reward.max_steps)
    for step in range(reward.max_steps):
        scan = cast_lidar(scenario.map, peds, robot.pose, lidar, sensor_rng, step)
        try:
            action, reinit = ctl.tick(scan, step)
        except DegenerateScanError as exc:
            trace.aborted = str(exc)
            break
        prev_dist = math.hypot(ctl.goal[0] - robot.pose.x, ctl.goal[1] - robot.pose.y)
        robot = step_robot(robot, action, scenario.dt)
        peds = step_pedestrians(peds, scenario.dt)
        pose = robot.pose
        dist = math.hypot(ctl.goal[0] - pose.x, ctl.goal[1] - pose.y)
        collided = check_collision(scenario.map, peds, pose, robot.radius)
        r = reward.r_collision if collided else 0.0
        if not collided:
            next_scan = cast_lidar(scenario.map, peds, pose, LidarConfig.front(10), None, step)
            r, _ = compute_reward(prev_dist, dist, next_scan, step + 1, reward)
        trace.steps.append(TraceStep(step, pose, ctl.believed, ctl.amcl_pose,
                                     (float(action[0]), float(action[1])), float(r), reinit,
                                     dist, collided))
        if dist < reward.goal_radius or collided:
            break
    return trace, classify_episode(trace)
