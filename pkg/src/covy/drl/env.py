"""Observation, reward and a goal-reaching episode environment."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import InputDomainError
from ..geometry import wrap_angle
from ..world import (
    LidarConfig,
    LidarScan,
    RobotState,
    Scenario,
    cast_lidar,
    check_collision,
    sample_free_pose,
    step_pedestrians,
    step_robot,
)

STATE_DIM = 14
ACTION_DIM = 2
N_STATE_BEAMS = 10
ACTION_LOW = np.array([0.0, -2.0])
ACTION_HIGH = np.array([0.2, 2.0])


class Terminal(str, enum.Enum):
    NONE = "none"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class RewardParams:
    r_goal: float = 100.0
    r_collision: float = -100.0
    r_progress: float = 500.0
    r_stall: float = -1.0
    goal_radius: float = 0.3
    min_clearance: float = 0.2
    max_steps: int = 500

    def __post_init__(self):
        if not (self.r_goal > 0 and self.r_collision < 0 and self.r_progress > 0
                and self.r_stall <= 0 and self.goal_radius > 0 and self.min_clearance > 0):
            raise InputDomainError(f"invalid reward parameters {self}")


def front_beam_indices(scan: LidarScan, n: int = N_STATE_BEAMS) -> np.ndarray:
    """Indices of ``n`` evenly spaced beams spanning -90..+90 degrees."""
    ang = scan.angles
    tol = 1e-6
    inside = np.flatnonzero((ang >= -math.pi / 2 - tol) & (ang <= math.pi / 2 + tol))
    if len(inside) < n:
        raise InputDomainError(f"scan has {len(inside)} front beams, need {n}")
    if ang[inside[0]] > -math.pi / 2 + math.radians(2) or ang[inside[-1]] < math.pi / 2 - math.radians(2):
        raise InputDomainError("scan does not cover -90..+90 degrees")
    pick = np.linspace(0, len(inside) - 1, n).round().astype(int)
    return inside[pick]


def build_state(scan: LidarScan, robot: RobotState, target, bounds=None,
                normalize: bool = True) -> np.ndarray:
    """14-vector: 10 front ranges, v, w, distance and heading to the target."""
    tx, ty = float(target[0]), float(target[1])
    if bounds is not None:
        x0, y0, x1, y1 = bounds
        if not (x0 <= tx <= x1 and y0 <= ty <= y1):
            raise InputDomainError(f"target {target} outside the map")
    ranges = scan.ranges[front_beam_indices(scan)]
    if normalize:
        ranges = ranges / scan.max_range
    p = robot.pose
    dist = math.hypot(tx - p.x, ty - p.y)
    heading = wrap_angle(math.atan2(ty - p.y, tx - p.x) - p.theta)
    return np.concatenate([ranges, [robot.v, robot.w, dist, heading]])


def compute_reward(prev_dist: float, cur_dist: float, scan: LidarScan, step: int,
                   p: RewardParams):
    """Four-case reward, checked in priority order; returns (reward, Terminal)."""
    if cur_dist < p.goal_radius:
        return p.r_goal, Terminal.GOAL
    if float(np.min(scan.ranges)) < p.min_clearance:
        return p.r_collision, Terminal.COLLISION
    progress = prev_dist - cur_dist
    reward = p.r_progress * progress if progress > 0 else p.r_stall
    terminal = Terminal.TIMEOUT if step >= p.max_steps else Terminal.NONE
    return reward, terminal


def sample_start_goal(world_map, rng: np.random.Generator, clearance: float = 0.4,
                      min_dist: float = 1.0, max_dist: float = 3.0, pedestrians=(),
                      max_tries: int = 1000):
    """Collision-free start pose and goal point ``min_dist..max_dist`` apart."""
    for _ in range(max_tries):
        start = sample_free_pose(world_map, rng, clearance, pedestrians)
        goal = sample_free_pose(world_map, rng, clearance, pedestrians)
        if min_dist <= math.hypot(goal.x - start.x, goal.y - start.y) <= max_dist:
            return start, (goal.x, goal.y)
    raise InputDomainError("could not sample a start/goal pair")


def scale_action(unit) -> np.ndarray:
    """Map [-1, 1]^2 onto the action box."""
    unit = np.asarray(unit)
    return ACTION_LOW + (unit + 1.0) * 0.5 * (ACTION_HIGH - ACTION_LOW)


def clip_action(a) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=float), ACTION_LOW, ACTION_HIGH)


class NavEnv:
    """Episodic goal reaching on true poses, as used for training.

    Each ``reset`` picks one scenario from the family and draws a fresh
    collision-free start and goal from ``rng``.
    """

    def __init__(self, scenarios: Sequence[Scenario], reward: RewardParams = RewardParams(),
                 lidar: Optional[LidarConfig] = None, clearance: float = 0.4,
                 min_goal_dist: float = 1.0, max_goal_dist: float = 3.0,
                 normalize: bool = True):
        if not scenarios:
            raise InputDomainError("need at least one scenario")
        self.scenarios = list(scenarios)
        self.reward_params = reward
        self.lidar = lidar or LidarConfig.front(N_STATE_BEAMS)
        self.clearance = clearance
        self.min_goal_dist = min_goal_dist
        self.max_goal_dist = max_goal_dist
        self.normalize = normalize
        self.scenario: Optional[Scenario] = None

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.rng = rng
        self.scenario = self.scenarios[int(rng.integers(len(self.scenarios)))]
        sc = self.scenario
        self.pedestrians = list(sc.pedestrians)
        start, self.goal = sample_start_goal(sc.map, rng, self.clearance, self.min_goal_dist,
                                             self.max_goal_dist, self.pedestrians)
        self.robot = RobotState(start, radius=sc.robot_radius)
        self.steps = 0
        self.scan = cast_lidar(sc.map, self.pedestrians, start, self.lidar, rng, 0)
        self.dist = math.hypot(self.goal[0] - start.x, self.goal[1] - start.y)
        return self.observe()

    def observe(self) -> np.ndarray:
        return build_state(self.scan, self.robot, self.goal, self.scenario.map.bounds,
                           self.normalize)

    def step(self, action):
        sc = self.scenario
        self.robot = step_robot(self.robot, action, sc.dt)
        self.pedestrians = step_pedestrians(self.pedestrians, sc.dt)
        self.steps += 1
        pose = self.robot.pose
        prev = self.dist
        self.dist = math.hypot(self.goal[0] - pose.x, self.goal[1] - pose.y)
        if check_collision(sc.map, self.pedestrians, pose, self.robot.radius):
            reward, term = self.reward_params.r_collision, Terminal.COLLISION
            if not sc.map.in_bounds(pose.x, pose.y):
                return self.observe_unchecked(), reward, term
            self.scan = cast_lidar(sc.map, self.pedestrians, pose, self.lidar, self.rng, self.steps)
        else:
            self.scan = cast_lidar(sc.map, self.pedestrians, pose, self.lidar, self.rng, self.steps)
            reward, term = compute_reward(prev, self.dist, self.scan, self.steps, self.reward_params)
        return self.observe(), reward, term

    def observe_unchecked(self) -> np.ndarray:
        # robot centre left the room: report zero ranges
        zeros = LidarScan(np.full(self.lidar.beam_count, 1e-6), self.lidar.angle_min,
                          self.lidar.angle_max, self.lidar.beam_count, self.lidar.max_range)
        return build_state(zeros, self.robot, self.goal, None, self.normalize)
