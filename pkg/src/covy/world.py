"""Deterministic 2D world: polygon map, unicycle robot, pedestrians, lidar."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from shapely.geometry import LinearRing, Polygon, box

from .errors import InputDomainError, OutOfMapError, ScenarioError
from .geometry import (
    Pose2D,
    point_segment_distances,
    points_in_polygon,
    polygon_edges,
    ray_circle_distances,
    ray_segment_distances,
)

V_MAX = 0.2
W_MAX = 2.0
ROBOT_RADIUS = 0.11
PEDESTRIAN_RADIUS = 0.25
DEFAULT_DT = 0.1
WAYPOINT_TOLERANCE = 0.05


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    v: float = 0.0
    w: float = 0.0
    radius: float = ROBOT_RADIUS
    v_max: float = V_MAX
    w_max: float = W_MAX

    def __post_init__(self):
        if not self.radius > 0:
            raise InputDomainError("robot radius must be positive")


def step_robot(state: RobotState, action, dt: float) -> RobotState:
    """Clamp (v, w) to the robot's limits and integrate the exact unicycle arc."""
    v_cmd, w_cmd = float(action[0]), float(action[1])
    if not (math.isfinite(v_cmd) and math.isfinite(w_cmd) and math.isfinite(dt)):
        raise InputDomainError(f"non-finite command {action!r} or dt {dt!r}")
    if dt <= 0:
        raise InputDomainError("dt must be positive")
    v = min(max(v_cmd, 0.0), state.v_max)
    w = min(max(w_cmd, -state.w_max), state.w_max)
    x, y, th = state.pose.x, state.pose.y, state.pose.theta
    if abs(w) < 1e-9:
        x += v * dt * math.cos(th)
        y += v * dt * math.sin(th)
    else:
        r = v / w
        th1 = th + w * dt
        x += r * (math.sin(th1) - math.sin(th))
        y += r * (math.cos(th) - math.cos(th1))
    return replace(state, pose=Pose2D(x, y, th + w * dt), v=v, w=w)


@dataclass(frozen=True, eq=False)
class WorldMap:
    """Axis-aligned rectangular room with polygonal obstacles.

    ``bounds`` is ``(xmin, ymin, xmax, ymax)``; the boundary itself is a wall.
    """

    bounds: tuple
    obstacles: tuple = ()
    resolution: float = 0.05

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 4 or not (b[0] < b[2] and b[1] < b[3]):
            raise InputDomainError(f"invalid bounds {self.bounds!r}")
        object.__setattr__(self, "bounds", b)
        obs = tuple(np.asarray(p, dtype=float).reshape(-1, 2) for p in self.obstacles)
        object.__setattr__(self, "obstacles", obs)
        if not self.resolution > 0:
            raise InputDomainError("resolution must be positive")

    def validate(self):
        """Check obstacle polygons are simple and lie inside the bounds."""
        room = box(*self.bounds)
        for i, poly in enumerate(self.obstacles):
            if len(poly) < 3:
                raise ScenarioError(f"map.obstacles[{i}]", "polygon needs >= 3 vertices")
            if not LinearRing(poly).is_simple:
                raise ScenarioError(f"map.obstacles[{i}]", "polygon self-intersects")
            if not room.covers(Polygon(poly)):
                raise ScenarioError(f"map.obstacles[{i}]", "polygon leaves the map bounds")

    @property
    def width(self) -> float:
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self) -> float:
        return self.bounds[3] - self.bounds[1]

    @cached_property
    def wall_segments(self):
        x0, y0, x1, y1 = self.bounds
        corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        return polygon_edges(corners)

    @cached_property
    def obstacle_segments(self):
        if not self.obstacles:
            empty = np.zeros((0, 2))
            return empty, empty
        a, b = zip(*(polygon_edges(p) for p in self.obstacles))
        return np.concatenate(a), np.concatenate(b)

    @cached_property
    def segments(self):
        wa, wb = self.wall_segments
        oa, ob = self.obstacle_segments
        return np.concatenate([wa, oa]), np.concatenate([wb, ob])

    def in_bounds(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def inside_obstacle(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        hit = np.zeros(len(points), dtype=bool)
        for poly in self.obstacles:
            hit |= points_in_polygon(points, poly)
        return hit

    @cached_property
    def grid_shape(self):
        nx = int(math.ceil(self.width / self.resolution - 1e-9))
        ny = int(math.ceil(self.height / self.resolution - 1e-9))
        return ny, nx

    def cell_centers(self) -> np.ndarray:
        ny, nx = self.grid_shape
        xs = self.bounds[0] + (np.arange(nx) + 0.5) * self.resolution
        ys = self.bounds[1] + (np.arange(ny) + 0.5) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def occupancy_grid(self) -> np.ndarray:
        """Boolean grid (rows = y) marking cells whose centre lies in an obstacle."""
        ny, nx = self.grid_shape
        return self.inside_obstacle(self.cell_centers()).reshape(ny, nx)


@dataclass(frozen=True)
class PedestrianAgent:
    id: int
    position: tuple
    velocity: tuple = (0.0, 0.0)
    waypoints: tuple = ()
    mode: str = "static"
    speed: float = 0.0
    radius: float = PEDESTRIAN_RADIUS
    waypoint_index: int = 0

    def __post_init__(self):
        if self.mode not in ("static", "waypoint"):
            raise InputDomainError(f"unknown pedestrian mode {self.mode!r}")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "waypoints",
                           tuple(tuple(float(v) for v in w) for w in self.waypoints))
        if self.mode == "waypoint" and not self.waypoints:
            raise InputDomainError("waypoint pedestrian needs at least one waypoint")
        vel = (0.0, 0.0) if self.mode == "static" else tuple(float(v) for v in self.velocity)
        if self.mode == "waypoint" and vel == (0.0, 0.0):
            heading = np.subtract(self.waypoints[self.waypoint_index], self.position)
            n = float(np.linalg.norm(heading))
            if n > 0:
                vel = tuple(float(v) for v in heading / n * self.speed)
        object.__setattr__(self, "velocity", vel)


def _advance(agent: PedestrianAgent, pos: np.ndarray, idx: int) -> int:
    target = np.asarray(agent.waypoints[idx])
    if np.linalg.norm(target - pos) <= WAYPOINT_TOLERANCE:
        idx = (idx + 1) % len(agent.waypoints)
    return idx


def step_pedestrians(pedestrians: Sequence[PedestrianAgent], dt: float):
    """Move waypoint followers at constant speed; static agents stay put."""
    if dt <= 0:
        raise InputDomainError("dt must be positive")
    out = []
    for p in pedestrians:
        if p.mode == "static":
            out.append(p)
            continue
        pos = np.asarray(p.position, dtype=float)
        idx = _advance(p, pos, p.waypoint_index)
        to_wp = np.asarray(p.waypoints[idx]) - pos
        dist = float(np.linalg.norm(to_wp))
        step = min(p.speed * dt, dist)
        if dist > 0:
            pos = pos + to_wp / dist * step
        idx = _advance(p, pos, idx)
        heading = np.asarray(p.waypoints[idx]) - pos
        n = float(np.linalg.norm(heading))
        vel = heading / n * p.speed if n > 0 else np.zeros(2)
        out.append(replace(p, position=tuple(pos), velocity=tuple(vel), waypoint_index=idx))
    return out


@dataclass(frozen=True)
class LidarConfig:
    beam_count: int = 360
    angle_min: float = -math.pi
    angle_max: float = math.pi - 2 * math.pi / 360
    max_range: float = 3.5
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.beam_count < 1:
            raise InputDomainError("beam_count must be >= 1")
        if not self.max_range > 0:
            raise InputDomainError("max_range must be positive")
        if self.noise_sigma < 0:
            raise InputDomainError("noise_sigma must be >= 0")

    @property
    def angles(self) -> np.ndarray:
        if self.beam_count == 1:
            return np.array([self.angle_min])
        return np.linspace(self.angle_min, self.angle_max, self.beam_count)

    @classmethod
    def front(cls, beam_count=10, max_range=3.5, noise_sigma=0.0) -> "LidarConfig":
        return cls(beam_count, -math.pi / 2, math.pi / 2, max_range, noise_sigma)


@dataclass(frozen=True, eq=False)
class LidarScan:
    ranges: np.ndarray
    angle_min: float
    angle_max: float
    beam_count: int
    max_range: float
    timestamp: int = 0

    @property
    def angles(self) -> np.ndarray:
        if self.beam_count == 1:
            return np.array([self.angle_min])
        return np.linspace(self.angle_min, self.angle_max, self.beam_count)

    def valid_mask(self) -> np.ndarray:
        return self.ranges < self.max_range

    def points(self, valid_only=True) -> np.ndarray:
        """Beam endpoints in the sensor frame."""
        a = self.angles
        pts = np.stack([self.ranges * np.cos(a), self.ranges * np.sin(a)], axis=1)
        return pts[self.valid_mask()] if valid_only else pts


def cast_lidar(world_map: WorldMap, pedestrians, pose: Pose2D, config: LidarConfig,
               rng: Optional[np.random.Generator] = None, timestamp: int = 0) -> LidarScan:
    """Raycast every beam against walls, obstacles and pedestrian disks."""
    if not world_map.in_bounds(pose.x, pose.y):
        raise OutOfMapError(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside map bounds")
    angles = pose.theta + config.angles
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    origin = np.array([pose.x, pose.y])
    seg_a, seg_b = world_map.segments
    t = ray_segment_distances(origin, dirs, seg_a, seg_b)
    if pedestrians:
        centers = np.array([p.position for p in pedestrians], dtype=float)
        radii = np.array([p.radius for p in pedestrians], dtype=float)
        t = np.minimum(t, ray_circle_distances(origin, dirs, centers, radii))
    hit = t < config.max_range
    if config.noise_sigma > 0:
        if rng is None:
            raise InputDomainError("noisy lidar needs an rng")
        noise = rng.normal(0.0, config.noise_sigma, config.beam_count)
        t = np.where(hit, t + noise, t)
    ranges = np.where(hit, np.clip(t, 1e-6, config.max_range), config.max_range)
    return LidarScan(ranges, config.angle_min, config.angle_max, config.beam_count,
                     config.max_range, timestamp)


def check_collision(world_map: WorldMap, pedestrians, pose: Pose2D, radius: float) -> bool:
    """True iff the robot disk overlaps a wall, obstacle or pedestrian (strictly)."""
    if not radius > 0:
        raise InputDomainError("radius must be positive")
    x0, y0, x1, y1 = world_map.bounds
    if min(pose.x - x0, x1 - pose.x, pose.y - y0, y1 - pose.y) < radius:
        return True
    p = np.array([[pose.x, pose.y]])
    oa, ob = world_map.obstacle_segments
    if len(oa):
        if point_segment_distances(p, oa, ob).min() < radius:
            return True
        if world_map.inside_obstacle(p)[0]:
            return True
    for ped in pedestrians:
        if math.hypot(pose.x - ped.position[0], pose.y - ped.position[1]) < radius + ped.radius:
            return True
    return False


def point_is_free(world_map: WorldMap, xy, clearance: float = 0.0) -> bool:
    x, y = float(xy[0]), float(xy[1])
    if not world_map.in_bounds(x, y):
        return False
    if world_map.inside_obstacle([[x, y]])[0]:
        return False
    if clearance > 0:
        return not check_collision(world_map, (), Pose2D(x, y, 0.0), clearance)
    return True


@dataclass(frozen=True, eq=False)
class Scenario:
    map: WorldMap
    robot_start: Pose2D
    goal: tuple
    pedestrians: tuple = ()
    seed: int = 0
    max_steps: int = 500
    dt: float = DEFAULT_DT
    robot_radius: float = ROBOT_RADIUS
    name: str = ""

    def initial_robot(self) -> RobotState:
        return RobotState(self.robot_start, radius=self.robot_radius)


def _pair(value, name, n=2):
    try:
        vals = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ScenarioError(name, f"expected {n} numbers, got {value!r}") from None
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise ScenarioError(name, f"expected {n} finite numbers, got {value!r}")
    return vals


def scenario_from_dict(doc: dict, name: str = "") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario must be a mapping")
    for key in ("map", "robot", "goal"):
        if key not in doc:
            raise ScenarioError(key, "missing section")
    m = doc["map"] or {}
    if "bounds" not in m:
        raise ScenarioError("map.bounds", "missing")
    try:
        wmap = WorldMap(bounds=_pair(m["bounds"], "map.bounds", 4),
                        obstacles=tuple(m.get("obstacles") or ()),
                        resolution=float(m.get("resolution", 0.05)))
    except InputDomainError as exc:
        raise ScenarioError("map", str(exc)) from None
    except ValueError as exc:
        raise ScenarioError("map.obstacles", str(exc)) from None
    wmap.validate()

    robot = doc["robot"] or {}
    start = robot.get("start")
    if start is None:
        raise ScenarioError("robot.start", "missing")
    sx, sy, sth = _pair(start, "robot.start", 3)
    radius = float(robot.get("radius", ROBOT_RADIUS))
    if not radius > 0:
        raise ScenarioError("robot.radius", "must be positive")
    start_pose = Pose2D(sx, sy, sth)

    goal = tuple(_pair(doc["goal"], "goal"))
    if not point_is_free(wmap, goal):
        raise ScenarioError("goal", f"{goal} lies inside an obstacle or outside the map")

    peds = []
    seen = set()
    for i, p in enumerate(doc.get("pedestrians") or ()):
        key = f"pedestrians[{i}]"
        try:
            pid = int(p["id"])
            agent = PedestrianAgent(
                id=pid,
                position=tuple(_pair(p["position"], key + ".position")),
                waypoints=tuple(tuple(_pair(w, key + ".waypoints")) for w in p.get("waypoints") or ()),
                mode=p.get("mode", "static"),
                speed=float(p.get("speed", 0.0)),
                radius=float(p.get("radius", PEDESTRIAN_RADIUS)),
            )
        except KeyError as exc:
            raise ScenarioError(key, f"missing {exc.args[0]}") from None
        except InputDomainError as exc:
            raise ScenarioError(key, str(exc)) from None
        if pid in seen:
            raise ScenarioError(key + ".id", f"duplicate id {pid}")
        seen.add(pid)
        for w in (agent.position, *agent.waypoints):
            if not wmap.in_bounds(*w):
                raise ScenarioError(key, f"point {w} outside map bounds")
        peds.append(agent)

    if check_collision(wmap, peds, start_pose, radius):
        raise ScenarioError("robot.start", "start pose is in collision")

    limits = doc.get("limits") or {}
    max_steps = int(limits.get("max_steps", 500))
    dt = float(limits.get("dt", DEFAULT_DT))
    if max_steps < 1:
        raise ScenarioError("limits.max_steps", "must be >= 1")
    if not dt > 0:
        raise ScenarioError("limits.dt", "must be positive")
    return Scenario(map=wmap, robot_start=start_pose, goal=goal, pedestrians=tuple(peds),
                    seed=int(doc.get("seed", 0)), max_steps=max_steps, dt=dt,
                    robot_radius=radius, name=name or str(doc.get("name", "")))


def scenario_to_dict(sc: Scenario) -> dict:
    peds = []
    for p in sc.pedestrians:
        d = {"id": p.id, "mode": p.mode, "position": list(p.position), "radius": p.radius}
        if p.mode == "waypoint":
            d["speed"] = p.speed
            d["waypoints"] = [list(w) for w in p.waypoints]
        peds.append(d)
    return {
        "name": sc.name,
        "map": {"bounds": list(sc.map.bounds),
                "resolution": sc.map.resolution,
                "obstacles": [poly.tolist() for poly in sc.map.obstacles]},
        "robot": {"start": [sc.robot_start.x, sc.robot_start.y, sc.robot_start.theta],
                  "radius": sc.robot_radius},
        "goal": list(sc.goal),
        "pedestrians": peds,
        "limits": {"max_steps": sc.max_steps, "dt": sc.dt},
        "seed": sc.seed,
    }


def load_scenario(path) -> Scenario:
    """Parse and validate a YAML scenario file."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError("<file>", f"parse error: {exc}") from None
    return scenario_from_dict(doc, name=path.stem)


def builtin_scenario(name: str) -> Scenario:
    """Load one of the scenarios shipped under ``covy/scenarios``."""
    return load_scenario(Path(__file__).parent / "scenarios" / f"{name}.yaml")


def sample_free_pose(world_map: WorldMap, rng: np.random.Generator, clearance: float,
                     pedestrians=(), max_tries: int = 10_000) -> Pose2D:
    x0, y0, x1, y1 = world_map.bounds
    for _ in range(max_tries):
        x = rng.uniform(x0 + clearance, x1 - clearance)
        y = rng.uniform(y0 + clearance, y1 - clearance)
        th = rng.uniform(-math.pi, math.pi)
        pose = Pose2D(x, y, th)
        if not check_collision(world_map, pedestrians, pose, clearance):
            return pose
    raise InputDomainError("could not sample a free pose")
