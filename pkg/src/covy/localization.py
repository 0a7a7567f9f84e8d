"""Lidar odometry by ICP, odometry fault injection and augmented MCL."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateScanError, InputDomainError
from .geometry import Pose2D, point_segment_distances, wrap_angle
from .world import LidarScan, WorldMap


@dataclass(frozen=True)
class PoseDelta:
    """Rigid motion expressed in the previous pose's frame."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0

    def __post_init__(self):
        for name in ("dx", "dy", "dtheta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InputDomainError(f"PoseDelta.{name} must be finite")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "dtheta", wrap_angle(self.dtheta))

    def __add__(self, other: "PoseDelta") -> "PoseDelta":
        return PoseDelta(self.dx + other.dx, self.dy + other.dy, self.dtheta + other.dtheta)

    def then(self, other: "PoseDelta") -> "PoseDelta":
        """Rigid composition: apply ``self`` then ``other`` (in the moved frame)."""
        p = Pose2D(self.dx, self.dy, self.dtheta).compose(other.dx, other.dy, other.dtheta)
        return PoseDelta(p.x, p.y, p.theta)

    @classmethod
    def between(cls, a: Pose2D, b: Pose2D) -> "PoseDelta":
        """Delta that takes pose ``a`` to pose ``b``."""
        local = a.to_local(b.xy)
        return cls(float(local[0]), float(local[1]), b.theta - a.theta)

    def magnitude(self) -> float:
        return math.sqrt(self.dx ** 2 + self.dy ** 2 + self.dtheta ** 2)


def integrate_odometry(pose: Pose2D, delta: PoseDelta) -> Pose2D:
    return pose.compose(delta.dx, delta.dy, delta.dtheta)


@dataclass(frozen=True)
class FaultConfig:
    trigger_step: int = -1
    jump: PoseDelta = PoseDelta()
    per_step_bias: PoseDelta = PoseDelta()


def inject_fault(delta: PoseDelta, cfg: Optional[FaultConfig], step: int) -> PoseDelta:
    """Add the per-step bias, and the one-off jump at ``cfg.trigger_step``."""
    if cfg is None:
        return delta
    out = delta + cfg.per_step_bias
    if step == cfg.trigger_step:
        out = out + cfg.jump
    return out


def _rigid_fit(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation R and translation t with R @ src + t ~= dst."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    R = Vt.T @ U.T
    if np.linalg.det(R) < 0:
        Vt[1] *= -1
        R = Vt.T @ U.T
    t = cd - R @ cs
    return R, t


def _scan_polyline(scan: LidarScan, max_gap: float):
    """Valid points of a scan, the segments joining consecutive returns, and
    for each point the (up to two) segments touching it (-1 when absent)."""
    pts_all = scan.points(valid_only=False)
    valid = scan.valid_mask()
    pos = np.cumsum(valid) - 1          # beam index -> row in the valid-point array
    pts = pts_all[valid]
    i = np.flatnonzero(valid)
    j = (i + 1) % len(pts_all)
    ok = valid[j] & (np.linalg.norm(pts_all[j] - pts_all[i], axis=1) <= max_gap)
    i, j = i[ok], j[ok]
    seg_of_point = -np.ones((len(pts), 2), dtype=int)
    seg_of_point[pos[i], 0] = np.arange(len(i))
    seg_of_point[pos[j], 1] = np.arange(len(i))
    return pts, pts_all[i], pts_all[j], seg_of_point


def _closest_on_polyline(q, tree, pts, seg_a, seg_b, seg_of_point):
    """Nearest point of the previous scan surface for each query point.

    Starts from the nearest scan vertex, then projects onto the segments
    touching that vertex.
    """
    _, nn = tree.query(q)
    best = pts[nn].copy()
    best_d = np.linalg.norm(q - best, axis=1)
    for k in range(2):
        s = seg_of_point[nn, k]
        has = s >= 0
        if not np.any(has):
            continue
        a, b = seg_a[s[has]], seg_b[s[has]]
        e = b - a
        u = np.sum((q[has] - a) * e, axis=1) / np.maximum(np.sum(e * e, axis=1), 1e-18)
        c = a + np.clip(u, 0.0, 1.0)[:, None] * e
        d = np.linalg.norm(q[has] - c, axis=1)
        better = d < best_d[has]
        rows = np.flatnonzero(has)[better]
        best[rows] = c[better]
        best_d[rows] = d[better]
    return best, best_d


def scan_match(prev: LidarScan, cur: LidarScan, init: Optional[PoseDelta] = None,
               max_iter: int = 30, tol: float = 1e-6, max_corr_dist: float = 0.5,
               max_gap: float = 0.2) -> PoseDelta:
    """Estimate the rigid motion between two scans with point-to-point ICP.

    Each point of ``cur`` is paired with the closest point on the piecewise
    linear surface traced by ``prev``'s consecutive returns, and the pose is
    re-solved in closed form (SVD) every iteration.  The result maps the
    ``cur`` sensor frame into the ``prev`` frame, i.e. it is the robot's motion.
    """
    if max_iter < 1:
        raise InputDomainError("max_iter must be >= 1")
    if prev.beam_count != cur.beam_count:
        raise InputDomainError("scans must share a beam layout")
    pts_prev, seg_a, seg_b, seg_of_point = _scan_polyline(prev, max_gap)
    pts_cur = cur.points()
    if len(pts_prev) < 3 or len(pts_cur) < 3:
        raise DegenerateScanError(
            f"need >= 3 valid returns, got {len(pts_prev)} and {len(pts_cur)}")

    tree = cKDTree(pts_prev)
    init = init or PoseDelta()
    th = init.dtheta
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    t = np.array([init.dx, init.dy])
    gate = max_corr_dist
    for _ in range(max_iter):
        q = pts_cur @ R.T + t
        target, dist = _closest_on_polyline(q, tree, pts_prev, seg_a, seg_b, seg_of_point)
        keep = dist <= gate
        if np.count_nonzero(keep) < 3:
            raise DegenerateScanError("fewer than 3 correspondences inside the gate")
        R_new, t_new = _rigid_fit(pts_cur[keep], target[keep])
        d_th = abs(math.atan2(R_new[1, 0], R_new[0, 0]) - math.atan2(R[1, 0], R[0, 0]))
        d_t = float(np.linalg.norm(t_new - t))
        R, t = R_new, t_new
        # tighten the gate as the alignment settles
        gate = max(min(gate, 3.0 * float(np.median(dist[keep])) + 0.02), 0.05)
        if d_t < tol and d_th < tol:
            break
    return PoseDelta(float(t[0]), float(t[1]), math.atan2(R[1, 0], R[0, 0]))


class DistanceField:
    """Exact distance from each grid cell centre to the nearest wall or obstacle edge."""

    def __init__(self, world_map: WorldMap):
        self.map = world_map
        self.resolution = world_map.resolution
        self.origin = np.array(world_map.bounds[:2])
        ny, nx = world_map.grid_shape
        centers = world_map.cell_centers()
        seg_a, seg_b = world_map.segments
        dist = np.empty(len(centers))
        for lo in range(0, len(centers), 4096):
            chunk = centers[lo:lo + 4096]
            dist[lo:lo + 4096] = point_segment_distances(chunk, seg_a, seg_b).min(axis=1)
        occ = world_map.occupancy_grid().ravel()
        dist[occ] = 0.0
        self.grid = dist.reshape(ny, nx)
        self.grid.setflags(write=False)

    def lookup(self, xy) -> np.ndarray:
        """Nearest-cell distance for world points (..., 2).

        Points beyond the bounds get the border cell's value plus their
        distance to the bounds.
        """
        xy = np.asarray(xy, dtype=float)
        ny, nx = self.grid.shape
        x0, y0, x1, y1 = self.map.bounds
        cx = np.clip(xy[..., 0], x0, x1)
        cy = np.clip(xy[..., 1], y0, y1)
        ix = np.clip(np.floor((cx - x0) / self.resolution).astype(int), 0, nx - 1)
        iy = np.clip(np.floor((cy - y0) / self.resolution).astype(int), 0, ny - 1)
        return self.grid[iy, ix] + np.hypot(xy[..., 0] - cx, xy[..., 1] - cy)


@dataclass
class AmclParams:
    alphas: tuple = (0.2, 0.2, 0.2, 0.2)
    z_hit: float = 0.9
    z_rand: float = 0.1
    sigma_hit: float = 0.1
    beams: int = 30
    alpha_slow: float = 0.001
    alpha_fast: float = 0.1
    count: int = 500
    combine: str = "product"        # or "cubic_sum"
    temperature: float = 12.0       # product model: log-likelihood divisor


@dataclass
class ParticleSet:
    poses: np.ndarray               # (N, 3): x, y, theta
    weights: np.ndarray             # (N,)
    w_slow: float = 0.0
    w_fast: float = 0.0
    recovery_events: int = 0
    injected_last: int = 0
    # weighted particles from the last measurement step, before resampling
    # and random injection; the pose estimate is taken from these
    posterior: Optional[tuple] = None
    # boolean mask of particles replaced by random poses in the last cycle
    injected: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return len(self.weights)


def _uniform_poses(world_map: WorldMap, n: int, rng: np.random.Generator) -> np.ndarray:
    x0, y0, x1, y1 = world_map.bounds
    out = np.empty((0, 3))
    while len(out) < n:
        m = max(2 * (n - len(out)), 16)
        cand = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m),
                                rng.uniform(-math.pi, math.pi, m)])
        cand = cand[~world_map.inside_obstacle(cand[:, :2])]
        out = np.vstack([out, cand])
    return out[:n]


def uniform_particles(world_map: WorldMap, n: int, rng: np.random.Generator) -> ParticleSet:
    if n < 1:
        raise InputDomainError("particle count must be >= 1")
    return ParticleSet(_uniform_poses(world_map, n, rng), np.full(n, 1.0 / n))


def gaussian_particles(pose: Pose2D, n: int, rng: np.random.Generator, sigma_xy=0.05,
                       sigma_theta=0.05, world_map: Optional[WorldMap] = None) -> ParticleSet:
    poses = np.column_stack([rng.normal(pose.x, sigma_xy, n), rng.normal(pose.y, sigma_xy, n),
                             wrap_angle(rng.normal(pose.theta, sigma_theta, n))])
    if world_map is not None:
        x0, y0, x1, y1 = world_map.bounds
        poses[:, 0] = np.clip(poses[:, 0], x0, x1)
        poses[:, 1] = np.clip(poses[:, 1], y0, y1)
    return ParticleSet(poses, np.full(n, 1.0 / n))


def sample_motion(poses: np.ndarray, delta: PoseDelta, alphas, rng: np.random.Generator):
    """Odometry motion model: rot1 / trans / rot2 with Gaussian perturbations."""
    a1, a2, a3, a4 = alphas
    trans = math.hypot(delta.dx, delta.dy)
    rot1 = math.atan2(delta.dy, delta.dx) if trans > 1e-4 else 0.0
    # driving backwards is a reversed translation, not a half turn
    if abs(rot1) > math.pi / 2:
        rot1 = wrap_angle(rot1 - math.pi)
        trans = -trans
    rot2 = wrap_angle(delta.dtheta - rot1)
    n = len(poses)
    sd_rot1 = math.sqrt(a1 * rot1 ** 2 + a2 * trans ** 2)
    sd_trans = math.sqrt(a3 * trans ** 2 + a4 * (rot1 ** 2 + rot2 ** 2))
    sd_rot2 = math.sqrt(a1 * rot2 ** 2 + a2 * trans ** 2)
    r1 = rot1 + rng.normal(0.0, 1.0, n) * sd_rot1
    tr = trans + rng.normal(0.0, 1.0, n) * sd_trans
    r2 = rot2 + rng.normal(0.0, 1.0, n) * sd_rot2
    out = poses.copy()
    heading = poses[:, 2] + r1
    out[:, 0] += tr * np.cos(heading)
    out[:, 1] += tr * np.sin(heading)
    out[:, 2] = wrap_angle(heading + r2)
    return out


def beam_subset(scan: LidarScan, n: int) -> np.ndarray:
    idx = np.unique(np.linspace(0, scan.beam_count - 1, min(n, scan.beam_count)).round().astype(int))
    return idx[scan.ranges[idx] < scan.max_range]


def _beam_log_probs(poses: np.ndarray, scan: LidarScan, df: DistanceField,
                    params: AmclParams):
    """Per-beam log p(z | pose) under the hit/random mixture, shape (N, beams)."""
    idx = beam_subset(scan, params.beams)
    if len(idx) == 0:
        return np.zeros((len(poses), 0)), idx
    r = scan.ranges[idx]
    ang = scan.angles[idx]
    th = poses[:, 2:3] + ang[None, :]
    ex = poses[:, 0:1] + r[None, :] * np.cos(th)
    ey = poses[:, 1:2] + r[None, :] * np.sin(th)
    d = df.lookup(np.stack([ex, ey], axis=-1))
    if params.combine == "product":
        p_hit = np.exp(-0.5 * (d / params.sigma_hit) ** 2) / (math.sqrt(2 * math.pi) * params.sigma_hit)
    else:
        p_hit = np.exp(-0.5 * (d / params.sigma_hit) ** 2)
    with np.errstate(divide="ignore"):
        return np.log(params.z_hit * p_hit + params.z_rand / scan.max_range), idx


def _combine(logp: np.ndarray, params: AmclParams) -> np.ndarray:
    if logp.shape[1] == 0:
        return np.zeros(len(logp))
    if params.combine == "product":
        return np.sum(logp, axis=1) / params.temperature
    # unnormalised per-beam score, summed as cubes: a flat ensemble that
    # avoids collapsing onto the first locally good hypothesis.  Dividing by
    # the beam count leaves relative weights alone but keeps the average
    # likelihood independent of how many beams happened to return.
    return np.log1p(np.sum(np.exp(3.0 * logp), axis=1)) - math.log(logp.shape[1])


def log_likelihoods(poses: np.ndarray, scan: LidarScan, df: DistanceField,
                    params: AmclParams) -> np.ndarray:
    """Likelihood-field log score of ``scan`` for every pose row."""
    logp, _ = _beam_log_probs(poses, scan, df, params)
    return _combine(logp, params)


def low_variance_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def amcl_update(ps: ParticleSet, odom_delta: PoseDelta, scan: LidarScan, world_map: WorldMap,
                df: DistanceField, params: AmclParams, rng: np.random.Generator) -> ParticleSet:
    """One augmented-MCL cycle: move, weight, track likelihood trends, resample."""
    n = ps.count
    poses = sample_motion(ps.poses, odom_delta, params.alphas, rng)
    x0, y0, x1, y1 = world_map.bounds
    poses[:, 0] = np.clip(poses[:, 0], x0, x1)
    poses[:, 1] = np.clip(poses[:, 1], y0, y1)

    logp, _ = _beam_log_probs(poses, scan, df, params)
    loglik = _combine(logp, params)
    finite = np.isfinite(loglik)
    if not np.any(finite):
        fresh = uniform_particles(world_map, n, rng)
        return replace(fresh, w_slow=ps.w_slow, w_fast=ps.w_fast,
                       recovery_events=ps.recovery_events + 1, injected_last=n)
    top = loglik[finite].max()
    lik = np.where(finite, np.exp(loglik - top), 0.0)
    w = ps.weights * lik
    total = w.sum()
    if not total > 0:
        fresh = uniform_particles(world_map, n, rng)
        return replace(fresh, w_slow=ps.w_slow, w_fast=ps.w_fast,
                       recovery_events=ps.recovery_events + 1, injected_last=n)
    w = w / total

    # The trend statistic is the belief-weighted geometric mean of the per-beam
    # likelihood, so it does not move with the number of beams in range.
    # Particles injected last cycle are exploratory and left out; counting
    # them would lower the average, which raises injection, and so on.
    trend_w = ps.weights.copy()
    if ps.injected is not None and not ps.injected.all():
        trend_w[ps.injected] = 0.0
    trend_w /= trend_w.sum()
    per_beam = logp.mean(axis=1) if logp.shape[1] else np.zeros(n)
    per_beam = np.where(np.isfinite(per_beam), per_beam, -np.inf)
    ref = per_beam.max()
    avg = math.exp(min(ref + math.log(max(float(np.dot(trend_w, np.exp(per_beam - ref))), 1e-300)), 700.0))
    w_slow = avg if ps.w_slow == 0.0 else ps.w_slow + params.alpha_slow * (avg - ps.w_slow)
    w_fast = avg if ps.w_fast == 0.0 else ps.w_fast + params.alpha_fast * (avg - ps.w_fast)
    p_inject = max(0.0, 1.0 - w_fast / w_slow) if w_slow > 0 else 0.0

    idx = low_variance_resample(w, rng)
    new = poses[idx]
    inject = rng.random(n) < p_inject
    k = int(np.count_nonzero(inject))
    if k:
        new[inject] = _uniform_poses(world_map, k, rng)
    return ParticleSet(new, np.full(n, 1.0 / n), w_slow, w_fast,
                       ps.recovery_events + (1 if k else 0), k, (poses, w), inject)


def estimate_pose(ps: ParticleSet):
    """Weighted mean pose (circular mean for heading) and 3x3 covariance.

    Uses the weighted posterior of the last update when there is one, so
    freshly injected random particles do not drag the estimate around.
    """
    poses, w = ps.posterior if ps.posterior is not None else (ps.poses, ps.weights)
    w = w / w.sum()
    x = float(np.dot(w, poses[:, 0]))
    y = float(np.dot(w, poses[:, 1]))
    th = math.atan2(float(np.dot(w, np.sin(poses[:, 2]))),
                    float(np.dot(w, np.cos(poses[:, 2]))))
    dev = np.column_stack([poses[:, 0] - x, poses[:, 1] - y,
                           wrap_angle(poses[:, 2] - th)])
    cov = (dev * w[:, None]).T @ dev
    return Pose2D(x, y, th), cov
