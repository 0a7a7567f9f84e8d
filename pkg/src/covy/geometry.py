"""Planar geometry helpers: angles, rigid poses, ray casting and distances."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(a) == 0:
        r = math.remainder(float(a), TWO_PI)
        return math.pi if r == -math.pi else r
    a = np.asarray(a, dtype=float)
    r = np.remainder(a + math.pi, TWO_PI) - math.pi
    return np.where(r <= -math.pi, math.pi, r)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, dx: float, dy: float, dtheta: float) -> "Pose2D":
        """Apply a motion expressed in this pose's own frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(self.x + c * dx - s * dy, self.y + s * dx + c * dy,
                      self.theta + dtheta)

    def to_world(self, p) -> np.ndarray:
        """Map point(s) from this pose's frame into the world frame."""
        p = np.asarray(p, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        x = self.x + c * p[..., 0] - s * p[..., 1]
        y = self.y + s * p[..., 0] + c * p[..., 1]
        return np.stack([x, y], axis=-1)

    def to_local(self, p) -> np.ndarray:
        """Map world point(s) into this pose's frame."""
        p = np.asarray(p, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = p[..., 0] - self.x
        dy = p[..., 1] - self.y
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)

    @classmethod
    def from_seq(cls, seq) -> "Pose2D":
        if len(seq) == 2:
            return cls(seq[0], seq[1], 0.0)
        return cls(seq[0], seq[1], seq[2])


def cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def ray_segment_distances(origin, directions, seg_a, seg_b):
    """Distance along each unit ray to the first segment it crosses.

    origin: (2,), directions: (B, 2), seg_a/seg_b: (S, 2).
    Returns (B,) with ``inf`` for rays that hit nothing.
    """
    origin = np.asarray(origin, dtype=float)
    if len(seg_a) == 0:
        return np.full(len(directions), np.inf)
    e = seg_b - seg_a                                   # (S, 2)
    w = seg_a - origin                                  # (S, 2)
    d = directions[:, None, :]                          # (B, 1, 2)
    denom = cross2(d, e[None, :, :])                    # (B, S)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross2(w[None, :, :], e[None, :, :]) / denom
        u = cross2(w[None, :, :], d) / denom
    ok = (denom != 0) & (t >= 0) & (u >= 0) & (u <= 1)
    t = np.where(ok, t, np.inf)
    return t.min(axis=1)


def ray_circle_distances(origin, directions, centers, radii):
    """Distance along each unit ray to the first circle boundary it meets."""
    if len(centers) == 0:
        return np.full(len(directions), np.inf)
    oc = np.asarray(origin, dtype=float)[None, :] - centers        # (C, 2)
    b = directions @ oc.T                                          # (B, C)
    c = np.sum(oc * oc, axis=1) - np.asarray(radii) ** 2           # (C,)
    disc = b * b - c[None, :]
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(disc)
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 >= 0, t0, np.where(t1 >= 0, t1, np.inf))
    t = np.where(disc >= 0, t, np.inf)
    return t.min(axis=1)


def point_segment_distances(points, seg_a, seg_b):
    """Distance from each point (N, 2) to each segment; returns (N, S)."""
    points = np.asarray(points, dtype=float)
    e = seg_b - seg_a
    ee = np.sum(e * e, axis=1)
    rel = points[:, None, :] - seg_a[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.sum(rel * e[None, :, :], axis=2) / ee[None, :]
    u = np.clip(np.nan_to_num(u), 0.0, 1.0)
    closest = seg_a[None, :, :] + u[:, :, None] * e[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def points_in_polygon(points, poly):
    """Even-odd rule membership for points (N, 2) in a closed polygon (K, 2)."""
    points = np.asarray(points, dtype=float)
    poly = np.asarray(poly, dtype=float)
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossing = straddle & (x < xint)
    return (np.count_nonzero(crossing, axis=1) % 2) == 1


def polygon_edges(poly):
    poly = np.asarray(poly, dtype=float)
    return poly, np.roll(poly, -1, axis=0)
