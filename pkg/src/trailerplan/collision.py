"""Bounding-circle vehicle footprint and obstacle clearance tests.

Body poses are reconstructed from the trailer-N pose carried in the state:
walking the chain toward the tractor, each segment heading adds the joint
angle (theta_{i-1} = theta_i + beta_i) and each rear-axle position follows
from the axle distance L_i plus the hitching offset M_i along the leading
body. Every body is covered by circles placed on its axle-to-hitch axis, so
clearance tests reduce to circle/circle and circle/polygon distances.

Obstacles are circles plus convex polygons. All clearance values are
boundary distances in metres; negative means overlap. With no obstacles a
large finite sentinel (1e9) is returned instead of infinity so downstream
minimum-reductions stay well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vehicle import VehicleParameters

NO_OBSTACLE_CLEARANCE = 1e9


@dataclass(frozen=True)
class Footprint:
    """Circle layout covering each vehicle body.

    ``offsets[i]`` holds the axial circle-center offsets of body i (tractor
    first), measured forward from the body's rear axle. All circles share one
    radius. ``width`` is the body rectangle width the layout must cover; the
    covering property is validated by ``default_footprint``.
    """

    offsets: tuple
    radius: float = 2.0
    width: float = 1.9

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")
        if self.width <= 0:
            raise ValueError("body width must be positive")
        object.__setattr__(self, "offsets", tuple(tuple(float(o) for o in row) for row in self.offsets))

    @property
    def n_circles(self):
        return sum(len(row) for row in self.offsets)

    @property
    def radii(self):
        return np.full(self.n_circles, self.radius)


def default_footprint(params: VehicleParameters, radius=2.0, width=None, circles_per_body=2):
    """Evenly spread circles over each body and verify rectangle coverage.

    With c circles on a body of length L, circle j sits at (2j+1)L/(2c), so
    each covers an L/c slab of the width-w rectangle. Coverage is checked on
    a sampled grid of the rectangle; an uncoverable combination (radius too
    small for the slab diagonal) raises instead of silently under-covering.
    """
    if width is None:
        width = params.body_width
    offsets = []
    for L in params.lengths:
        c = max(1, int(circles_per_body))
        offsets.append(tuple((2 * j + 1) * L / (2 * c) for j in range(c)))
    fp = Footprint(offsets=tuple(offsets), radius=radius, width=width)
    for L, offs in zip(params.lengths, fp.offsets):
        xs = np.linspace(0.0, L, 48)
        ys = np.linspace(-width / 2, width / 2, 16)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        centers = np.stack([np.asarray(offs), np.zeros(len(offs))], axis=1)
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        if not np.all(d2.min(axis=1) <= radius**2 + 1e-12):
            raise ValueError(
                f"circle layout (r={radius}, width={width}) does not cover a body of length {L}"
            )
    return fp


@dataclass(frozen=True)
class ObstacleSet:
    """Workspace obstacles: circles (cx, cy, r) and convex CCW polygons."""

    circles: tuple = ()
    polygons: tuple = field(default=(), repr=False)

    def __post_init__(self):
        circs = tuple((float(x), float(y), float(r)) for x, y, r in self.circles)
        if any(c[2] <= 0 for c in circs):
            raise ValueError("obstacle radii must be positive")
        polys = []
        for poly in self.polygons:
            v = np.asarray(poly, dtype=float)
            if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
                raise ValueError("polygon needs at least 3 planar vertices")
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            area2 = float(np.sum(v[:, 0] * np.roll(v, -1, axis=0)[:, 1] - v[:, 1] * np.roll(v, -1, axis=0)[:, 0]))
            if abs(area2) < 1e-12:
                raise ValueError("degenerate polygon")
            if area2 < 0:  # normalise to CCW
                v = v[::-1].copy()
                e = np.roll(v, -1, axis=0) - v
                cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            if np.any(cross < -1e-10):
                raise ValueError("polygon must be convex")
            polys.append(v)
        object.__setattr__(self, "circles", circs)
        object.__setattr__(self, "polygons", tuple(polys))

    @property
    def empty(self):
        return not self.circles and not self.polygons

    def to_dict(self):
        return {
            "circles": [list(c) for c in self.circles],
            "polygons": [np.asarray(p).tolist() for p in self.polygons],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            circles=tuple(tuple(c) for c in d.get("circles", ())),
            polygons=tuple(np.asarray(p, dtype=float) for p in d.get("polygons", ())),
        )


def body_poses(params: VehicleParameters, state):
    """Rear-axle pose (x, y, theta) of every body, tractor first.

    Accepts batched states with any leading shape; returns (..., N+1, 3).
    """
    state = np.asarray(state, dtype=float)
    lay = params.layout
    N = params.n_trailers
    theta = np.empty(state.shape[:-1] + (N + 1,))
    theta[..., N] = state[..., lay.theta]
    beta = state[..., lay.beta]
    for i in range(N, 0, -1):
        theta[..., i - 1] = theta[..., i] + beta[..., i - 1]
    pos = np.empty(state.shape[:-1] + (N + 1, 2))
    pos[..., N, 0] = state[..., lay.x]
    pos[..., N, 1] = state[..., lay.y]
    for i in range(N, 0, -1):
        L = params.lengths[i]
        M = params.hitch_offsets[i - 1]
        pos[..., i - 1, 0] = pos[..., i, 0] + L * np.cos(theta[..., i]) + M * np.cos(theta[..., i - 1])
        pos[..., i - 1, 1] = pos[..., i, 1] + L * np.sin(theta[..., i]) + M * np.sin(theta[..., i - 1])
    return np.concatenate([pos, theta[..., None]], axis=-1)


def circle_centers(params: VehicleParameters, footprint: Footprint, state):
    """Footprint circle centers for (batched) states; returns (..., B, 2)."""
    poses = body_poses(params, state)
    out = []
    for i, offs in enumerate(footprint.offsets):
        c, s = np.cos(poses[..., i, 2]), np.sin(poses[..., i, 2])
        for off in offs:
            out.append(
                np.stack(
                    [poses[..., i, 0] + off * c, poses[..., i, 1] + off * s],
                    axis=-1,
                )
            )
    return np.stack(out, axis=-2)


def point_polygon_distance(points, poly):
    """Signed distance from points (..., 2) to a convex CCW polygon boundary.

    Positive outside, negative inside (so subtracting a circle radius gives
    a clearance that goes negative on overlap, matching the circle case).
    """
    points = np.asarray(points, dtype=float)
    v = np.asarray(poly, dtype=float)
    w = np.roll(v, -1, axis=0) - v
    wlen2 = (w**2).sum(axis=1)
    d = points[..., None, :] - v  # (..., V, 2)
    t = np.clip((d * w).sum(axis=-1) / np.maximum(wlen2, 1e-300), 0.0, 1.0)
    closest = v + t[..., None] * w
    edge_dist = np.linalg.norm(points[..., None, :] - closest, axis=-1).min(axis=-1)
    cross = w[:, 0] * d[..., 1] - w[:, 1] * d[..., 0]
    inside = np.all(cross >= 0, axis=-1)
    return np.where(inside, -edge_dist, edge_dist)


def state_clearance(params: VehicleParameters, footprint: Footprint, obstacles: ObstacleSet, state):
    """Minimum boundary distance between footprint circles and obstacles.

    Batched over leading state dims; scalar for a single state. With an
    empty obstacle set returns the NO_OBSTACLE_CLEARANCE sentinel.
    """
    state = np.asarray(state, dtype=float)
    scalar = state.ndim == 1
    if obstacles.empty:
        out = np.full(state.shape[:-1], NO_OBSTACLE_CLEARANCE)
        return float(out) if scalar else out
    centers = circle_centers(params, footprint, state)  # (..., B, 2)
    rb = footprint.radius
    best = np.full(state.shape[:-1] + (centers.shape[-2],), NO_OBSTACLE_CLEARANCE)
    for cx, cy, r in obstacles.circles:
        d = np.linalg.norm(centers - np.array([cx, cy]), axis=-1) - rb - r
        best = np.minimum(best, d)
    for poly in obstacles.polygons:
        d = point_polygon_distance(centers, poly) - rb
        best = np.minimum(best, d)
    out = best.min(axis=-1)
    return float(out) if scalar else out


def sweep_check(params, footprint, obstacles, states, margin=0.0):
    """First sample index with clearance below margin, or None if clean.

    ``states`` is an (M, n) sample array; callers are responsible for a
    sampling step fine enough for the margin (<= 0.05 s for stored
    primitives).
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2:
        raise ValueError("sweep_check expects an (M, n) sample array")
    clear = state_clearance(params, footprint, obstacles, states)
    bad = np.where(clear < margin)[0]
    return int(bad[0]) if bad.size else None
