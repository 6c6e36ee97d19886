"""State-space discretization and graph search over motion primitives.

The discrete planning space is a uniform position grid for the last
trailer's axle, 16 irregular headings taken from two-step integer vectors,
and the velocity set {-v_max, 0, v_max}. Primitives connect these vertices;
A* with a precomputed free-space cost-to-go table solves the discrete OCP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from trailerplan.vehicle import VehicleParameters, wrap_angle


def _unique_angles():
    seen = []
    for i in range(-2, 3):
        for j in range(-2, 3):
            if i == 0 and j == 0:
                continue
            a = math.atan2(i, j)
            if not any(abs(a - b) < 1e-12 for b in seen):
                seen.append(a)
    return tuple(sorted(seen))


@dataclass(frozen=True)
class Discretization:
    """Grid resolution, heading set and velocity set of the lattice."""

    r: float = 1.0
    v_max: float = 1.0
    theta: tuple = field(default_factory=_unique_angles)

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("grid resolution must be positive")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        th = np.asarray(self.theta)
        if len(self.theta) != 16:
            raise ValueError("expected 16 lattice headings")
        if np.any(np.diff(th) <= 0) or th[0] <= -np.pi or th[-1] > np.pi:
            raise ValueError("headings must be sorted, unique, in (-pi, pi]")

    @property
    def velocities(self):
        return (-self.v_max, 0.0, self.v_max)

    # -- index helpers ----------------------------------------------------

    def theta_index(self, angle):
        """Nearest heading index by angular distance, ties to the smaller."""
        d = np.abs(wrap_angle(angle - np.asarray(self.theta)))
        return int(np.argmin(d))

    def v_index(self, v):
        d = np.abs(np.asarray(self.velocities) - v)
        return int(np.argmin(d))

    def heading_vector(self, i_theta):
        """Minimal integer grid step (dx, dy) along heading ``i_theta``."""
        a = self.theta[i_theta]
        best = None
        for i in range(-2, 3):
            for j in range(-2, 3):
                if (i, j) != (0, 0) and abs(wrap_angle(math.atan2(i, j) - a)) < 1e-12:
                    g = math.gcd(abs(i), abs(j))
                    cand = (j // g, i // g)
                    if best is None or abs(cand[0]) + abs(cand[1]) < abs(best[0]) + abs(best[1]):
                        best = cand
        if best is None:
            raise ValueError(f"heading index {i_theta} has no grid vector")
        return best

    def rotate_index(self, i_theta, quarter_turns):
        return self.theta_index(self.theta[i_theta] + quarter_turns * np.pi / 2.0)

    def mirror_index(self, i_theta):
        return self.theta_index(-self.theta[i_theta])

    def canonical_classes(self):
        """Heading indices generating all 16 under quarter-turns + mirror."""
        return (
            self.theta_index(0.0),
            self.theta_index(math.atan2(1, 2)),
            self.theta_index(math.pi / 4),
        )

    def class_of(self, i_theta):
        """(canonical index, quarter_turns, mirrored) reproducing i_theta."""
        for c in self.canonical_classes():
            for m in (False, True):
                for q in range(4):
                    j = self.mirror_index(c) if m else c
                    if self.rotate_index(j, q) == i_theta:
                        return c, q, m
        raise ValueError(f"heading index {i_theta} not reachable from canonical set")


class LatticeState(NamedTuple):
    """Grid vertex: integer position indices, heading index, velocity index."""

    ix: int
    iy: int
    i_theta: int
    i_v: int

    def expand(self, disc: Discretization, params: VehicleParameters):
        """Full state vector: straight configuration at the vertex pose."""
        lay = params.layout
        s = np.zeros(lay.n)
        s[lay.theta] = disc.theta[self.i_theta]
        s[lay.x] = self.ix * disc.r
        s[lay.y] = self.iy * disc.r
        s[lay.v] = disc.velocities[self.i_v]
        return s


def _round_half_down(x):
    # ties between two grid lines resolve toward the smaller index
    return int(math.ceil(x - 0.5))


def project_to_lattice(state, disc: Discretization, params: VehicleParameters) -> LatticeState:
    """Nearest lattice vertex to a full state (position, heading, speed)."""
    lay = params.layout
    state = np.asarray(state, dtype=float)
    ix = _round_half_down(state[lay.x] / disc.r)
    iy = _round_half_down(state[lay.y] / disc.r)
    it = disc.theta_index(state[lay.theta])
    iv = disc.v_index(state[lay.v])
    return LatticeState(ix, iy, it, iv)
