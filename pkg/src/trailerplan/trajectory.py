"""Sampled trajectory container shared by primitives, planning and refinement.

Samples carry the full model state; controls are piecewise constant, with
u[i] active on [t[i], t[i+1]) and the final row duplicating the last active
input so the arrays stay the same length. ``stage_boundaries`` marks the
first sample index of each stage (primitive) in a concatenated plan; the
junction sample is shared between consecutive stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    stage_boundaries: tuple = (0,)
    cost: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.t.ndim != 1 or self.x.ndim != 2 or self.u.ndim != 2:
            raise ValueError("trajectory arrays have wrong rank")
        M = self.t.shape[0]
        if self.x.shape[0] != M or self.u.shape[0] != M:
            raise ValueError("trajectory arrays disagree on sample count")
        if M < 2:
            raise ValueError("trajectory needs at least 2 samples")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        sb = tuple(int(i) for i in self.stage_boundaries)
        if not sb or sb[0] != 0 or any(b <= a for a, b in zip(sb, sb[1:])) or sb[-1] >= M:
            raise ValueError("stage boundaries must be increasing sample indices starting at 0")
        self.stage_boundaries = sb

    def __len__(self):
        return self.t.shape[0]

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    @property
    def n_stages(self):
        return len(self.stage_boundaries)

    def stage_slices(self):
        """Per-stage sample slices; consecutive slices share the junction sample."""
        bounds = list(self.stage_boundaries) + [len(self) - 1]
        return [slice(bounds[i], bounds[i + 1] + 1) for i in range(self.n_stages)]

    def shifted(self, dt=None, dx=None):
        """Copy with times offset by dt and states offset by a constant dx."""
        t = self.t + (dt if dt is not None else 0.0)
        x = self.x + (np.asarray(dx, dtype=float) if dx is not None else 0.0)
        return Trajectory(t, x, self.u.copy(), self.stage_boundaries, self.cost, dict(self.meta))


def concatenate(parts):
    """Chain trajectories end to start, merging the shared junction samples.

    Each part is shifted in time to start where the previous one ended; its
    first sample is dropped (the previous part's last sample stands in for
    it). States are taken as-is: the caller is responsible for the parts
    actually lining up. Costs add; stage boundaries mark each part.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to concatenate")
    t = [parts[0].t]
    x = [parts[0].x]
    u = [parts[0].u]
    bounds = [0]
    cost = parts[0].cost
    for prev, part in zip(parts, parts[1:]):
        offset = t[-1][-1] - part.t[0]
        bounds.append(sum(len(a) for a in t) - 1)
        t.append(part.t[1:] + offset)
        x.append(part.x[1:])
        # the junction inherits the incoming part's first input
        u[-1] = u[-1].copy()
        u[-1][-1] = part.u[0]
        u.append(part.u[1:])
        cost += part.cost
    return Trajectory(
        np.concatenate(t),
        np.concatenate(x, axis=0),
        np.concatenate(u, axis=0),
        tuple(bounds),
        cost,
    )


def resample(traj: Trajectory, times, theta_index=None):
    """Linear-interpolation resample at the given times.

    With ``theta_index`` set, that state component is unwrapped before
    interpolation so seam crossings do not produce bogus midpoints. Controls
    are sampled zero-order-hold.
    """
    times = np.asarray(times, dtype=float)
    if times[0] < traj.t[0] - 1e-9 or times[-1] > traj.t[-1] + 1e-9:
        raise ValueError("resample times outside trajectory span")
    times = np.clip(times, traj.t[0], traj.t[-1])
    x = traj.x.copy()
    if theta_index is not None:
        x[:, theta_index] = np.unwrap(x[:, theta_index])
    xs = np.empty((times.shape[0], x.shape[1]))
    for j in range(x.shape[1]):
        xs[:, j] = np.interp(times, traj.t, x[:, j])
    idx = np.clip(np.searchsorted(traj.t, times, side="right") - 1, 0, len(traj) - 2)
    return xs, traj.u[idx]
