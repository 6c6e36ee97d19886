"""Recursive kinematics of a multi-steered N-trailer (MSNT) vehicle.

The vehicle is a car-like tractor (wheelbase L_0, front steering beta_0)
towing N trailers. Trailer i is connected through a hitch that sits at the
signed offset M_i behind the preceding axle and L_i ahead of its own axle.
Trailers listed in ``steerable`` additionally have a steerable axle with
angle gamma_i. The augmented state appends double-integrator chains for the
tractor steering, each trailer steering and the longitudinal motion, so the
control inputs are steering accelerations and longitudinal jerk.

State ordering (n = 7 + N + 2S, S = number of steerable trailers):

    [beta_0, beta_1..beta_N, gamma_s.., theta_N, x_N, y_N,
     omega_0, omega_s.., v_0, a_0]

Control ordering (m = 2 + S): [u_omega0, u_omega_s.., u_v].

All operations act on plain numpy arrays and broadcast over leading batch
dimensions; this keeps the shooting-based transcription cheap.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import yaml

CONFIG_VERSION = 1

#: guard band for cos() singularities, slightly above IEEE round-off at pi/2
_COS_GUARD = 1e-12


class SteeringDomainError(ValueError):
    """A steering or joint angle left the domain where the model is defined."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


def wrap_angle(theta):
    """Wrap angles to the interval (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    wrapped = theta - 2.0 * np.pi * np.ceil((theta - np.pi) / (2.0 * np.pi))
    # ceil maps exact odd multiples of pi to themselves, so pi stays pi
    return wrapped if wrapped.ndim else float(wrapped)


@dataclass(frozen=True)
class StateLayout:
    """Index map into the packed state vector for a given vehicle."""

    n_trailers: int
    n_steerable: int

    @property
    def beta0(self):
        return 0

    @property
    def beta(self):
        return slice(1, 1 + self.n_trailers)

    @property
    def gamma(self):
        return slice(1 + self.n_trailers, 1 + self.n_trailers + self.n_steerable)

    @property
    def theta(self):
        return 1 + self.n_trailers + self.n_steerable

    @property
    def x(self):
        return self.theta + 1

    @property
    def y(self):
        return self.theta + 2

    @property
    def omega0(self):
        return self.theta + 3

    @property
    def omega_s(self):
        start = self.omega0 + 1
        return slice(start, start + self.n_steerable)

    @property
    def v(self):
        return self.omega0 + 1 + self.n_steerable

    @property
    def a(self):
        return self.v + 1

    @property
    def n(self):
        return 7 + self.n_trailers + 2 * self.n_steerable

    @property
    def m(self):
        return 2 + self.n_steerable

    def mirror_state_signs(self):
        """Component signs under reflection about the x axis.

        Angles and angular rates flip, y flips, longitudinal quantities and
        x are even. Used by the symmetry expansion of the primitive library.
        """
        s = np.ones(self.n)
        s[self.beta0] = -1.0
        s[self.beta] = -1.0
        s[self.gamma] = -1.0
        s[self.theta] = -1.0
        s[self.y] = -1.0
        s[self.omega0] = -1.0
        s[self.omega_s] = -1.0
        return s

    def mirror_control_signs(self):
        s = np.ones(self.m)
        s[: 1 + self.n_steerable] = -1.0
        return s


@dataclass(frozen=True)
class VehicleParameters:
    """Geometry and physical bounds of an MSNT vehicle (units: m, rad, s).

    ``lengths`` holds L_0..L_N (tractor wheelbase first), ``hitch_offsets``
    holds M_1..M_N. Per-steerable-trailer bounds are tuples aligned with
    ``steerable`` (sorted trailer indices, 1-based).
    """

    n_trailers: int
    steerable: tuple[int, ...]
    lengths: tuple[float, ...]
    hitch_offsets: tuple[float, ...]
    beta0_max: float
    beta_max: tuple[float, ...]
    gamma_max: tuple[float, ...]
    omega0_max: float
    omega0_acc_max: float
    omega_s_max: tuple[float, ...]
    omega_s_acc_max: tuple[float, ...]
    v_max: float
    a_max: float
    jerk_max: float
    body_width: float = 1.9  # [m] footprint rectangle width, see collision module

    def __post_init__(self):
        N = self.n_trailers
        if N < 1:
            raise ValueError("need at least one trailer")
        object.__setattr__(self, "steerable", tuple(sorted(self.steerable)))
        if any(s < 1 or s > N for s in self.steerable):
            raise ValueError("steerable trailer indices must lie in 1..N")
        if len(set(self.steerable)) != len(self.steerable):
            raise ValueError("duplicate steerable trailer index")
        if len(self.lengths) != N + 1:
            raise ValueError("lengths must hold L_0..L_N")
        if len(self.hitch_offsets) != N:
            raise ValueError("hitch_offsets must hold M_1..M_N")
        if any(L <= 0 for L in self.lengths):
            raise ValueError("segment lengths must be positive")
        if not 0.0 < self.beta0_max < np.pi / 2:
            raise ValueError("beta0_max must lie in (0, pi/2)")
        if len(self.beta_max) != N or any(not 0.0 < b < np.pi for b in self.beta_max):
            raise ValueError("beta_max must hold N values in (0, pi)")
        S = len(self.steerable)
        if len(self.gamma_max) != S or any(not 0.0 < g < np.pi / 2 for g in self.gamma_max):
            raise ValueError("gamma_max must hold one value in (0, pi/2) per steerable trailer")
        rates = (self.omega0_max, self.omega0_acc_max, self.v_max, self.a_max, self.jerk_max)
        if any(r <= 0 for r in rates + self.omega_s_max + self.omega_s_acc_max):
            raise ValueError("rate, acceleration and jerk bounds must be positive")
        if len(self.omega_s_max) != S or len(self.omega_s_acc_max) != S:
            raise ValueError("per-steerable bounds must match the steerable set")

    @cached_property
    def layout(self) -> StateLayout:
        return StateLayout(self.n_trailers, len(self.steerable))

    @property
    def n_states(self):
        return self.layout.n

    @property
    def n_controls(self):
        return self.layout.m

    @cached_property
    def _gamma_column(self):
        """Map trailer index 1..N -> column in the gamma block, -1 if rigid."""
        col = {}
        for j, s in enumerate(self.steerable):
            col[s] = j
        return tuple(col.get(i, -1) for i in range(1, self.n_trailers + 1))

    def state_bounds(self, overrides=None):
        """Component-wise box (lower, upper) for the state vector.

        ``overrides`` may shrink selected bounds per maneuver; recognised
        keys: gamma_max (scalar cap applied to every steerable trailer),
        v_max, a_max, omega0_max, omega_s_max, beta0_max, beta_max.
        """
        ov = dict(overrides or {})
        lay = self.layout
        lo = np.full(lay.n, -np.inf)
        hi = np.full(lay.n, np.inf)

        def setbox(idx, bound):
            lo[idx] = -bound
            hi[idx] = bound

        setbox(lay.beta0, ov.get("beta0_max", self.beta0_max))
        beta_max = ov.get("beta_max", self.beta_max)
        lo[lay.beta] = -np.asarray(beta_max)
        hi[lay.beta] = np.asarray(beta_max)
        gmax = np.asarray(self.gamma_max, dtype=float)
        if "gamma_max" in ov:
            gmax = np.minimum(gmax, float(ov["gamma_max"]))
        lo[lay.gamma] = -gmax
        hi[lay.gamma] = gmax
        setbox(lay.omega0, ov.get("omega0_max", self.omega0_max))
        osmax = np.asarray(ov.get("omega_s_max", self.omega_s_max), dtype=float)
        lo[lay.omega_s] = -osmax
        hi[lay.omega_s] = osmax
        setbox(lay.v, ov.get("v_max", self.v_max))
        setbox(lay.a, ov.get("a_max", self.a_max))
        return lo, hi

    def control_bounds(self, overrides=None):
        ov = dict(overrides or {})
        m = self.layout.m
        hi = np.empty(m)
        hi[0] = ov.get("omega0_acc_max", self.omega0_acc_max)
        hi[1 : 1 + len(self.steerable)] = np.asarray(
            ov.get("omega_s_acc_max", self.omega_s_acc_max), dtype=float
        )
        hi[-1] = ov.get("jerk_max", self.jerk_max)
        return -hi, hi

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        return {
            "config_version": CONFIG_VERSION,
            "n_trailers": self.n_trailers,
            "steerable_trailers": list(self.steerable),
            "segment_lengths_m": [float(v) for v in self.lengths],
            "hitch_offsets_m": [float(v) for v in self.hitch_offsets],
            "max_tractor_steering_rad": float(self.beta0_max),
            "max_joint_angles_rad": [float(v) for v in self.beta_max],
            "max_trailer_steering_rad": [float(v) for v in self.gamma_max],
            "max_tractor_steering_rate": float(self.omega0_max),
            "max_tractor_steering_acc": float(self.omega0_acc_max),
            "max_trailer_steering_rate": [float(v) for v in self.omega_s_max],
            "max_trailer_steering_acc": [float(v) for v in self.omega_s_acc_max],
            "max_speed_mps": float(self.v_max),
            "max_acceleration": float(self.a_max),
            "max_jerk": float(self.jerk_max),
            "body_width_m": float(self.body_width),
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("config_version")
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported vehicle config version: {version!r}")
        return cls(
            n_trailers=int(data["n_trailers"]),
            steerable=tuple(data["steerable_trailers"]),
            lengths=tuple(data["segment_lengths_m"]),
            hitch_offsets=tuple(data["hitch_offsets_m"]),
            beta0_max=float(data["max_tractor_steering_rad"]),
            beta_max=tuple(data["max_joint_angles_rad"]),
            gamma_max=tuple(data["max_trailer_steering_rad"]),
            omega0_max=float(data["max_tractor_steering_rate"]),
            omega0_acc_max=float(data["max_tractor_steering_acc"]),
            omega_s_max=tuple(data["max_trailer_steering_rate"]),
            omega_s_acc_max=tuple(data["max_trailer_steering_acc"]),
            v_max=float(data["max_speed_mps"]),
            a_max=float(data["max_acceleration"]),
            jerk_max=float(data["max_jerk"]),
            body_width=float(data.get("body_width_m", 1.9)),
        )

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def param_hash(self) -> str:
        """Stable 16-hex-digit digest used to key library/HLUT artifacts."""
        canon = yaml.safe_dump(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def ms3t_parameters() -> VehicleParameters:
    """Three-trailer test vehicle: off-axle first hitch, steerable trailer 3."""
    return VehicleParameters(
        n_trailers=3,
        steerable=(3,),
        lengths=(4.6, 2.5, 7.0, 7.0),  # [m] L_0..L_3
        hitch_offsets=(1.6, 0.0, 0.0),  # [m] M_1..M_3
        beta0_max=0.73,  # [rad]
        beta_max=(0.87, 0.87, 0.87),  # [rad]
        gamma_max=(0.35,),  # [rad]
        omega0_max=0.8,  # [rad/s]
        omega0_acc_max=10.0,  # [rad/s^2]
        omega_s_max=(0.4,),  # [rad/s]
        omega_s_acc_max=(10.0,),  # [rad/s^2]
        v_max=1.0,  # [m/s]
        a_max=1.0,  # [m/s^2]
        jerk_max=40.0,  # [m/s^3]
    )


# -- kinematics ----------------------------------------------------------


def segment_jacobian(params, i, beta_i, gamma_i, gamma_prev):
    """2x2 map J_i taking (thetadot_{i-1}, v_{i-1}) to (thetadot_i, v_i).

    ``gamma_i``/``gamma_prev`` are the steering angles of trailer i and its
    predecessor; callers pass 0 for rigid axles (and gamma_0 = 0).
    """
    if not 1 <= i <= params.n_trailers:
        raise ValueError(f"segment index {i} outside 1..{params.n_trailers}")
    cg = np.cos(gamma_i)
    if np.any(np.abs(cg) < _COS_GUARD):
        raise SteeringDomainError(f"cos(gamma_{i}) vanished")
    L = params.lengths[i]
    M = params.hitch_offsets[i - 1]
    return np.array(
        [
            [-(M / L) * np.cos(beta_i - gamma_i) / cg, np.sin(beta_i - gamma_i + gamma_prev) / (L * cg)],
            [M * np.sin(beta_i) / cg, np.cos(beta_i + gamma_prev) / cg],
        ]
    )


def _gamma_per_trailer(params, gamma):
    """Spread the packed steering block to one angle per trailer (0 if rigid)."""
    gamma = np.asarray(gamma, dtype=float)
    shape = gamma.shape[:-1] + (params.n_trailers,)
    full = np.zeros(shape)
    for j, s in enumerate(params.steerable):
        full[..., s - 1] = gamma[..., j]
    return full


def _rate_chain(params, beta0, beta, gamma_full, v0):
    """Propagate (thetadot, v) through every segment, batched.

    Returns arrays ``thetadot[..., 0..N]`` and ``v[..., 0..N]`` where entry 0
    is the tractor. Raises when a steering angle reaches its cos() singularity.
    """
    cb0 = np.cos(beta0)
    if np.any(np.abs(cb0) < _COS_GUARD):
        raise SteeringDomainError("cos(beta_0) vanished")
    N = params.n_trailers
    td = [v0 * np.tan(beta0) / params.lengths[0]]
    vv = [v0]
    for i in range(1, N + 1):
        b = beta[..., i - 1]
        g = gamma_full[..., i - 1]
        g_prev = gamma_full[..., i - 2] if i >= 2 else np.zeros_like(g)
        cg = np.cos(g)
        if np.any(np.abs(cg) < _COS_GUARD):
            raise SteeringDomainError(f"cos(gamma_{i}) vanished")
        L = params.lengths[i]
        M = params.hitch_offsets[i - 1]
        a11 = -(M / L) * np.cos(b - g) / cg
        a12 = np.sin(b - g + g_prev) / (L * cg)
        a21 = M * np.sin(b) / cg
        a22 = np.cos(b + g_prev) / cg
        td_prev, v_prev = td[-1], vv[-1]
        td.append(a11 * td_prev + a12 * v_prev)
        vv.append(a21 * td_prev + a22 * v_prev)
    return np.stack(td, axis=-1), np.stack(vv, axis=-1)


def trailer_n_rates(params, state):
    """Orientation rate and longitudinal speed of the last trailer."""
    state = np.asarray(state, dtype=float)
    lay = params.layout
    gamma_full = _gamma_per_trailer(params, state[..., lay.gamma])
    td, vv = _rate_chain(
        params, state[..., lay.beta0], state[..., lay.beta], gamma_full, state[..., lay.v]
    )
    return td[..., -1], vv[..., -1]


def state_derivative(params, state, control):
    """Time derivative of the augmented state, broadcasting over batches."""
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    lay = params.layout
    N = params.n_trailers
    S = len(params.steerable)

    gamma_full = _gamma_per_trailer(params, state[..., lay.gamma])
    td, vv = _rate_chain(
        params, state[..., lay.beta0], state[..., lay.beta], gamma_full, state[..., lay.v]
    )

    deriv = np.empty_like(state)
    deriv[..., lay.beta0] = state[..., lay.omega0]
    # joint angles: beta_i = theta_{i-1} - theta_i
    deriv[..., lay.beta] = td[..., :-1] - td[..., 1:]
    deriv[..., lay.gamma] = state[..., lay.omega_s]
    gamma_N = gamma_full[..., N - 1]
    heading = state[..., lay.theta] + gamma_N
    deriv[..., lay.theta] = td[..., -1]
    deriv[..., lay.x] = vv[..., -1] * np.cos(heading)
    deriv[..., lay.y] = vv[..., -1] * np.sin(heading)
    deriv[..., lay.omega0] = control[..., 0]
    deriv[..., lay.omega_s] = control[..., 1 : 1 + S]
    deriv[..., lay.v] = state[..., lay.a]
    deriv[..., lay.a] = control[..., -1]
    return deriv


def ms3t_closed_form_derivative(params, state, control):
    """Hand-expanded model for the 3-trailer vehicle with steerable trailer 3.

    Written out termwise, independent of the recursive chain, so the two
    routes cross-check each other. Requires N=3, steerable set {3} and
    on-axle hitching for trailers 2 and 3.
    """
    if params.n_trailers != 3 or params.steerable != (3,):
        raise ValueError("closed form requires N=3 with steerable trailer 3")
    if params.hitch_offsets[1] != 0.0 or params.hitch_offsets[2] != 0.0:
        raise ValueError("closed form requires on-axle hitching M_2 = M_3 = 0")

    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    L0, L1, L2, L3 = params.lengths
    M1 = params.hitch_offsets[0]

    b0 = state[..., 0]
    b1 = state[..., 1]
    b2 = state[..., 2]
    b3 = state[..., 3]
    g3 = state[..., 4]
    th3 = state[..., 5]
    om0 = state[..., 8]
    om3 = state[..., 9]
    v0 = state[..., 10]
    a0 = state[..., 11]

    if np.any(np.abs(np.cos(b0)) < _COS_GUARD):
        raise SteeringDomainError("cos(beta_0) vanished")
    cg3 = np.cos(g3)
    if np.any(np.abs(cg3) < _COS_GUARD):
        raise SteeringDomainError("cos(gamma_3) vanished")

    tan_b0 = np.tan(b0)
    trac = M1 / L0 * np.sin(b1) * tan_b0 + np.cos(b1)

    db1 = v0 * (tan_b0 / L0 - np.sin(b1) / L1 + M1 / (L0 * L1) * np.cos(b1) * tan_b0)
    db2 = v0 * (
        (np.sin(b1) / L1 - M1 / (L0 * L1) * np.cos(b1) * tan_b0)
        - np.sin(b2) / L2 * trac
    )
    db3 = v0 * (
        np.sin(b2) / L2 * trac
        - np.sin(b3 - g3) / (L3 * cg3) * np.cos(b2) * trac
    )
    dth3 = v0 * np.sin(b3 - g3) / (L3 * cg3) * np.cos(b2) * trac
    v3 = v0 * np.cos(b3) / cg3 * np.cos(b2) * trac

    deriv = np.empty_like(state)
    deriv[..., 0] = om0
    deriv[..., 1] = db1
    deriv[..., 2] = db2
    deriv[..., 3] = db3
    deriv[..., 4] = om3
    deriv[..., 5] = dth3
    deriv[..., 6] = v3 * np.cos(th3 + g3)
    deriv[..., 7] = v3 * np.sin(th3 + g3)
    deriv[..., 8] = control[..., 0]
    deriv[..., 9] = control[..., 1]
    deriv[..., 10] = a0
    deriv[..., 11] = control[..., 2]
    return deriv


def rk4_step(params, state, control, h):
    """One classical Runge-Kutta step; batched; no angle wrapping."""
    k1 = state_derivative(params, state, control)
    k2 = state_derivative(params, state + 0.5 * h * k1, control)
    k3 = state_derivative(params, state + 0.5 * h * k2, control)
    k4 = state_derivative(params, state + h * k3, control)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(params, state, control, dt, n_steps=None):
    """Propagate the model with piecewise-constant controls.

    ``control`` is either a single control vector held for all steps or an
    array of shape (n_steps, m). Returns ``n_steps + 1`` samples; theta_N is
    wrapped to (-pi, pi] in the output only, the internal chain stays
    unwrapped.
    """
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if control.ndim == 1:
        if n_steps is None:
            raise ValueError("n_steps required for a single held control")
        control = np.broadcast_to(control, (n_steps, control.shape[0]))
    elif n_steps is None:
        n_steps = control.shape[0]
    elif control.shape[0] != n_steps:
        raise ValueError("control rows must match n_steps")

    lay = params.layout
    out = np.empty((n_steps + 1, lay.n))
    out[0] = state
    current = state
    for k in range(n_steps):
        try:
            current = rk4_step(params, current, control[k], dt)
        except SteeringDomainError as err:
            raise SteeringDomainError(f"{err} at step {k}", step=k) from None
        out[k + 1] = current
    out[:, lay.theta] = wrap_angle(out[:, lay.theta])
    return out
