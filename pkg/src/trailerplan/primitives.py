"""Offline compilation of the motion-primitive library.

Each primitive is the solution of a free-final-time maneuver OCP started
at a lattice vertex. Heading changes and parallel displacements first
solve onto an under-determined terminal manifold, snap the free trailer
position to the nearby grid points, and re-solve with the full endpoint
pinned, keeping the cheapest rounding. Straights pin the endpoint from
the start since their displacement is a catalog parameter. Rotations by
quarter turns and the axis reflection then expand three canonical
headings into all sixteen.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from trailerplan import collision, nlp
from trailerplan.lattice import Discretization, LatticeState
from trailerplan.ocp import (
    CostWeights,
    TerminalManifold,
    _rollout_nodes,
    _smooth_rate,
    _substeps,
    transcribe,
)
from trailerplan.vehicle import VehicleParameters, wrap_angle

SPEC_KINDS = ("heading_change", "parallel", "straight")
LIBRARY_VERSION = 1
_MAGIC = b"TPLB"


class PrimitiveError(RuntimeError):
    """Primitive generation failed (solver or rounding)."""


class LibraryFormatError(ValueError):
    """Library file rejected (layout, version or vehicle mismatch)."""


@dataclass
class ManeuverSpec:
    """One catalog entry: maneuver kind, boundary speeds and target.

    ``target`` is the goal heading index for heading changes, the lateral
    displacement in metres for parallel maneuvers and the signed-free step
    count along the heading vector for straights. Bound overrides narrow
    the vehicle boxes for this maneuver only.
    """

    kind: str
    i_theta: int
    v_start: float
    v_end: float
    target: float
    state_overrides: dict = field(default_factory=dict)
    control_overrides: dict = field(default_factory=dict)
    tag: str = ""

    def __post_init__(self):
        if self.kind not in SPEC_KINDS:
            raise ValueError(f"unknown maneuver kind {self.kind!r}")
        if self.kind in ("heading_change", "parallel"):
            if abs(self.v_start) < 1e-12:
                raise ValueError(f"{self.kind} needs a nonzero start velocity")
            if abs(self.v_end - self.v_start) > 1e-12:
                raise ValueError(f"{self.kind} keeps its start velocity")
        else:
            steps = self.target
            if int(steps) != steps or int(steps) < 1:
                raise ValueError("straight target must be a positive step count")
            if abs(self.v_start) < 1e-12 and abs(self.v_end) < 1e-12:
                raise ValueError("straight needs motion at one endpoint")
            if self.v_start * self.v_end < -1e-12:
                raise ValueError("straight cannot reverse direction")

    @property
    def direction(self):
        return 1.0 if self.v_start + self.v_end > 0 else -1.0


def _vtag(v):
    return "+" if v > 1e-12 else ("-" if v < -1e-12 else "0")


def _primitive_id(kind, i_theta, v_start, v_end, param, tag):
    """Deterministic id from the maneuver semantics.

    ``param`` is the signed cyclic heading-index delta for heading
    changes, the commanded lateral offset for parallels and the step
    count for straights; it is what the symmetry maps act on, since the
    rounded endpoint does not determine the command.
    """
    suffix = f".{tag}" if tag else ""
    if kind == "heading_change":
        delta = (int(param) + 8) % 16 - 8
        return f"hc.t{i_theta:02d}.{_vtag(v_start)}.d{delta:+d}{suffix}"
    if kind == "parallel":
        return f"pa.t{i_theta:02d}.{_vtag(v_start)}.z{param:+g}{suffix}"
    return f"st.t{i_theta:02d}.{_vtag(v_start)}{_vtag(v_end)}.n{int(param)}{suffix}"


def spec_param(spec: ManeuverSpec) -> float:
    if spec.kind == "heading_change":
        return float((int(spec.target) - spec.i_theta + 8) % 16 - 8)
    return float(spec.target)


def spec_id(spec: ManeuverSpec) -> str:
    return _primitive_id(
        spec.kind, spec.i_theta, spec.v_start, spec.v_end, spec_param(spec), spec.tag
    )


@dataclass
class MotionPrimitive:
    """A solved maneuver in canonical position (start vertex at the origin)."""

    pid: str
    kind: str
    tag: str
    param: float
    start: LatticeState
    end: LatticeState
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cost: float
    _sweep: np.ndarray = None

    @property
    def duration(self):
        return float(self.t[-1])

    @property
    def displacement(self):
        return self.end.ix - self.start.ix, self.end.iy - self.start.iy

    def sweep(self, params: VehicleParameters, footprint: collision.Footprint):
        """Cached body-circle centers along the trajectory, shape (T, B, 2)."""
        if self._sweep is None:
            self._sweep = collision.circle_centers(params, footprint, self.x)
        return self._sweep


# -- generation -----------------------------------------------------------


def round_to_lattice(xy, disc: Discretization):
    """Grid points adjacent to a free position, nearest first.

    Coordinates already on the grid (within 1e-9) contribute a single
    value, so the candidate count is 4, 2 or 1.
    """
    axes = []
    for c in xy:
        s = c / disc.r
        if abs(s - round(s)) < 1e-9:
            axes.append((int(round(s)),))
        else:
            axes.append((int(np.floor(s)), int(np.floor(s)) + 1))
    out = []
    for ix in axes[0]:
        for iy in axes[1]:
            d = (ix * disc.r - xy[0]) ** 2 + (iy * disc.r - xy[1]) ** 2
            out.append((d, ix, iy))
    out.sort()
    return [(ix, iy) for _, ix, iy in out]


def _vertex_state(params, disc, i_theta, v):
    lay = params.layout
    s = np.zeros(lay.n)
    s[lay.theta] = disc.theta[i_theta]
    s[lay.v] = v
    return s


def _straight_guess(params, spec: ManeuverSpec, disc: Discretization, x_goal, K):
    """Rollout guess for a fixed-length straight with a speed transition.

    Accelerate to cruise speed, cruise, and blend to the end speed with
    smoothstep acceleration profiles; ramp lengths fit inside one grid
    step for the catalog's speeds, the cruise phase absorbs the rest.
    """
    lay = params.layout
    sign = spec.direction
    vm = sign * params.v_max
    d = float(np.hypot(x_goal[lay.x], x_goal[lay.y]))
    t1 = 1.875 * abs(vm - spec.v_start) / params.a_max
    t2 = 1.875 * abs(spec.v_end - vm) / params.a_max
    d_ramp = 0.5 * abs(spec.v_start + vm) * t1 + 0.5 * abs(vm + spec.v_end) * t2
    if d_ramp > d + 1e-9:
        raise PrimitiveError(f"straight of {d:.2f} m too short for its speed ramps")
    tc = (d - d_ramp) / abs(vm)
    tG = t1 + tc + t2
    tn = np.linspace(0.0, tG, K + 1)
    a_nodes = _smooth_rate(tn, 0.0, t1, vm - spec.v_start) + _smooth_rate(
        tn, t1 + tc, tG, spec.v_end - vm
    )
    U = np.zeros((K, lay.m))
    U[:, -1] = np.diff(a_nodes) / (tG / K)
    x0 = _vertex_state(params, disc, spec.i_theta, spec.v_start)
    X = _rollout_nodes(params, x0, U, tG, _substeps(tG / K, 0.05, 12))
    return X, U, tG


def generate_primitive(
    params: VehicleParameters,
    cost: CostWeights,
    spec: ManeuverSpec,
    disc: Discretization,
    K=50,
    options: nlp.SolveOptions = None,
) -> MotionPrimitive:
    """Solve one catalog maneuver down to an exact lattice-to-lattice edge."""
    lay = params.layout
    if not 0 <= spec.i_theta < len(disc.theta):
        raise ValueError("start heading index out of range")
    opts = options or nlp.SolveOptions(max_iter=400)
    x_start = _vertex_state(params, disc, spec.i_theta, spec.v_start)
    th0 = disc.theta[spec.i_theta]

    if spec.kind == "straight":
        vec = disc.heading_vector(spec.i_theta)
        steps = int(spec.target) * (1 if spec.direction > 0 else -1)
        end_ij = (steps * vec[0], steps * vec[1])
        goal = _vertex_state(params, disc, spec.i_theta, spec.v_end)
        goal[lay.x] = end_ij[0] * disc.r
        goal[lay.y] = end_ij[1] * disc.r
        guess = _straight_guess(params, spec, disc, goal, K)
        candidates = [(end_ij, goal, guess)]
        theta_end = th0
    else:
        if spec.kind == "heading_change":
            tgt = int(spec.target)
            if not 0 <= tgt < len(disc.theta):
                raise ValueError("target heading index out of range")
            theta_end = th0 + wrap_angle(disc.theta[tgt] - th0)
            manifold = TerminalManifold(kind="heading_change", theta_target=theta_end)
        else:
            theta_end = th0
            manifold = TerminalManifold(kind="parallel", z_lat=float(spec.target))
        ocp0 = transcribe(
            params,
            cost,
            x_start,
            manifold,
            K=K,
            state_overrides=spec.state_overrides,
            control_overrides=spec.control_overrides,
            name=spec_id(spec) + ".manifold",
        )
        sol0 = nlp.solve(ocp0.problem, opts)
        if not sol0.converged:
            raise PrimitiveError(f"{spec_id(spec)}: manifold solve {sol0.status}")
        X0, U0, tG0, _ = ocp0.unpack(sol0.z)
        C, dvec = manifold.residual_rows(params, x_start)
        res = float(np.abs(C @ X0[-1] - dvec).max())
        if res > 1e-8:
            raise PrimitiveError(f"{spec_id(spec)}: terminal residual {res:.1e}")
        candidates = []
        for ij in round_to_lattice((X0[-1, lay.x], X0[-1, lay.y]), disc):
            goal = _vertex_state(params, disc, spec.i_theta, spec.v_end)
            goal[lay.theta] = theta_end
            goal[lay.x] = ij[0] * disc.r
            goal[lay.y] = ij[1] * disc.r
            candidates.append((ij, goal, (X0, U0, tG0)))

    best = None
    for ij, goal, guess in candidates:
        pinned = TerminalManifold(kind="full_state", x_goal=goal)
        ocp = transcribe(
            params,
            cost,
            x_start,
            pinned,
            K=K,
            state_overrides=spec.state_overrides,
            control_overrides=spec.control_overrides,
            guess=guess,
            name=spec_id(spec),
        )
        sol = nlp.solve(ocp.problem, opts)
        if sol.converged and (best is None or sol.objective < best[0].objective):
            best = (sol, ocp, ij)
    if best is None:
        raise PrimitiveError(f"{spec_id(spec)}: no lattice rounding was solvable")

    sol, ocp, ij = best
    traj = ocp.dense_output(sol.z)
    start = LatticeState(0, 0, spec.i_theta, disc.v_index(spec.v_start))
    end = LatticeState(ij[0], ij[1], disc.theta_index(theta_end), disc.v_index(spec.v_end))
    prim = MotionPrimitive(
        pid=spec_id(spec),
        kind=spec.kind,
        tag=spec.tag,
        param=spec_param(spec),
        start=start,
        end=end,
        t=traj.t,
        x=traj.x,
        u=traj.u,
        cost=float(sol.objective),
    )
    _check_primitive(params, spec, prim)
    return prim


def _check_primitive(params, spec, prim):
    lay = params.layout
    x_lb, x_ub = params.state_bounds(spec.state_overrides)
    u_lb, u_ub = params.control_bounds(spec.control_overrides)
    tol = 1e-6
    if np.any(prim.x < x_lb - tol) or np.any(prim.x > x_ub + tol):
        raise PrimitiveError(f"{prim.pid}: state bound violated beyond {tol}")
    if np.any(prim.u < u_lb - tol) or np.any(prim.u > u_ub + tol):
        raise PrimitiveError(f"{prim.pid}: control bound violated beyond {tol}")


# -- symmetry expansion ---------------------------------------------------


def _rotate_ij(ij, q):
    ix, iy = ij
    for _ in range(q % 4):
        ix, iy = -iy, ix
    return ix, iy


def _transform(params, disc, prim: MotionPrimitive, q, m) -> MotionPrimitive:
    """Image of a primitive under mirror (about x) then q quarter turns."""
    lay = params.layout
    x = prim.x.copy()
    u = prim.u.copy()
    s0, s1 = prim.start, prim.end
    i0, i1 = s0.i_theta, s1.i_theta
    e_ij = (s1.ix, s1.iy)
    tag = prim.tag
    kind = prim.kind
    if m:
        x *= params.layout.mirror_state_signs()
        u *= params.layout.mirror_control_signs()
        i0, i1 = disc.mirror_index(i0), disc.mirror_index(i1)
        e_ij = (e_ij[0], -e_ij[1])
    if q:
        rot = q * np.pi / 2.0
        c, s = np.cos(rot), np.sin(rot)
        px, py = x[:, lay.x].copy(), x[:, lay.y].copy()
        x[:, lay.x] = c * px - s * py
        x[:, lay.y] = s * px + c * py
        x[:, lay.theta] += rot
        i0, i1 = disc.rotate_index(i0, q), disc.rotate_index(i1, q)
        e_ij = _rotate_ij(e_ij, q)
    param = prim.param
    if m and kind != "straight":
        param = -param
    vels = disc.velocities
    return MotionPrimitive(
        pid=_primitive_id(kind, i0, vels[s0.i_v], vels[s1.i_v], param, tag),
        kind=kind,
        tag=tag,
        param=param,
        start=LatticeState(0, 0, i0, s0.i_v),
        end=LatticeState(e_ij[0], e_ij[1], i1, s1.i_v),
        t=prim.t.copy(),
        x=x,
        u=u,
        cost=prim.cost,
    )


def expand_symmetries(params, disc: Discretization, seeds) -> list:
    """All distinct images of the seed primitives under the heading group.

    The eight mirror/rotation images of every seed are enumerated in a
    fixed order and deduplicated on (id); seeds whose class has a
    stabiliser produce coincident images, and full seed catalogs contain
    each other's mirrors, so duplicates are expected. The cheaper copy is
    kept when costs differ.
    """
    out = {}
    order = []
    for seed in seeds:
        for m in (False, True):
            for q in range(4):
                prim = _transform(params, disc, seed, q, m)
                kept = out.get(prim.pid)
                if kept is None:
                    out[prim.pid] = prim
                    order.append(prim.pid)
                elif prim.cost < kept.cost - 1e-12:
                    out[prim.pid] = prim
    return [out[k] for k in order]


# -- library --------------------------------------------------------------


@dataclass
class PrimitiveLibrary:
    """Expanded primitive set plus the discretization it was built for."""

    vehicle_hash: str
    r: float
    v_max: float
    dt: float
    catalog: str
    primitives: list
    version: int = LIBRARY_VERSION

    def __post_init__(self):
        ids = [p.pid for p in self.primitives]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate primitive ids in library")
        self._by_start = {}
        for p in self.primitives:
            self._by_start.setdefault((p.start.i_theta, p.start.i_v), []).append(p)

    def __len__(self):
        return len(self.primitives)

    def discretization(self) -> Discretization:
        return Discretization(r=self.r, v_max=self.v_max)

    def by_start(self, i_theta, i_v):
        return tuple(self._by_start.get((i_theta, i_v), ()))


def build_library(
    params: VehicleParameters,
    cost: CostWeights,
    disc: Discretization,
    specs,
    catalog="custom",
    K=50,
    options=None,
    progress=None,
) -> PrimitiveLibrary:
    """Generate every spec, expand symmetries and assemble the library.

    Specs are independent; this is the sequential form of the parallel
    map, kept deterministic by catalog order.
    """
    seeds = []
    for i, spec in enumerate(specs):
        prim = generate_primitive(params, cost, spec, disc, K=K, options=options)
        seeds.append(prim)
        if progress is not None:
            progress(i + 1, len(specs), prim)
    prims = expand_symmetries(params, disc, seeds)
    return PrimitiveLibrary(
        vehicle_hash=params.param_hash(),
        r=disc.r,
        v_max=disc.v_max,
        dt=0.05,
        catalog=catalog,
        primitives=prims,
    )


def default_catalog(params, disc: Discretization, gamma_variants=(0.0, 0.175, 0.35)):
    """Catalog over the canonical headings: per nonzero-speed heading, 4
    adjacent heading changes per steering-bound variant, lateral shifts of
    1..5 m to both sides, and 1- and 2-step straights over all speed
    transitions that do not reverse direction."""
    vmax = disc.v_max
    specs = []
    for c in disc.canonical_classes():
        for v in (vmax, -vmax):
            for dti in (-2, -1, 1, 2):
                for g in gamma_variants:
                    # pinning omega_s as well would add defect rows that are
                    # identically satisfied and over-determine the equality
                    # set; the running cost drives omega_s to zero anyway
                    specs.append(
                        ManeuverSpec(
                            kind="heading_change",
                            i_theta=c,
                            v_start=v,
                            v_end=v,
                            target=(c + dti) % len(disc.theta),
                            state_overrides={"gamma_max": g},
                            tag=f"g{int(round(g * 1000)):03d}",
                        )
                    )
            for z in (1.0, 2.0, 3.0, 4.0, 5.0):
                for zz in (z, -z):
                    specs.append(
                        ManeuverSpec(
                            kind="parallel", i_theta=c, v_start=v, v_end=v, target=zz
                        )
                    )
        for vs, ve in ((vmax, vmax), (vmax, 0.0), (0.0, vmax),
                       (-vmax, -vmax), (-vmax, 0.0), (0.0, -vmax)):
            for steps in (1, 2):
                specs.append(
                    ManeuverSpec(
                        kind="straight", i_theta=c, v_start=vs, v_end=ve, target=steps
                    )
                )
    return specs


# -- serialization --------------------------------------------------------


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, k):
        if self.off + k > len(self.buf):
            raise LibraryFormatError(
                f"truncated library file: needed {k} bytes at byte {self.off}"
            )
        out = self.buf[self.off : self.off + k]
        self.off += k
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def text(self):
        return self.take(self.u32()).decode("utf-8")

    def array(self, dtype, shape):
        n = int(np.prod(shape)) if shape else 1
        raw = self.take(n * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_library(lib: PrimitiveLibrary, path):
    """Deterministic binary container; layout documented in load_library."""
    n = lib.primitives[0].x.shape[1] if lib.primitives else 0
    m = lib.primitives[0].u.shape[1] if lib.primitives else 0
    header = {
        "catalog": lib.catalog,
        "count": len(lib.primitives),
        "dt": lib.dt,
        "n_controls": m,
        "n_states": n,
        "r": lib.r,
        "v_max": lib.v_max,
        "vehicle_hash": lib.vehicle_hash,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [_MAGIC, struct.pack("<H", lib.version), struct.pack("<I", len(hjson)), hjson]
    for p in lib.primitives:
        parts.append(_pack_str(p.pid))
        parts.append(struct.pack("<B", SPEC_KINDS.index(p.kind)))
        parts.append(_pack_str(p.tag))
        parts.append(struct.pack("<8i", *p.start, *p.end))
        parts.append(struct.pack("<dd", p.cost, p.param))
        parts.append(struct.pack("<I", p.t.shape[0]))
        parts.append(np.ascontiguousarray(p.t, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(p.x, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(p.u, dtype="<f8").tobytes())
    parts.append(b"END.")
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_library(path, params: VehicleParameters = None) -> PrimitiveLibrary:
    """Read a library container.

    Layout: magic "TPLB", u16 version, u32-length JSON header (catalog,
    count, dt, n_controls, n_states, r, v_max, vehicle_hash), then per
    primitive: id, kind byte, tag, 8 x i32 start/end vertex, f64 cost and
    parameter, u32 sample count T, and T-row little-endian f64 arrays
    t, x, u.
    Terminated by "END.". All lengths are validated with byte offsets.
    """
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != _MAGIC:
        raise LibraryFormatError("not a primitive library file (bad magic at byte 0)")
    version = struct.unpack("<H", rd.take(2))[0]
    if version != LIBRARY_VERSION:
        raise LibraryFormatError(f"unsupported library version {version}")
    header = json.loads(rd.text())
    if params is not None and header["vehicle_hash"] != params.param_hash():
        raise LibraryFormatError(
            "library was built for a different vehicle "
            f"(hash {header['vehicle_hash'][:12]}.. != {params.param_hash()[:12]}..)"
        )
    n, m = header["n_states"], header["n_controls"]
    prims = []
    for _ in range(header["count"]):
        pid = rd.text()
        kind = SPEC_KINDS[struct.unpack("<B", rd.take(1))[0]]
        tag = rd.text()
        vals = struct.unpack("<8i", rd.take(32))
        cost_val, param = struct.unpack("<dd", rd.take(16))
        T = rd.u32()
        t = rd.array("<f8", (T,))
        x = rd.array("<f8", (T, n))
        u = rd.array("<f8", (T, m))
        prims.append(
            MotionPrimitive(
                pid=pid,
                kind=kind,
                tag=tag,
                param=param,
                start=LatticeState(*vals[:4]),
                end=LatticeState(*vals[4:]),
                t=t,
                x=x,
                u=u,
                cost=cost_val,
            )
        )
    if rd.take(4) != b"END.":
        raise LibraryFormatError(f"missing end marker at byte {rd.off - 4}")
    return PrimitiveLibrary(
        vehicle_hash=header["vehicle_hash"],
        r=header["r"],
        v_max=header["v_max"],
        dt=header["dt"],
        catalog=header["catalog"],
        primitives=prims,
        version=version,
    )
