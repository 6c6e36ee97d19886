"""Multiple-shooting transcription of the maneuver OCPs with free final time.

The continuous problem is scaled to a unit horizon: interval k covers a fixed
fraction f_k of the free duration t_G, so the decision vector is

    z = [x_0 .. x_K | u_0 .. u_{K-1} | t_G | (eps_I, eps_G)]

with states at K+1 nodes, piecewise-constant controls, and (for the relaxed
planning form) two boundary homotopy variables. Dynamics enter as RK4 defect
equalities, each interval integrated with n_sub uniform substeps; the same
substep states also receive box-bound inequality rows so every stored sample
respects the limits, not just the nodes. The running cost is accumulated by
a trapezoidal rule over the substep grid, which keeps the transcribed
objective consistent with costs integrated on the dense output.

Constraint Jacobians come from central finite differences batched over all
intervals and perturbation columns at once; each interval's rollout depends
only on (x_k, u_k, t_G), so one vectorised pass yields the defect blocks,
the substep bound rows and the objective gradient together. Rollouts are
memoised by decision-vector bytes since the solver evaluates values and
derivatives at the same iterates.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import collision
from .nlp import NlpProblem
from .trajectory import Trajectory, resample
from .vehicle import VehicleParameters, rk4_step, wrap_angle

_FD_REL = 1e-6
_H_FD = 2e-4  # second-difference step; balances truncation vs roundoff
T_MIN = 0.1


# -- cost -----------------------------------------------------------------


@dataclass(frozen=True)
class CostWeights:
    """Quadratic running cost l(x, u) = x'Qx + u'Ru plus a time term."""

    Q: np.ndarray
    R: np.ndarray
    time_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        for name, M in (("Q", self.Q), ("R", self.R)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if M.size and np.linalg.eigvalsh(M).min() < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")

    @classmethod
    def default(cls, params: VehicleParameters):
        """Penalise tractor steering, trailer steering, their rates and accel.

        Reproduces l = (beta_0^2 + gamma_s^2 + 10 w_0^2 + 10 w_s^2 + a^2)/2
        for the three-trailer instance, generalised over the steered set.
        """
        lay = params.layout
        q = np.zeros(lay.n)
        q[lay.beta0] = 0.5
        q[lay.gamma] = 0.5
        q[lay.omega0] = 5.0
        q[lay.omega_s] = 5.0
        q[lay.a] = 0.5
        return cls(Q=np.diag(q), R=0.5 * np.eye(lay.m))


def stage_cost(cost: CostWeights, state, control):
    """l(x, u); batched over any leading dims."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    lx = np.einsum("...i,ij,...j->...", x, cost.Q, x)
    lu = np.einsum("...i,ij,...j->...", u, cost.R, u)
    return lx + lu


# -- boundary -------------------------------------------------------------

MANIFOLD_KINDS = ("heading_change", "parallel", "straight", "full_state")


@dataclass(frozen=True)
class TerminalManifold:
    """Linear terminal condition C x(t_G) = d with the unconstrained
    directions left free.

    heading_change(theta_target): equilibrium at the new heading, position
    free. parallel(z_lat): equilibrium displaced laterally, longitudinal
    free. straight(v_target): speed transition on the current line,
    longitudinal free. full_state(x_goal): every component pinned.
    The internal states omitted from the first three kinds are pinned to
    zero, matching the lattice vertex convention; speed is carried over from
    the boundary state where the kind does not set it.
    """

    kind: str
    theta_target: float = None
    z_lat: float = None
    v_target: float = None
    x_goal: np.ndarray = None

    def __post_init__(self):
        if self.kind not in MANIFOLD_KINDS:
            raise ValueError(f"unknown terminal manifold kind {self.kind!r}")
        if self.x_goal is not None:
            object.__setattr__(self, "x_goal", np.asarray(self.x_goal, dtype=float))

    def residual_rows(self, params: VehicleParameters, x_start):
        """Rows (C, d) of the terminal condition, branch-matched to x_start.

        Raises on no-op maneuvers (target equal to the start state) so the
        catalog cannot contain zero-length primitives.
        """
        lay = params.layout
        n = lay.n
        x_start = np.asarray(x_start, dtype=float)
        th0 = x_start[lay.theta]
        v0 = x_start[lay.v]

        def selector(idx, target=0.0):
            row = np.zeros(n)
            row[idx] = 1.0
            return row, target

        def lateral_row(offset):
            row = np.zeros(n)
            row[lay.x] = -np.sin(th0)
            row[lay.y] = np.cos(th0)
            d = -np.sin(th0) * x_start[lay.x] + np.cos(th0) * x_start[lay.y] + offset
            return row, d

        zero_idx = (
            [lay.beta0]
            + list(range(lay.beta.start, lay.beta.stop))
            + list(range(lay.gamma.start, lay.gamma.stop))
            + [lay.omega0]
            + list(range(lay.omega_s.start, lay.omega_s.stop))
            + [lay.a]
        )
        rows = []
        if self.kind == "heading_change":
            if self.theta_target is None:
                raise ValueError("heading_change needs theta_target")
            dth = wrap_angle(self.theta_target - th0)
            if abs(dth) < 1e-9:
                raise ValueError("no-op maneuver: heading target equals start heading")
            if abs(v0) < 1e-9:
                raise ValueError("heading change needs a nonzero boundary speed")
            rows = [selector(i) for i in zero_idx]
            rows.append(selector(lay.theta, th0 + dth))
            rows.append(selector(lay.v, v0))
        elif self.kind == "parallel":
            if self.z_lat is None:
                raise ValueError("parallel needs z_lat")
            if abs(self.z_lat) < 1e-9:
                raise ValueError("no-op maneuver: zero lateral displacement")
            if abs(v0) < 1e-9:
                raise ValueError("parallel maneuver needs a nonzero boundary speed")
            rows = [selector(i) for i in zero_idx]
            rows.append(selector(lay.theta, th0))
            rows.append(lateral_row(self.z_lat))
            rows.append(selector(lay.v, v0))
        elif self.kind == "straight":
            if self.v_target is None:
                raise ValueError("straight needs v_target")
            if abs(self.v_target - v0) < 1e-9:
                raise ValueError("no-op maneuver: no speed change on a free straight")
            rows = [selector(i) for i in zero_idx]
            rows.append(selector(lay.theta, th0))
            rows.append(lateral_row(0.0))
            rows.append(selector(lay.v, self.v_target))
        else:  # full_state
            if self.x_goal is None:
                raise ValueError("full_state needs x_goal")
            if self.x_goal.shape != (n,):
                raise ValueError("x_goal dimension mismatch")
            goal = self.x_goal.copy()
            goal[lay.theta] = th0 + wrap_angle(goal[lay.theta] - th0)
            if np.max(np.abs(goal - x_start)) < 1e-9:
                raise ValueError("no-op maneuver: goal equals start state")
            rows = [selector(i, goal[i]) for i in range(n)]
        C = np.stack([r for r, _ in rows])
        d = np.array([t for _, t in rows])
        return C, d


@dataclass(frozen=True)
class HomotopyParams:
    """Boundary relaxation variables and their linear penalty weights."""

    eps_init: float = 1.0
    eps_goal: float = 1.0
    c_p: tuple = (1000.0, 1000.0)

    def __post_init__(self):
        if not (0.0 <= self.eps_init <= 1.0 and 0.0 <= self.eps_goal <= 1.0):
            raise ValueError("homotopy parameters must lie in [0, 1]")
        c = tuple(float(v) for v in self.c_p)
        if len(c) != 2 or any(v <= 0 for v in c):
            raise ValueError("penalty weights must be two positive values")
        object.__setattr__(self, "c_p", c)


# -- transcription --------------------------------------------------------


class TranscribedOcp:
    """Shooting NLP plus the index bookkeeping to interpret its solutions.

    Instances are built by ``transcribe`` / ``transcribe_relaxed``; the
    ``problem`` attribute is the NlpProblem handed to the solver. Rollout
    caches make repeated value/derivative queries at one iterate cheap; the
    object is therefore not safe to share across concurrent solves, but the
    underlying arrays are never mutated.
    """

    def __init__(
        self,
        params,
        cost,
        K,
        n_sub,
        fractions,
        x_lb,
        x_ub,
        u_lb,
        u_ub,
        t_ub,
        z0,
        eq_extra,
        eps_dim=0,
        c_p=(),
        node_v_bounds=None,
        pin_first_node=None,
        obstacle_rows=None,
        footprint=None,
        exact_hessian=False,
        locked_components=(),
        name="ocp",
    ):
        lay = params.layout
        self.params = params
        self.cost = cost
        self.layout = lay
        self.K = int(K)
        self.n_sub = int(n_sub)
        self.fractions = np.asarray(fractions, dtype=float)
        self.x_lb, self.x_ub = x_lb, x_ub
        self._locked = tuple(sorted(int(j) for j in locked_components))
        self.eps_dim = int(eps_dim)
        self.c_p = np.asarray(c_p, dtype=float)
        self.footprint = footprint
        self.name = name
        n, m = lay.n, lay.m
        self.n_states = n
        self.n_controls = m
        self.off_u = (self.K + 1) * n
        self.it = self.off_u + self.K * m
        self.n_z = self.it + 1 + self.eps_dim
        if abs(self.fractions.sum() - 1.0) > 1e-12 or np.any(self.fractions <= 0):
            raise ValueError("interval fractions must be positive and sum to 1")

        A_extra, b_extra = eq_extra
        self._A_extra = A_extra.tocsr()
        self._b_extra = np.asarray(b_extra, dtype=float)

        # variable bounds
        lb = np.empty(self.n_z)
        ub = np.empty(self.n_z)
        lb[: self.off_u] = np.tile(x_lb, self.K + 1)
        ub[: self.off_u] = np.tile(x_ub, self.K + 1)
        if node_v_bounds is not None:
            for k, (vlo, vhi) in enumerate(node_v_bounds):
                lb[k * n + lay.v] = vlo
                ub[k * n + lay.v] = vhi
        if pin_first_node is not None:
            lb[:n] = pin_first_node
            ub[:n] = pin_first_node
        lb[self.off_u : self.it] = np.tile(u_lb, self.K)
        ub[self.off_u : self.it] = np.tile(u_ub, self.K)
        lb[self.it] = T_MIN
        ub[self.it] = t_ub
        if self.eps_dim:
            lb[self.it + 1 :] = 0.0
            ub[self.it + 1 :] = 1.0

        self._build_templates(obstacle_rows)

        q_node = 2.0 * np.abs(np.diag(cost.Q)) + 0.05
        r_node = 2.0 * np.abs(np.diag(cost.R)) + 0.05
        t_guess = z0[self.it]
        h = self.fractions * t_guess
        w_node = np.concatenate([[h[0] / 2], (h[:-1] + h[1:]) / 2, [h[-1] / 2]])
        hess0 = np.empty(self.n_z)
        hess0[: self.off_u] = np.outer(w_node, q_node).ravel() + 0.05
        hess0[self.off_u : self.it] = np.outer(h, r_node).ravel()
        hess0[self.it] = 1.0
        if self.eps_dim:
            hess0[self.it + 1 :] = 1.0

        self._cache = OrderedDict()
        self.problem = NlpProblem(
            n=self.n_z,
            objective=self._objective,
            gradient=self._gradient,
            c_eq=self._c_eq,
            jac_eq=self._jac_eq,
            c_ineq=self._c_ineq if self._n_ineq else None,
            jac_ineq=self._jac_ineq if self._n_ineq else None,
            lb=lb,
            ub=ub,
            z0=z0,
            hess0_diag=hess0,
            lag_hess=self.lagrangian_hessian if exact_hessian else None,
            name=name,
        )

    # -- indexing ---------------------------------------------------------

    def unpack(self, z):
        n, m = self.n_states, self.n_controls
        X = z[: self.off_u].reshape(self.K + 1, n)
        U = z[self.off_u : self.it].reshape(self.K, m)
        tG = float(z[self.it])
        eps = z[self.it + 1 :].copy() if self.eps_dim else None
        return X, U, tG, eps

    def pack(self, X, U, tG, eps=None):
        parts = [np.asarray(X, float).ravel(), np.asarray(U, float).ravel(), [float(tG)]]
        if self.eps_dim:
            parts.append(np.ones(self.eps_dim) if eps is None else np.asarray(eps, float))
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    # -- rollout and sensitivities ---------------------------------------

    def _entry(self, z):
        key = z.tobytes()
        if key not in self._cache:
            if len(self._cache) >= 8:
                self._cache.popitem(last=False)
            self._cache[key] = {}
        self._cache.move_to_end(key)
        return self._cache[key]

    def _roll(self, starts, controls, h):
        out = np.empty((self.n_sub + 1,) + starts.shape)
        out[0] = starts
        x = starts
        hh = h[..., None]
        for j in range(self.n_sub):
            x = rk4_step(self.params, x, controls, hh)
            out[j + 1] = x
        return out

    def _chains(self, z):
        e = self._entry(z)
        if "S" not in e:
            X, U, tG, _ = self.unpack(z)
            h = self.fractions * tG / self.n_sub
            e["S"] = self._roll(X[:-1], U, h)  # (n_sub+1, K, n)
        return e["S"]

    def _sens(self, z):
        e = self._entry(z)
        if "dS" not in e:
            X, U, tG, _ = self.unpack(z)
            n, m, K = self.n_states, self.n_controls, self.K
            C = n + m + 1
            d_x = _FD_REL * np.maximum(1.0, np.abs(X[:-1]))
            d_u = _FD_REL * np.maximum(1.0, np.abs(U))
            d_t = _FD_REL * max(1.0, abs(tG))
            starts = np.repeat(X[:-1, None, :], 2 * C, axis=1)
            ctrls = np.repeat(U[:, None, :], 2 * C, axis=1)
            idx = np.arange(n)
            starts[:, 2 * idx, idx] += d_x
            starts[:, 2 * idx + 1, idx] -= d_x
            jdx = np.arange(m)
            ctrls[:, 2 * (n + jdx), jdx] += d_u
            ctrls[:, 2 * (n + jdx) + 1, jdx] -= d_u
            h = np.repeat((self.fractions * tG / self.n_sub)[:, None], 2 * C, axis=1)
            h[:, 2 * (n + m)] = self.fractions * (tG + d_t) / self.n_sub
            h[:, 2 * (n + m) + 1] = self.fractions * (tG - d_t) / self.n_sub
            out = self._roll(starts, ctrls, h)  # (n_sub+1, K, 2C, n)
            deltas = np.concatenate([d_x, d_u, np.full((K, 1), d_t)], axis=1)  # (K, C)
            diff = out[:, :, 0::2, :] - out[:, :, 1::2, :]
            dS = diff / (2.0 * deltas[None, :, :, None])
            e["dS"] = np.transpose(dS, (2, 0, 1, 3))  # (C, n_sub+1, K, n)
        return e["dS"]

    def _centers(self, z):
        e = self._entry(z)
        if "centers" not in e:
            X = self.unpack(z)[0]
            e["centers"] = collision.circle_centers(self.params, self.footprint, X)
        return e["centers"]

    def _center_sens(self, z):
        e = self._entry(z)
        if "dcenters" not in e:
            X = self.unpack(z)[0]
            n = self.n_states
            d = _FD_REL * np.maximum(1.0, np.abs(X))
            pert = np.repeat(X[:, None, :], 2 * n, axis=1)
            idx = np.arange(n)
            pert[:, 2 * idx, idx] += d
            pert[:, 2 * idx + 1, idx] -= d
            cc = collision.circle_centers(self.params, self.footprint, pert)
            dC = (cc[:, 0::2] - cc[:, 1::2]) / (2.0 * d[:, :, None, None])
            e["dcenters"] = dC  # (K+1, n, B, 2)
        return e["dcenters"]

    # -- constraint templates --------------------------------------------

    def _build_templates(self, obstacle_rows):
        n, m, K = self.n_states, self.n_controls, self.K
        C = n + m + 1
        xcols = (np.arange(K)[:, None] * n + np.arange(n)[None, :])  # (K, n)
        ucols = (self.off_u + np.arange(K)[:, None] * m + np.arange(m)[None, :])
        percols = np.concatenate(
            [xcols, ucols, np.full((K, 1), self.it)], axis=1
        )  # (K, C)
        self._percols = percols

        # defect rows: d_k = x_{k+1} - Phi(x_k, u_k, t_G); components whose
        # pinned integrator chain makes the defect identically zero are left
        # out, since keeping them would duplicate the variable pins
        keep = np.array([j for j in range(n) if j not in self._locked], dtype=np.int64)
        self._def_comp = keep
        nk = keep.size
        cols = np.empty((K, nk, C + 1), dtype=np.int64)
        cols[:, :, :C] = percols[:, None, :]
        cols[:, :, C] = (np.arange(1, K + 1)[:, None] * n + keep[None, :])
        rows = np.repeat(np.arange(K * nk)[:, None], C + 1, axis=1).reshape(K, nk, C + 1)
        self._eq_rows = rows.ravel()
        self._eq_cols = cols.ravel()
        self._n_defect = K * nk

        # substep bound rows (interior substeps only; the nodes have their
        # own variable bounds); locked components hold their pinned value
        # along the whole substep chain, so their rows would sit exactly on
        # both bounds at once
        mask = np.ones(n, dtype=bool)
        mask[list(self._locked)] = False
        self._up_idx = np.where(np.isfinite(self.x_ub) & mask)[0]
        self._lo_idx = np.where(np.isfinite(self.x_lb) & mask)[0]
        nj = self.n_sub - 1
        self._n_sub_rows = 0
        if nj > 0 and (self._up_idx.size or self._lo_idx.size):
            blocks = []
            for sel in (self._up_idx, self._lo_idx):
                if sel.size == 0:
                    continue
                c = np.empty((K, nj, sel.size, C), dtype=np.int64)
                c[...] = percols[:, None, None, :]
                blocks.append(c.ravel())
            self._sub_cols = np.concatenate(blocks)
            rows_per = (self._up_idx.size + self._lo_idx.size) * nj * K
            self._sub_rows = np.repeat(np.arange(rows_per), C)
            self._n_sub_rows = rows_per

        # obstacle rows: circle keep-out at every node, pruned by the guess
        self._obs = obstacle_rows
        self._n_obs_rows = 0 if obstacle_rows is None else obstacle_rows["k"].size
        if self._n_obs_rows:
            ob = obstacle_rows
            c = (ob["k"][:, None] * n + np.arange(n)[None, :]).ravel()
            self._obs_cols = c
            self._obs_rows = np.repeat(np.arange(self._n_obs_rows), n)
        self._n_ineq = self._n_sub_rows + self._n_obs_rows

    # -- NLP callbacks ----------------------------------------------------

    def _objective(self, z):
        X, U, tG, eps = self.unpack(z)
        S = self._chains(z)
        h = self.fractions * tG
        lx = np.einsum("jki,il,jkl->jk", S, self.cost.Q, S)
        w = np.ones(self.n_sub + 1)
        w[0] = w[-1] = 0.5
        integ = float(np.einsum("j,jk,k->", w, lx, h / self.n_sub))
        lu = np.einsum("ki,il,kl->k", U, self.cost.R, U)
        integ += float(lu @ h)
        val = self.cost.time_weight * tG + integ
        if self.eps_dim:
            val += float(self.c_p @ eps)
        return val

    def _gradient(self, z):
        X, U, tG, eps = self.unpack(z)
        S = self._chains(z)
        dS = self._sens(z)
        n, m, K = self.n_states, self.n_controls, self.K
        h = self.fractions * tG
        w = np.ones(self.n_sub + 1)
        w[0] = w[-1] = 0.5
        gx = 2.0 * np.einsum("jki,il->jkl", S, self.cost.Q)  # dl/dx at substeps
        wjk = w[:, None] * (h / self.n_sub)[None, :]
        T = np.einsum("cjki,jki->kc", dS, wjk[:, :, None] * gx)  # (K, C)
        g = np.zeros(self.n_z)
        Xg = g[: self.off_u].reshape(K + 1, n)
        Ug = g[self.off_u : self.it].reshape(K, m)
        Xg[:-1] += T[:, :n]
        Ug += T[:, n : n + m]
        Ug += 2.0 * (U @ self.cost.R) * h[:, None]
        lx = np.einsum("jki,il,jkl->jk", S, self.cost.Q, S)
        lu = np.einsum("ki,il,kl->k", U, self.cost.R, U)
        g[self.it] = (
            self.cost.time_weight
            + float(T[:, n + m].sum())
            + float(np.einsum("j,jk,k->", w, lx, self.fractions / self.n_sub))
            + float(lu @ self.fractions)
        )
        if self.eps_dim:
            g[self.it + 1 :] = self.c_p
        return g

    def _c_eq(self, z):
        X = self.unpack(z)[0]
        S = self._chains(z)
        defect = (X[1:] - S[-1])[:, self._def_comp]
        extra = self._A_extra @ z - self._b_extra
        return np.concatenate([defect.ravel(), extra])

    def _jac_eq(self, z):
        dS = self._sens(z)
        n, m, K = self.n_states, self.n_controls, self.K
        C = n + m + 1
        data = np.empty((K, self._def_comp.size, C + 1))
        end = dS[:, -1]  # (C, K, n)
        data[:, :, :C] = -np.transpose(end, (1, 2, 0))[:, self._def_comp, :]
        data[:, :, C] = 1.0
        dyn = sp.csr_matrix(
            (data.ravel(), (self._eq_rows, self._eq_cols)),
            shape=(self._n_defect, self.n_z),
        )
        return sp.vstack([dyn, self._A_extra], format="csr")

    def _c_ineq(self, z):
        parts = []
        if self._n_sub_rows:
            S = self._chains(z)
            sub = np.transpose(S[1:-1], (1, 0, 2))  # (K, n_sub-1, n)
            if self._up_idx.size:
                parts.append((sub[:, :, self._up_idx] - self.x_ub[self._up_idx]).ravel())
            if self._lo_idx.size:
                parts.append((self.x_lb[self._lo_idx] - sub[:, :, self._lo_idx]).ravel())
        if self._n_obs_rows:
            cc = self._centers(z)
            ob = self._obs
            c = cc[ob["k"], ob["b"]]  # (R, 2)
            parts.append(ob["rr2"] - ((c - ob["center"]) ** 2).sum(axis=1))
        return np.concatenate(parts)

    def _jac_ineq(self, z):
        n = self.n_states
        mats = []
        if self._n_sub_rows:
            dS = self._sens(z)
            dsub = np.transpose(dS[:, 1:-1], (2, 1, 3, 0))  # (K, n_sub-1, n, C)
            blocks = []
            if self._up_idx.size:
                blocks.append(dsub[:, :, self._up_idx, :].ravel())
            if self._lo_idx.size:
                blocks.append(-dsub[:, :, self._lo_idx, :].ravel())
            mats.append(
                sp.csr_matrix(
                    (np.concatenate(blocks), (self._sub_rows, self._sub_cols)),
                    shape=(self._n_sub_rows, self.n_z),
                )
            )
        if self._n_obs_rows:
            cc = self._centers(z)
            dC = self._center_sens(z)
            ob = self._obs
            c = cc[ob["k"], ob["b"]]
            dc = dC[ob["k"], :, ob["b"], :]  # (R, n, 2)
            data = -2.0 * np.einsum("ri,rci->rc", c - ob["center"], dc)
            mats.append(
                sp.csr_matrix(
                    (data.ravel(), (self._obs_rows, self._obs_cols)),
                    shape=(self._n_obs_rows, self.n_z),
                )
            )
        return sp.vstack(mats, format="csr") if len(mats) > 1 else mats[0]

    # -- second order -----------------------------------------------------

    def lagrangian_hessian(self, z, lam, mu):
        """Dense Hessian of f + lam'c_eq + mu'c_ineq at z.

        Every nonlinear term funnels through the per-interval substep
        chains, so second differences of one multiplier-weighted scalar
        per interval recover the exact interval blocks; the control
        quadratic and all boundary, penalty and time terms are analytic.
        Obstacle rows add small per-node pose blocks the same way.
        """
        n, m, K = self.n_states, self.n_controls, self.K
        C = n + m + 1
        X, U, tG, _ = self.unpack(z)
        lam = np.zeros(self._n_defect) if lam is None else np.asarray(lam, float)
        mu = np.zeros(self._n_ineq) if mu is None else np.asarray(mu, float)
        lam_dyn = np.zeros((K, n))
        lam_dyn[:, self._def_comp] = lam[: self._n_defect].reshape(K, -1)

        # linear weights on the substep states: defect multipliers hit the
        # chain ends, substep bound multipliers hit interior samples
        a = np.zeros((self.n_sub + 1, K, n))
        a[-1] -= lam_dyn
        nj = self.n_sub - 1
        off = 0
        if self._n_sub_rows:
            if self._up_idx.size:
                cnt = K * nj * self._up_idx.size
                tmp = np.zeros((K, nj, n))
                tmp[:, :, self._up_idx] = mu[off : off + cnt].reshape(K, nj, -1)
                a[1:-1] += np.transpose(tmp, (1, 0, 2))
                off += cnt
            if self._lo_idx.size:
                cnt = K * nj * self._lo_idx.size
                tmp = np.zeros((K, nj, n))
                tmp[:, :, self._lo_idx] = mu[off : off + cnt].reshape(K, nj, -1)
                a[1:-1] -= np.transpose(tmp, (1, 0, 2))
                off += cnt

        xi = np.concatenate([X[:-1], U, np.full((K, 1), tG)], axis=1)  # (K, C)
        d = _H_FD * np.maximum(1.0, np.abs(xi))
        i_idx = np.arange(C)
        pi, pj = np.triu_indices(C, 1)
        base = 1 + 2 * C
        P = base + 4 * pi.size
        pts = np.repeat(xi[:, None, :], P, axis=1)
        pts[:, 1 + 2 * i_idx, i_idx] += d
        pts[:, 2 + 2 * i_idx, i_idx] -= d
        pair0 = base + 4 * np.arange(pi.size)
        for s, (si, sj) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
            pts[:, pair0 + s, pi] += si * d[:, pi]
            pts[:, pair0 + s, pj] += sj * d[:, pj]

        tGp = pts[:, :, C - 1]
        S = self._roll(pts[:, :, :n], pts[:, :, n : n + m], self.fractions[:, None] * tGp / self.n_sub)
        W = np.einsum("jkpn,jkn->kp", S, a)
        w = np.ones(self.n_sub + 1)
        w[0] = w[-1] = 0.5
        q = np.einsum("jkpn,jkpn->jkp", S @ self.cost.Q, S)
        W += np.einsum("j,jkp->kp", w, q) * (self.fractions[:, None] * tGp / self.n_sub)

        Hk = np.empty((K, C, C))
        Hk[:, i_idx, i_idx] = (W[:, 1 + 2 * i_idx] - 2.0 * W[:, [0]] + W[:, 2 + 2 * i_idx]) / d**2
        off_v = (W[:, pair0] - W[:, pair0 + 1] - W[:, pair0 + 2] + W[:, pair0 + 3]) / (
            4.0 * d[:, pi] * d[:, pj]
        )
        Hk[:, pi, pj] = off_v
        Hk[:, pj, pi] = off_v

        hk = self.fractions * tG
        Hk[:, n : n + m, n : n + m] += 2.0 * self.cost.R[None] * hk[:, None, None]
        cross = 2.0 * (U @ self.cost.R) * self.fractions[:, None]
        Hk[:, n : n + m, C - 1] += cross
        Hk[:, C - 1, n : n + m] += cross

        Hfull = np.zeros((self.n_z, self.n_z))
        for k in range(K):
            ix = self._percols[k]
            Hfull[np.ix_(ix, ix)] += Hk[k]

        if self._n_obs_rows:
            self._obstacle_hessian(X, mu[off:], Hfull)
        return Hfull

    def _obstacle_hessian(self, X, mu_obs, Hfull):
        # keep-out rows depend on the node pose only; FD per active node
        act = mu_obs != 0.0
        if not np.any(act):
            return
        lay = self.layout
        n = self.n_states
        dims = np.r_[np.arange(lay.beta.start, lay.beta.stop), lay.theta, lay.x, lay.y]
        D = dims.size
        ob = self._obs
        for nid in np.unique(ob["k"][act]):
            sel = np.where(act & (ob["k"] == nid))[0]
            xn = X[nid]
            d = _H_FD * np.maximum(1.0, np.abs(xn[dims]))
            i_idx = np.arange(D)
            pi, pj = np.triu_indices(D, 1)
            base = 1 + 2 * D
            P = base + 4 * pi.size
            pts = np.repeat(xn[None, :], P, axis=0)
            pts[1 + 2 * i_idx, dims] += d
            pts[2 + 2 * i_idx, dims] -= d
            pair0 = base + 4 * np.arange(pi.size)
            for s, (si, sj) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
                pts[pair0 + s, dims[pi]] += si * d[pi]
                pts[pair0 + s, dims[pj]] += sj * d[pj]
            cc = collision.circle_centers(self.params, self.footprint, pts)
            diffs = cc[:, ob["b"][sel]] - ob["center"][sel]  # (P, R, 2)
            phi = (mu_obs[sel] * (ob["rr2"][sel] - (diffs**2).sum(-1))).sum(axis=1)
            Hn = np.empty((D, D))
            Hn[i_idx, i_idx] = (phi[1 + 2 * i_idx] - 2.0 * phi[0] + phi[2 + 2 * i_idx]) / d**2
            off_v = (phi[pair0] - phi[pair0 + 1] - phi[pair0 + 2] + phi[pair0 + 3]) / (
                4.0 * d[pi] * d[pj]
            )
            Hn[pi, pj] = off_v
            Hn[pj, pi] = off_v
            cols = nid * n + dims
            Hfull[np.ix_(cols, cols)] += Hn

    # -- interpretation ---------------------------------------------------

    def defect_norm(self, z):
        X = self.unpack(z)[0]
        S = self._chains(z)
        return float(np.abs(X[1:] - S[-1]).max())

    def node_times(self, z):
        tG = float(z[self.it])
        return np.concatenate([[0.0], np.cumsum(self.fractions * tG)])

    def dense_output(self, z):
        """All substep samples as a Trajectory (K*n_sub + 1 rows)."""
        X, U, tG, _ = self.unpack(z)
        S = self._chains(z)
        h = self.fractions * tG
        tn = np.concatenate([[0.0], np.cumsum(h)])
        t = (tn[:-1, None] + h[:, None] * (np.arange(self.n_sub) / self.n_sub)).ravel()
        t = np.concatenate([t, [tn[-1]]])
        xs = np.transpose(S[:-1], (1, 0, 2)).reshape(self.K * self.n_sub, -1)
        xs = np.concatenate([xs, X[-1:]], axis=0)
        us = np.repeat(U, self.n_sub, axis=0)
        us = np.concatenate([us, U[-1:]], axis=0)
        return Trajectory(t, xs, us, cost=float(self._objective(z)))


# -- public constructors --------------------------------------------------


def _substeps(h_max, target, cap):
    return int(np.clip(np.ceil(h_max / target), 1, cap))


def _smooth_rate(t, t0, t1, amp):
    """Time derivative of amp * smoothstep(t; t0, t1), vectorised in t."""
    dt = max(t1 - t0, 1e-9)
    s = np.clip((t - t0) / dt, 0.0, 1.0)
    return amp * 6.0 * s * (1.0 - s) / dt


def _rollout_nodes(params, x0, U, tG, n_sub):
    """Node states from the transcription integrator, so defects start at 0."""
    K = U.shape[0]
    h = tG / K / n_sub
    X = np.empty((K + 1, x0.shape[0]))
    X[0] = x0
    x = x0.copy()
    for k in range(K):
        for _ in range(n_sub):
            x = rk4_step(params, x, U[k], h)
        X[k + 1] = x
    return X


_GUESS_RAMP = 2.0  # [s] steering smoothstep duration in rollout guesses
_GUESS_SETTLE = 10.0  # [s] straight tail for the trailer chain to realign
_GUESS_RADIUS = 10.0  # [m] arc radius; keeps MS3T hitch angles off their limits


def _steer_rate_nodes(params, manifold, x_start, tn):
    """Desired tractor steering rate omega0 at the given node times.

    Turns are arcs at _GUESS_RADIUS entered and left through smoothsteps;
    a lane change is two opposite arcs back to back. Magnitudes stay well
    inside the MS3T rate limits by construction.
    """
    lay = params.layout
    th0 = x_start[lay.theta]
    v = abs(x_start[lay.v])
    R = _GUESS_RADIUS
    Tr = _GUESS_RAMP
    amp = np.arctan(params.lengths[0] / R)
    if manifold.kind == "heading_change":
        dth = wrap_angle(manifold.theta_target - th0)
        a = amp * np.sign(dth)
        Th = max(abs(dth) * R / max(v, 0.1) - Tr, 0.0)
        w = _smooth_rate(tn, 0.0, Tr, a) + _smooth_rate(tn, Tr + Th, 2 * Tr + Th, -a)
        return w, 2 * Tr + Th
    # parallel: half-angle phi per lobe from the lane-change geometry
    z = manifold.z_lat
    phi = np.arccos(1.0 - min(abs(z) / (2.0 * R), 1.0))
    a = amp * np.sign(z)
    Th = max(phi * R / max(v, 0.1) - 1.5 * Tr, 0.0)
    w = (
        _smooth_rate(tn, 0.0, Tr, a)
        + _smooth_rate(tn, Tr + Th, 3 * Tr + Th, -2.0 * a)
        + _smooth_rate(tn, 3 * Tr + 2 * Th, 4 * Tr + 2 * Th, a)
    )
    return w, 4 * Tr + 2 * Th


def _forward_maneuver_guess(params, manifold, x_start, K, substep_target):
    lay = params.layout
    tn_probe = np.zeros(1)
    _, turn_time = _steer_rate_nodes(params, manifold, x_start, tn_probe)
    tG = turn_time + _GUESS_SETTLE
    n_sub = _substeps(tG / K, substep_target, 12)
    tn = np.linspace(0.0, tG, K + 1)
    w, _ = _steer_rate_nodes(params, manifold, x_start, tn)
    U = np.zeros((K, lay.m))
    U[:, 0] = np.diff(w) / (tG / K)
    X = _rollout_nodes(params, x_start, U, tG, n_sub)
    return X, U, tG


def _reversed_maneuver_guess(params, manifold, x_start, K, substep_target):
    """Guess for a backing turn or lane change via its forward time twin.

    The chain is unstable in reverse, so an open-loop rollout diverges;
    instead roll the mirrored maneuver forward from the goal heading and
    play it backwards, flipping the time-odd components.
    """
    lay = params.layout
    th0 = x_start[lay.theta]
    x_fwd = np.zeros(lay.n)
    x_fwd[lay.v] = -x_start[lay.v]
    if manifold.kind == "heading_change":
        dth = wrap_angle(manifold.theta_target - th0)
        x_fwd[lay.theta] = th0 + dth
        twin = TerminalManifold(kind="heading_change", theta_target=th0)
    else:
        x_fwd[lay.theta] = th0
        twin = TerminalManifold(kind="parallel", z_lat=-manifold.z_lat)
    Xf, Uf, tG = _forward_maneuver_guess(params, twin, x_fwd, K, substep_target)

    X = Xf[::-1].copy()
    X[:, lay.v] *= -1.0
    X[:, lay.omega0] *= -1.0
    X[:, lay.omega_s] *= -1.0
    U = Uf[::-1].copy()
    U[:, -1] *= -1.0  # jerk is time-odd, steering accelerations are even
    # pin sample 0 onto the requested start pose; the residual hitch-angle
    # mismatch is small and lands in the first defect row
    rot = th0 - X[0, lay.theta]
    c, s = np.cos(rot), np.sin(rot)
    dx = X[:, lay.x] - X[0, lay.x]
    dy = X[:, lay.y] - X[0, lay.y]
    X[:, lay.x] = x_start[lay.x] + c * dx - s * dy
    X[:, lay.y] = x_start[lay.y] + s * dx + c * dy
    X[:, lay.theta] += rot
    return X, U, tG


def _default_guess(params, cost, manifold, x_start, t_guess, K, substep_target=0.05):
    """Initial iterate used when no warm start is supplied.

    Maneuver kinds are seeded by integrating a hand-built control profile
    through the model, which keeps the shooting defects at zero and the
    states inside their boxes; full_state falls back to interpolation.
    ``t_guess`` only overrides the interpolated kind, rollout timings come
    from the profile itself.
    """
    lay = params.layout
    x_start = np.asarray(x_start, dtype=float)
    th0 = x_start[lay.theta]
    v0 = x_start[lay.v]

    if manifold.kind == "full_state":
        s = np.linspace(0.0, 1.0, K + 1)
        goal = manifold.x_goal.copy()
        goal[lay.theta] = th0 + wrap_angle(goal[lay.theta] - th0)
        X = x_start[None, :] * (1 - s)[:, None] + goal[None, :] * s[:, None]
        dist = float(np.hypot(goal[lay.x] - x_start[lay.x], goal[lay.y] - x_start[lay.y]))
        t_def = max(dist / max(0.7 * params.v_max, 0.1), 2.0)
        tG = float(t_guess) if t_guess else float(t_def)
        return X, np.zeros((K, lay.m)), tG

    if manifold.kind == "straight":
        dv = manifold.v_target - v0
        Tv = max(1.875 * abs(dv) / params.a_max, 2.0)
        tG = Tv + 3.0
        n_sub = _substeps(tG / K, substep_target, 12)
        tn = np.linspace(0.0, tG, K + 1)
        a_nodes = _smooth_rate(tn, 0.0, Tv, dv)
        U = np.zeros((K, lay.m))
        U[:, -1] = np.diff(a_nodes) / (tG / K)
        X = _rollout_nodes(params, x_start, U, tG, n_sub)
        return X, U, tG

    if v0 < 0.0:
        return _reversed_maneuver_guess(params, manifold, x_start, K, substep_target)
    return _forward_maneuver_guess(params, manifold, x_start, K, substep_target)


def _locked_steering_chains(params, x_lb, x_ub, u_lb, u_ub):
    """State components of trailer-steering chains frozen by the bound set.

    A steered trailer whose angle, rate and rate command are all pinned
    (the rate and command at zero) is dynamically inert: its two defect
    rows are satisfied by the pins themselves and must not be duplicated
    as constraints.
    """
    lay = params.layout
    out = []
    for s in range(len(params.steerable)):
        ig = lay.gamma.start + s
        iw = lay.omega_s.start + s
        iu = 1 + s
        if (
            x_lb[ig] == x_ub[ig]
            and x_lb[iw] == x_ub[iw] == 0.0
            and u_lb[iu] == u_ub[iu] == 0.0
        ):
            out += [ig, iw]
    return tuple(out)


def _drop_pinned_rows(C_t, d_t, x_lb, x_ub):
    """Remove terminal rows that only restate pinned variables.

    With a locked steering chain the manifold's internal-state rows repeat
    the variable pins exactly; a row whose support lies entirely in pinned
    components is dropped after checking it agrees with the pinned values.
    """
    free = x_lb != x_ub
    keep = []
    for i in range(C_t.shape[0]):
        if np.any(C_t[i, free] != 0.0):
            keep.append(i)
        elif abs(C_t[i] @ x_lb - d_t[i]) > 1e-9:
            raise ValueError("terminal manifold contradicts a pinned variable")
    return C_t[keep], d_t[keep]


def transcribe(
    params: VehicleParameters,
    cost: CostWeights,
    x_start,
    manifold: TerminalManifold,
    K=50,
    state_overrides=None,
    control_overrides=None,
    guess=None,
    t_guess=None,
    substep_target=0.05,
    name=None,
) -> TranscribedOcp:
    """Primitive-generation OCP on a uniform shooting grid.

    Node 0 is pinned to ``x_start`` through its variable bounds; the terminal
    manifold contributes linear equality rows on the last node. ``guess`` may
    supply (X, U, t_G); otherwise a coarse geometric interpolation seeds the
    solver.
    """
    if K < 10:
        raise ValueError("K >= 10 shooting intervals required")
    lay = params.layout
    n = lay.n
    x_start = np.asarray(x_start, dtype=float)
    if x_start.shape != (n,):
        raise ValueError("initial state dimension mismatch")
    x_lb, x_ub = params.state_bounds(state_overrides)
    u_lb, u_ub = params.control_bounds(control_overrides)
    if np.any(x_start < x_lb - 1e-9) or np.any(x_start > x_ub + 1e-9):
        raise ValueError("initial state outside the maneuver bound set")

    C_t, d_t = manifold.residual_rows(params, x_start)
    locked = _locked_steering_chains(params, x_lb, x_ub, u_lb, u_ub)
    if locked:
        C_t, d_t = _drop_pinned_rows(C_t, d_t, x_lb, x_ub)
    if guess is None:
        X, U, tG = _default_guess(params, cost, manifold, x_start, t_guess, K)
    else:
        X, U, tG = guess
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        if X.shape != (K + 1, n) or U.shape != (K, lay.m):
            raise ValueError("guess dimension mismatch")
    nz = (K + 1) * n + K * lay.m + 1
    l = C_t.shape[0]
    A = sp.lil_matrix((l, nz))
    A[:, K * n : (K + 1) * n] = C_t
    fractions = np.full(K, 1.0 / K)
    n_sub = _substeps(tG / K, substep_target, 12)
    z0 = np.concatenate([X.ravel(), U.ravel(), [tG]])
    ocp = TranscribedOcp(
        params,
        cost,
        K,
        n_sub,
        fractions,
        x_lb,
        x_ub,
        u_lb,
        u_ub,
        t_ub=max(60.0, 5.0 * tG),
        z0=z0,
        eq_extra=(A.tocsr(), d_t),
        pin_first_node=np.clip(x_start, x_lb, x_ub),
        locked_components=locked,
        name=name or f"{manifold.kind}-ocp",
    )
    ocp.manifold = manifold
    ocp.x_start = x_start
    return ocp


def transcribe_relaxed(
    params: VehicleParameters,
    cost: CostWeights,
    x_init,
    x_goal,
    guess: Trajectory,
    obstacles: collision.ObstacleSet = None,
    homotopy: HomotopyParams = None,
    footprint: collision.Footprint = None,
    intervals_per_stage=4,
    margin=0.05,
    substep_target=0.25,
    activation_range=4.0,
    state_overrides=None,
    control_overrides=None,
    name="refine",
) -> TranscribedOcp:
    """Homotopy-relaxed planning OCP seeded by a staged guess trajectory.

    Boundary rows blend the requested endpoints with the guess endpoints
    through eps_I / eps_G; at eps = (1, 1) the guess itself satisfies them
    exactly. The shooting grid places ``intervals_per_stage`` intervals on
    each guess stage so direction switches land on nodes; per-node speed
    bounds keep every interval in its stage's direction of motion and pin
    the standstill junctions.
    """
    lay = params.layout
    n, m = lay.n, lay.m
    if len(guess) < 2:
        raise ValueError("guess needs at least 2 samples")
    gx = guess.x.copy()
    if np.any(~np.isfinite(gx)):
        raise ValueError("guess contains non-finite states")
    if np.any(np.abs(gx[:, lay.gamma]) > np.pi / 2 - 1e-6):
        raise ValueError("guess violates the steering domain")
    gx[:, lay.theta] = np.unwrap(gx[:, lay.theta])
    x_init = np.asarray(x_init, dtype=float).copy()
    x_goal = np.asarray(x_goal, dtype=float).copy()
    x_init[lay.theta] += 2 * np.pi * np.round((gx[0, lay.theta] - x_init[lay.theta]) / (2 * np.pi))
    x_goal[lay.theta] += 2 * np.pi * np.round((gx[-1, lay.theta] - x_goal[lay.theta]) / (2 * np.pi))

    homotopy = homotopy or HomotopyParams()
    obstacles = obstacles or collision.ObstacleSet()
    footprint = footprint or collision.default_footprint(params)
    x_lb, x_ub = params.state_bounds(state_overrides)
    u_lb, u_ub = params.control_bounds(control_overrides)

    # node sample indices: intervals_per_stage per stage, junctions shared
    node_idx = [0]
    stage_of_interval = []
    for s_i, sl in enumerate(guess.stage_slices()):
        lo, hi = sl.start, sl.stop - 1
        pts = np.unique(np.round(np.linspace(lo, hi, intervals_per_stage + 1)).astype(int))
        for p in pts[1:]:
            node_idx.append(int(p))
            stage_of_interval.append(s_i)
    node_idx = np.asarray(node_idx)
    K = node_idx.size - 1
    t_nodes = guess.t[node_idx]
    T = t_nodes[-1] - t_nodes[0]
    fractions = np.diff(t_nodes) / T
    X = gx[node_idx]

    # per-interval controls: time-averaged guess inputs
    U = np.empty((K, m))
    tgrid = guess.t
    for k in range(K):
        a, b = t_nodes[k], t_nodes[k + 1]
        i0 = int(np.searchsorted(tgrid, a, side="right") - 1)
        i1 = int(np.searchsorted(tgrid, b, side="left"))
        acc = np.zeros(m)
        for i in range(i0, i1):
            w = min(tgrid[i + 1], b) - max(tgrid[i], a)
            if w > 0:
                acc += w * guess.u[i]
        U[k] = acc / (b - a)

    # direction-of-motion bounds per node; interval j belongs to
    # stage_of_interval[j]
    vcol = gx[:, lay.v]
    stage_sign = []
    for sl in guess.stage_slices():
        vv = vcol[sl]
        moving = vv[np.abs(vv) > 1e-9]
        stage_sign.append(float(np.sign(moving.mean())) if moving.size else 0.0)
    node_v_bounds = []
    for j in range(K + 1):
        left = stage_of_interval[j - 1] if j > 0 else None
        right = stage_of_interval[j] if j < K else None
        signs = {stage_sign[s] for s in (left, right) if s is not None}
        lo, hi = -params.v_max, params.v_max
        if j in (0, K):
            pass  # boundary rows decide; keep wide
        elif left is not None and right is not None and left != right and abs(vcol[node_idx[j]]) < 1e-9:
            lo = hi = 0.0
        elif signs == {1.0}:
            lo = 0.0
        elif signs == {-1.0}:
            hi = 0.0
        node_v_bounds.append((lo, hi))

    x_bar_i, x_bar_g = gx[0], gx[-1]
    nz = (K + 1) * n + K * m + 1 + 2
    it = (K + 1) * n + K * m
    A = sp.lil_matrix((2 * n, nz))
    b = np.empty(2 * n)
    A[np.arange(n), np.arange(n)] = 1.0
    A[np.arange(n), it + 1] = x_init - x_bar_i
    b[:n] = x_init
    A[n + np.arange(n), K * n + np.arange(n)] = 1.0
    A[n + np.arange(n), it + 2] = x_goal - x_bar_g
    b[n:] = x_goal

    # obstacle rows, pruned to pairs near the guess
    obs_rows = None
    circles = list(obstacles.circles)
    for poly in obstacles.polygons:
        circles.extend(_polygon_cover_circles(poly))
    if circles:
        centers = collision.circle_centers(params, footprint, X)  # (K+1, B, 2)
        ks, bs, cxy, rr2 = [], [], [], []
        for cx, cy, r in circles:
            d = np.linalg.norm(centers - np.array([cx, cy]), axis=2) - footprint.radius - r
            keep = np.argwhere(d < activation_range)
            for k_i, b_i in keep:
                ks.append(k_i)
                bs.append(b_i)
                cxy.append((cx, cy))
                rr2.append((footprint.radius + r + margin) ** 2)
        if ks:
            obs_rows = {
                "k": np.asarray(ks, dtype=np.int64),
                "b": np.asarray(bs, dtype=np.int64),
                "center": np.asarray(cxy, dtype=float),
                "rr2": np.asarray(rr2, dtype=float),
            }

    z0 = np.concatenate([X.ravel(), U.ravel(), [T], [homotopy.eps_init, homotopy.eps_goal]])
    n_sub = _substeps((fractions * T).max(), substep_target, 24)
    ocp = TranscribedOcp(
        params,
        cost,
        K,
        n_sub,
        fractions,
        x_lb,
        x_ub,
        u_lb,
        u_ub,
        t_ub=max(60.0, 5.0 * T),
        z0=z0,
        eq_extra=(A.tocsr(), b),
        eps_dim=2,
        c_p=homotopy.c_p,
        node_v_bounds=node_v_bounds,
        obstacle_rows=obs_rows,
        footprint=footprint,
        exact_hessian=True,
        name=name,
    )
    ocp.x_init = x_init
    ocp.x_goal = x_goal
    ocp.obstacles = obstacles
    ocp.margin = margin
    return ocp


def _polygon_cover_circles(poly, radius=1.2, pitch=1.6):
    """Conservative circle cover of a convex polygon for the smooth solver.

    Grid circles at ``pitch`` spacing cover every interior point as long as
    pitch <= radius * sqrt(2); boundary-adjacent cells are kept so edges are
    covered too.
    """
    v = np.asarray(poly, dtype=float)
    lo = v.min(axis=0) - pitch / 2
    hi = v.max(axis=0) + pitch / 2
    xs = np.arange(lo[0], hi[0] + pitch, pitch)
    ys = np.arange(lo[1], hi[1] + pitch, pitch)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    d = collision.point_polygon_distance(pts, v)
    keep = pts[d < 0.35 * pitch]
    return [(float(p[0]), float(p[1]), radius) for p in keep]
