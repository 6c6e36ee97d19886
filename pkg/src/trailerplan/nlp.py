"""Dense SQP solver for the transcribed optimal-control problems.

The solver is a classical line-search SQP: at each iterate a convex QP built
from the constraint linearisation and a damped BFGS model of the Lagrangian
Hessian proposes a step, an l1 exact-penalty merit function accepts or
shrinks it, and a Gauss-Newton feasibility restoration catches the rare
iterates the QP cannot handle.

Two implementation choices keep desk-scale problems (a few hundred to a few
thousand variables) fast without sparse factorisation machinery:

* the BFGS model is maintained in inverse form, so the QP range-space solve
  needs products H @ A.T instead of factorising B, and
* the active-set QP works on a Schur complement A H A.T that is bordered
  incrementally when a constraint enters the working set.

Constraint Jacobian callbacks may return scipy.sparse matrices; everything
is normalised to CSR internally. Problems without derivative callbacks fall
back to central finite differences with h = 1e-6 * max(1, |z_i|).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, solve_triangular

_FD_REL = 1e-6


class DerivativeError(RuntimeError):
    """A derivative evaluation produced a non-finite value."""


@dataclass
class NlpProblem:
    """Smooth NLP: min f(z) s.t. c_eq(z) = 0, c_ineq(z) <= 0, lb <= z <= ub."""

    n: int
    objective: Callable
    z0: np.ndarray
    gradient: Optional[Callable] = None
    c_eq: Optional[Callable] = None
    jac_eq: Optional[Callable] = None
    c_ineq: Optional[Callable] = None
    jac_ineq: Optional[Callable] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    hess0_diag: Optional[np.ndarray] = None
    # optional exact Lagrangian Hessian callback (z, lam, mu) -> (n, n);
    # when present the solver runs Newton steps instead of BFGS
    lag_hess: Optional[Callable] = None
    name: str = "nlp"

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, dtype=float)
        if self.z0.shape != (self.n,):
            raise ValueError("z0 dimension mismatch")
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("bound dimension mismatch")
        if np.any(self.lb > self.ub):
            raise ValueError("infeasible bounds: lower > upper")


@dataclass
class SolveOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-6
    max_iter: int = 500
    qp_max_iter: int = 1000
    log_stream: object = None  # file-like; CSV rows iter,merit,violation,step


@dataclass
class NlpSolution:
    z: np.ndarray
    objective: float
    violation: float
    status: str  # converged | max_iter | infeasible | numerical_failure
    iterations: int
    kkt_residual: float
    multipliers_eq: np.ndarray = field(default=None, repr=False)
    multipliers_ineq: np.ndarray = field(default=None, repr=False)

    @property
    def converged(self):
        return self.status == "converged"


# -- derivatives ----------------------------------------------------------


def _fd_gradient(fun, z):
    z = np.asarray(z, dtype=float)
    g = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        h = _FD_REL * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (fun(zp) - fun(zm)) / (2.0 * h)
    return g


def _fd_jacobian(fun, z, out_dim):
    z = np.asarray(z, dtype=float)
    J = np.empty((out_dim, z.shape[0]))
    for i in range(z.shape[0]):
        h = _FD_REL * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        J[:, i] = (np.asarray(fun(zp)) - np.asarray(fun(zm))) / (2.0 * h)
    return J


def gradients(problem: NlpProblem, z, force_fd=False):
    """Objective gradient and constraint Jacobians at z.

    Uses the problem's callbacks when present, otherwise central finite
    differences. ``force_fd`` bypasses the callbacks, which gives tests an
    independent derivative route to compare against.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DerivativeError("non-finite point passed to gradients")

    if problem.gradient is not None and not force_fd:
        g = np.asarray(problem.gradient(z), dtype=float)
    else:
        g = _fd_gradient(problem.objective, z)
    if not np.all(np.isfinite(g)):
        raise DerivativeError(f"non-finite objective gradient entry {int(np.argmax(~np.isfinite(g)))}")

    J_eq = None
    if problem.c_eq is not None:
        if problem.jac_eq is not None and not force_fd:
            J_eq = problem.jac_eq(z)
        else:
            J_eq = _fd_jacobian(problem.c_eq, z, np.asarray(problem.c_eq(z)).shape[0])
    J_in = None
    if problem.c_ineq is not None:
        if problem.jac_ineq is not None and not force_fd:
            J_in = problem.jac_ineq(z)
        else:
            J_in = _fd_jacobian(problem.c_ineq, z, np.asarray(problem.c_ineq(z)).shape[0])
    for name, J in (("equality", J_eq), ("inequality", J_in)):
        if J is not None:
            data = J.data if sp.issparse(J) else np.asarray(J)
            if not np.all(np.isfinite(data)):
                raise DerivativeError(f"non-finite {name} Jacobian")
    return g, J_eq, J_in


def _as_csr(J, n):
    if J is None:
        return sp.csr_matrix((0, n))
    if sp.issparse(J):
        return J.tocsr()
    return sp.csr_matrix(np.atleast_2d(np.asarray(J, dtype=float)))


# -- active-set QP on the Schur complement --------------------------------


class _SchurQp:
    """Strictly convex QP solved with a primal add / dual drop active set.

    The Hessian enters only through its inverse H, so the working-set system
    is the Schur complement S = A_W H A_W^T. Equality rows stay in the
    working set permanently; inequality rows enter by largest linearised
    violation and leave by most negative multiplier, ties broken toward the
    lowest row index so reruns are bitwise identical.

    Additions border the Cholesky factor of S in O(w^2); only drops trigger
    a refactorisation. Rows that are a pure variable bound (+-e_i, the vast
    majority in transcribed problems) use H's columns directly instead of a
    matrix-vector product.
    """

    def __init__(self, H, g, A_eq, c_eq, A_in, c_in, bound_map, max_iter, tol=1e-10):
        self.H = H
        self.g = g
        self.A_eq = A_eq
        self.c_eq = c_eq
        self.A_in = A_in
        self.c_in = c_in
        self.bound_map = bound_map  # signed (var+1) for pure bound rows, else 0
        self.max_iter = max_iter
        self.tol = tol
        self.n_eq = A_eq.shape[0]
        self.n_in = A_in.shape[0]

    def _hcol(self, w):
        b = self.bound_map[w]
        if b:
            v = abs(b) - 1
            return self.H[:, v] if b > 0 else -self.H[:, v]
        return self.H @ self.A_in.getrow(w).toarray().ravel()

    def _row_dot(self, w, vec):
        b = self.bound_map[w]
        if b:
            v = abs(b) - 1
            return vec[v] if b > 0 else -vec[v]
        r = self.A_in.getrow(w)
        return float(r.data @ vec[r.indices])

    def solve(self, warm_set):
        H, g = self.H, self.g
        n = g.shape[0]
        p_eq = self.n_eq
        Hg = H @ g
        # every equality row lives in the factor permanently, so the cap must
        # admit all of them even when the equality set is over-determined;
        # only the inequality working set is bounded by the variable count
        cap = p_eq + min(n + 4, self.n_in + 4)
        G = np.empty((n, cap))
        S = np.empty((cap, cap))
        L = np.empty((cap, cap))
        if p_eq:
            G[:, :p_eq] = (self.A_eq @ H).T

        seen = set()
        work = []
        for w in warm_set:
            if 0 <= w < self.n_in and w not in seen and p_eq + len(work) < cap - 8:
                seen.add(w)
                work.append(w)
        for j, w in enumerate(work):
            G[:, p_eq + j] = self._hcol(w)

        ridge = 1e-12
        self.stats = {"adds": 0, "drops": 0, "partial": 0}

        def refactor():
            nonlocal ridge
            m = p_eq + len(work)
            if p_eq:
                S[:p_eq, :m] = self.A_eq @ G[:, :m]
            for j, w in enumerate(work):
                b = self.bound_map[w]
                if b:
                    v = abs(b) - 1
                    S[p_eq + j, :m] = G[v, :m] if b > 0 else -G[v, :m]
                else:
                    r = self.A_in.getrow(w)
                    S[p_eq + j, :m] = r.data @ G[r.indices, :m]
            # consistent but dependent equality rows (a pinned integrator
            # chain, say) leave S singular; the ridge must be measured
            # against S's scale or escalation never reaches it
            scale = max(1.0, float(np.abs(np.diagonal(S[:m, :m])).max()))
            for _ in range(6):
                try:
                    L[:m, :m] = np.linalg.cholesky(S[:m, :m] + ridge * np.eye(m))
                    return True
                except np.linalg.LinAlgError:
                    ridge = max(ridge * 1e4, 1e-14 * scale)
            return False

        def sweep(vec, m):
            y = solve_triangular(L[:m, :m], vec, lower=True, check_finite=False)
            return solve_triangular(L[:m, :m], y, lower=True, trans=1, check_finite=False)

        def drop(j):
            # remove inequality row j (position within work) from the factor
            m = p_eq + len(work)
            work.pop(j)
            G[:, p_eq + j : m - 1] = G[:, p_eq + j + 1 : m]
            keep = list(range(p_eq + j)) + list(range(p_eq + j + 1, m))
            S[: m - 1, : m - 1] = S[np.ix_(keep, keep)]
            self.stats["drops"] += 1
            return refactor()

        if not refactor():
            return self._fail_result(g)

        # consistent start: working-set solve, shedding negative multipliers
        nu = np.zeros(p_eq)
        p = -Hg
        for _ in range(len(work) + 1):
            m = p_eq + len(work)
            if m == 0:
                nu = np.zeros(0)
                p = -Hg
                break
            cvec = np.concatenate([self.c_eq, self.c_in[work] if work else np.zeros(0)])
            nu = sweep(cvec - G[:, :m].T @ g, m)
            p = -(Hg + G[:, :m] @ nu)
            neg = np.where(nu[p_eq:] < -self.tol)[0]
            if neg.size == 0:
                break
            if not drop(int(neg[np.argmin(nu[p_eq:][neg])])):
                return self._fail_result(g)

        # dual active-set phase: one violated row at a time, with partial
        # steps whenever a working multiplier would cross zero
        status = "optimal"
        steps = 0
        while True:
            if self.n_in:
                lin = self.A_in @ p + self.c_in
                if work:
                    lin[work] = -np.inf
                q = int(np.argmax(lin))
                viol = float(lin[q])
            else:
                viol = -np.inf
            if viol <= self.tol:
                break

            Ha = self._hcol(q)
            aHa = self._row_dot(q, Ha)
            u_acc = 0.0  # candidate multiplier, accumulated across partial steps
            while True:
                steps += 1
                if steps > self.max_iter:
                    status = "qp_max_iter"
                    break
                m = p_eq + len(work)
                if m:
                    wv = np.empty(m)
                    if p_eq:
                        wv[:p_eq] = self.A_eq @ Ha
                    for j, w in enumerate(work):
                        wv[p_eq + j] = self._row_dot(w, Ha)
                    rr = sweep(wv, m)
                    z = G[:, :m] @ rr - Ha
                    atz = float(wv @ rr) - aHa
                else:
                    wv = np.zeros(0)
                    rr = np.zeros(0)
                    z = -Ha
                    atz = -aHa

                t_full = -viol / atz if atz < -1e-13 else np.inf
                t_block, j_block = np.inf, -1
                if work:
                    mu_dir = rr[p_eq:]
                    for j in range(len(work)):
                        if mu_dir[j] > 1e-13:
                            tj = nu[p_eq + j] / mu_dir[j]
                            if tj < t_block - 1e-15:
                                t_block, j_block = tj, j
                t = min(t_full, t_block)
                if not np.isfinite(t):
                    status = "inconsistent"
                    break
                t = max(t, 0.0)
                p += t * z
                nu -= t * rr
                u_acc += t
                viol += t * atz
                if t_full <= t_block:
                    # full step: q becomes active with multiplier t
                    if p_eq + len(work) >= cap - 4:
                        status = "inconsistent"
                        break
                    mnow = p_eq + len(work)
                    y = (
                        solve_triangular(L[:mnow, :mnow], wv, lower=True, check_finite=False)
                        if mnow
                        else np.zeros(0)
                    )
                    d2 = aHa + ridge - float(y @ y)
                    G[:, mnow] = Ha
                    if d2 > 1e-13 * max(1.0, aHa):
                        S[:mnow, mnow] = wv
                        S[mnow, :mnow] = wv
                        S[mnow, mnow] = aHa
                        L[mnow, :mnow] = y
                        L[:mnow, mnow] = 0.0
                        L[mnow, mnow] = np.sqrt(d2)
                        work.append(q)
                    else:
                        work.append(q)
                        if not refactor():
                            return self._fail_result(g)
                    nu = np.append(nu, u_acc)
                    self.stats["adds"] += 1
                    break
                # partial step: the blocking row leaves, retry the candidate
                self.stats["partial"] += 1
                nu = np.delete(nu, p_eq + j_block)
                if not drop(j_block):
                    return self._fail_result(g)
            if status != "optimal":
                break

        # tighten the final iterate on the settled working set
        m = p_eq + len(work)
        if m:
            cvec = np.concatenate([self.c_eq, self.c_in[work] if work else np.zeros(0)])
            nu = sweep(cvec - G[:, :m].T @ g, m)
            p = -(Hg + G[:, :m] @ nu)

        mu_full = np.zeros(self.n_in)
        if work:
            mu_full[np.asarray(work, dtype=int)] = np.maximum(nu[p_eq:], 0.0)
        lam = nu[:p_eq] if nu.shape[0] >= p_eq else np.zeros(p_eq)
        # B p for the BFGS secant without materialising B = H^{-1}
        Bp = -(g + (self.A_eq.T @ lam if p_eq else 0) + (self.A_in.T @ mu_full if self.n_in else 0))
        return p, lam, mu_full, list(work), Bp, status

    def _fail_result(self, g):
        return (
            np.zeros(g.shape[0]),
            np.zeros(self.n_eq),
            np.zeros(self.n_in),
            [],
            -g,
            "singular",
        )


# -- merit function helpers -----------------------------------------------


def _violation(c_eq, c_in):
    v = 0.0
    if c_eq.size:
        v = max(v, float(np.abs(c_eq).max()))
    if c_in.size:
        v = max(v, float(np.maximum(c_in, 0.0).max()))
    return v


def _l1_infeasibility(c_eq, c_in):
    t = 0.0
    if c_eq.size:
        t += float(np.abs(c_eq).sum())
    if c_in.size:
        t += float(np.maximum(c_in, 0.0).sum())
    return t


def _filter_ok(filt, v, fv, v_cap):
    """Pair (violation, objective) not dominated by any filter entry."""
    if not np.isfinite(v) or not np.isfinite(fv) or v > v_cap:
        return False
    for vj, fj in filt:
        if v >= (1.0 - 1e-5) * vj and fv >= fj - 1e-5 * vj:
            return False
    return True


def _filter_add(filt, v, fv, cap=40):
    filt[:] = [(vj, fj) for vj, fj in filt if not (vj >= v and fj >= fv)]
    filt.append((max(v, 1e-16), fv))
    if len(filt) > cap:
        filt.sort(key=lambda e: e[0])
        del filt[cap:]


def solve(problem: NlpProblem, options: SolveOptions | None = None) -> NlpSolution:
    """Solve an NlpProblem with line-search SQP. Deterministic."""
    opts = options or SolveOptions()
    n = problem.n
    z = np.clip(problem.z0, problem.lb, problem.ub)
    if not np.all(np.isfinite(z)):
        return NlpSolution(z, np.nan, np.inf, "numerical_failure", 0, np.inf)

    # box bounds become inequality rows so one working set covers everything;
    # pinned variables (lb == ub) become equality rows instead to avoid a
    # degenerate pair of opposing active rows
    finite_lo = np.where(np.isfinite(problem.lb) & (problem.lb != problem.ub))[0]
    finite_hi = np.where(np.isfinite(problem.ub) & (problem.lb != problem.ub))[0]
    pinned = np.where(problem.lb == problem.ub)[0]
    eye = sp.identity(n, format="csr")
    J_hi = eye[finite_hi]
    J_lo = -eye[finite_lo]
    J_pin = eye[pinned]

    def eval_all(zz):
        f = float(problem.objective(zz))
        ce = np.asarray(problem.c_eq(zz), float) if problem.c_eq is not None else np.zeros(0)
        ci = np.asarray(problem.c_ineq(zz), float) if problem.c_ineq is not None else np.zeros(0)
        ce_full = np.concatenate([ce, zz[pinned] - problem.ub[pinned]])
        ci_full = np.concatenate([ci, zz[finite_hi] - problem.ub[finite_hi], problem.lb[finite_lo] - zz[finite_lo]])
        return f, ce_full, ci_full

    def jac_all(zz):
        g, J_eq, J_in = gradients(problem, zz)
        A_eq = sp.vstack([_as_csr(J_eq, n), J_pin]).tocsr()
        A_in = sp.vstack([_as_csr(J_in, n), J_hi, J_lo]).tocsr()
        return g, A_eq, A_in

    def bound_row_map(n_in_total):
        # rows of A_in are [general | upper bounds | lower bounds]; the bound
        # rows are +-e_i and get a fast path in the QP
        bm = np.zeros(n_in_total, dtype=np.int64)
        n_gen = n_in_total - finite_hi.size - finite_lo.size
        bm[n_gen : n_gen + finite_hi.size] = finite_hi + 1
        bm[n_gen + finite_hi.size :] = -(finite_lo + 1)
        return bm

    # inverse BFGS seed from the supplied objective curvature
    if problem.hess0_diag is not None:
        d = np.clip(np.asarray(problem.hess0_diag, float), 1e-6, 1e8)
        H = np.diag(1.0 / d)
    else:
        H = np.eye(n)
    H0 = H.copy()

    try:
        f, c_eq, c_in = eval_all(z)
    except (ValueError, FloatingPointError, ArithmeticError):
        return NlpSolution(z, np.nan, np.inf, "numerical_failure", 0, np.inf)
    if not np.isfinite(f):
        return NlpSolution(z, f, _violation(c_eq, c_in), "numerical_failure", 0, np.inf)

    sigma = 1.0
    work = []
    bmap = None
    status = "max_iter"
    kkt = np.inf
    stall = 0
    it = 0
    # when the exact-penalty weight is stiff the Armijo test over-trims
    # steps whose tiny violation growth buys large objective progress; a
    # small non-domination filter accepts those on their own merits
    filt = []
    v_cap = max(1.0, 1e3 * _l1_infeasibility(c_eq, c_in))
    # l-inf trust region, expressed by tightening the bound rows handed to
    # the QP; keeps steps inside the region where the linearisation is
    # trustworthy so the merit line search is not forced into micro-steps
    # when the penalty weight is stiff
    delta, delta_min, delta_max = 1.0, 0.05, 64.0
    if opts.log_stream is not None:
        opts.log_stream.write("iter,merit,violation,step\n")

    def log_row(i, merit, viol, alpha):
        if opts.log_stream is not None:
            opts.log_stream.write(f"{i},{merit:.9g},{viol:.3e},{alpha:.3g}\n")

    newton = problem.lag_hess is not None
    lamP = muP = None

    for it in range(1, opts.max_iter + 1):
        try:
            g, A_eq, A_in = jac_all(z)
        except DerivativeError:
            status = "numerical_failure"
            break

        if bmap is None:
            bmap = bound_row_map(A_in.shape[0])
        n_gen = A_in.shape[0] - finite_hi.size - finite_lo.size
        if newton:
            n_eq_prob = A_eq.shape[0] - pinned.size
            if lamP is None:
                lamP, muP = np.zeros(n_eq_prob), np.zeros(n_gen)
            try:
                Hn = _psd_inverse(problem.lag_hess(z, lamP, muP))
            except (ValueError, FloatingPointError, ArithmeticError):
                Hn = None
            H = Hn if Hn is not None else H0.copy()
        c_qp = c_in.copy()
        c_qp[n_gen:] = np.maximum(c_qp[n_gen:], -delta)
        tightened = c_qp != c_in
        qp = _SchurQp(H, g, A_eq, c_eq, A_in, c_qp, bmap, opts.qp_max_iter)
        p, lam, mu, work, Bp, qp_status = qp.solve(work)
        if newton:
            lamP, muP = lam[:n_eq_prob].copy(), mu[:n_gen].copy()
        # unbounded variables carry no rows to tighten; clip outliers so a
        # near-singular QP cannot fling the iterate out of the valid region
        pcap = 25.0 * max(delta, 1.0)
        p_clipped = bool(np.any(np.abs(p) > pcap))
        if p_clipped:
            p = np.clip(p, -pcap, pcap)

        viol = _violation(c_eq, c_in)
        stat = g.copy()
        if A_eq.shape[0]:
            stat += A_eq.T @ lam
        if A_in.shape[0]:
            stat += A_in.T @ mu
        kkt = float(np.abs(stat).max()) if stat.size else 0.0
        # stationarity is judged relative to the gradient scale; with more
        # active rows than variables a multiplier fit alone proves little,
        # so the step itself must also have collapsed
        g_scale = max(1.0, float(np.abs(g).max()) if g.size else 1.0)
        p_small = float(np.abs(p).max()) <= np.sqrt(opts.opt_tol) if p.size else True
        if viol <= opts.feas_tol and kkt <= opts.opt_tol * g_scale and p_small:
            status = "converged"
            break

        if qp_status == "singular" or not np.all(np.isfinite(p)):
            z, f, c_eq, c_in, ok = _restore(problem, eval_all, jac_all, z, opts)
            if not ok:
                status = "infeasible" if viol > opts.feas_tol else "numerical_failure"
                break
            H = H0.copy()
            work = []
            lamP = muP = None
            delta = max(delta, 1.0)
            continue
        # an inconsistent linearisation still yields a working-set step;
        # let the merit line search judge it and restoration catch the rest

        # multipliers on trust-region-tightened rows are artifacts of the
        # region, not of the NLP; keep them out of the penalty update
        mu_phys = np.where(tightened, 0.0, mu) if mu.size else mu
        mult_inf = max(
            float(np.abs(lam).max()) if lam.size else 0.0,
            float(mu_phys.max()) if mu_phys.size else 0.0,
        )
        if qp_status == "optimal" and not p_clipped:
            if sigma < 1.1 * mult_inf:
                sigma = max(1.5 * sigma, 1.1 * mult_inf + 0.1)
            elif sigma > 100.0 * (mult_inf + 1.0):
                sigma = max(10.0 * (mult_inf + 1.0), 1.0)

        v_l1 = _l1_infeasibility(c_eq, c_in)
        gTp = float(g @ p)
        phi0 = f + sigma * v_l1
        # the directional derivative can turn positive when the curvature
        # model is off near a degenerate active set; an Armijo bar above
        # phi0 would then accept uphill steps, so it is clamped
        dderiv = min(gTp - sigma * v_l1, 0.0)

        accepted = False
        alpha = 1.0
        step = p
        for ls in range(30):
            z_try = np.clip(z + alpha * step, problem.lb, problem.ub)
            try:
                f_try, ce_try, ci_try = eval_all(z_try)
            except (ValueError, FloatingPointError, ArithmeticError):
                alpha *= 0.5
                continue
            if np.isfinite(f_try):
                v_try = _l1_infeasibility(ce_try, ci_try)
                phi_try = f_try + sigma * v_try
                merit_ok = phi_try <= phi0 + 1e-4 * alpha * dderiv or phi_try < phi0 - 1e-12 * (1 + abs(phi0))
                # the filter also vetoes merit steps: revisiting a dominated
                # region is how the merit path can cycle
                if merit_ok and _filter_ok(filt, v_try, f_try, v_cap):
                    accepted = True
                    break
                if _filter_ok(filt, v_try, f_try, v_cap):
                    f_type = v_l1 <= 1e-4 and gTp < 0.0
                    if f_type and f_try <= f + 1e-4 * alpha * gTp:
                        accepted = True
                        break
                    if not f_type and (f_try <= f - 1e-5 * v_l1 or v_try <= (1.0 - 1e-5) * v_l1):
                        accepted = True
                        break
                if ls == 0 and alpha == 1.0:
                    # second-order correction: re-centre on the constraints
                    # evaluated at the trial point, reusing the QP factors;
                    # a correction that fails to contract the violation or
                    # dwarfs the step is factorisation noise, not curvature
                    corr = _soc_step(H, A_eq, A_in, work, ce_try, ci_try)
                    if corr is not None and float(np.abs(corr).max()) <= 2.0 * float(np.abs(p).max()) + 1e-12:
                        z_soc = np.clip(z + p + corr, problem.lb, problem.ub)
                        try:
                            f_soc, ce_soc, ci_soc = eval_all(z_soc)
                        except (ValueError, FloatingPointError, ArithmeticError):
                            f_soc = np.nan
                        if np.isfinite(f_soc):
                            v_soc = _l1_infeasibility(ce_soc, ci_soc)
                            phi_soc = f_soc + sigma * v_soc
                            if (
                                v_soc <= 0.5 * v_try + 1e-12
                                and phi_soc <= phi0 + 1e-4 * dderiv
                                and _filter_ok(filt, v_soc, f_soc, v_cap)
                            ):
                                z_try, f_try, ce_try, ci_try = z_soc, f_soc, ce_soc, ci_soc
                                step = z_soc - z  # actual displacement for BFGS
                                alpha = 1.0
                                accepted = True
                                break
            alpha *= 0.5
        if not accepted:
            log_row(it, phi0, viol, 0.0)
            at_floor = delta <= delta_min
            delta = max(delta * 0.25, delta_min)
            if viol > 1e-4:
                # meaningfully infeasible: restoration can reopen progress
                z_new, f_new, ce_new, ci_new, ok = _restore(problem, eval_all, jac_all, z, opts)
                if ok and _violation(ce_new, ci_new) < viol * 0.9:
                    z, f, c_eq, c_in = z_new, f_new, ce_new, ci_new
                    H = H0.copy()
                    work = []
                    lamP = muP = None
                    stall = 0
                    continue
            # nearly feasible rejections just mean the model overreached;
            # retry inside the smaller region before giving up
            stall += 1 if at_floor else 0
            if stall >= 3:
                status = "infeasible" if viol > opts.feas_tol else "max_iter"
                break
            if not newton:
                H = H0.copy()
                work = []
            continue
        stall = 0
        if v_l1 > 1e-4:
            # any acceptance from a meaningfully infeasible point records the
            # departed pair; without this the merit channel can ferry the
            # iterate around an excursion loop the filter never learns about
            _filter_add(filt, v_l1, f)
        if alpha >= 1.0:
            if float(np.abs(p).max()) >= 0.9 * delta:
                delta = min(delta * 2.0, delta_max)
        elif alpha <= 0.125:
            delta = max(delta * 0.25, delta_min)

        s = z_try - z
        z_prev_g = stat  # Lagrangian gradient at old point, current multipliers
        z, f, c_eq, c_in = z_try, f_try, ce_try, ci_try
        log_row(it, phi0, viol, alpha)
        if newton:
            continue  # fresh Hessian next iteration, no quasi-Newton update

        # damped BFGS update in inverse form
        try:
            g_new, A_eq_n, A_in_n = jac_all(z)
        except DerivativeError:
            status = "numerical_failure"
            break
        lag_new = g_new.copy()
        if A_eq_n.shape[0]:
            lag_new += A_eq_n.T @ lam
        if A_in_n.shape[0]:
            lag_new += A_in_n.T @ mu
        y = lag_new - z_prev_g
        Bs = alpha * Bp if not p_clipped and np.array_equal(step, p) else None
        if Bs is None:
            # SOC modified the step; fall back to a scale-matched proxy
            Bs = y if float(s @ y) > 0 else s
        sBs = float(s @ Bs)
        sy = float(s @ y)
        if np.isfinite(sy) and np.isfinite(sBs) and sBs > 1e-16:
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                y = theta * y + (1.0 - theta) * Bs
                sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
                rho = 1.0 / sy
                Hy = H @ y
                yHy = float(y @ Hy)
                H -= rho * (np.outer(s, Hy) + np.outer(Hy, s))
                H += (rho * rho * yHy + rho) * np.outer(s, s)

    viol = _violation(c_eq, c_in)
    return NlpSolution(
        z=z,
        objective=f,
        violation=viol,
        status=status,
        iterations=it,
        kkt_residual=kkt,
        multipliers_eq=None,
        multipliers_ineq=None,
    )


def _psd_inverse(B):
    """Inverse of a positive definite modification of B, or None.

    Negative eigenvalues are flipped to their magnitude rather than floored
    at zero: near saddle points a floor turns every negative-curvature
    direction into an almost-free ray and the QP fires unusable steps along
    them, whereas the flip yields a conservative descent step of matching
    scale. A proportional floor keeps the inverse conditioned.
    """
    Bs = 0.5 * (B + B.T)
    try:
        vals, vecs = np.linalg.eigh(Bs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(vals)):
        return None
    vals = np.abs(vals)
    floor = max(1e-6, 1e-6 * float(vals.max()))
    vals = np.maximum(vals, floor)
    return (vecs / vals) @ vecs.T


def _soc_step(H, A_eq, A_in, work, ce_try, ci_try):
    rows = [A_eq] + [A_in.getrow(w) for w in work]
    A = sp.vstack(rows).tocsr()
    if A.shape[0] == 0:
        return None
    cvec = np.concatenate([ce_try, ci_try[np.asarray(work, dtype=int)] if work else np.zeros(0)])
    G = (A @ H).T
    S = np.asarray(A @ G)
    try:
        cf = cho_factor(S + 1e-12 * np.eye(S.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        return None
    return -(G @ cho_solve(cf, cvec))


def _restore(problem, eval_all, jac_all, z, opts, max_steps=25):
    """Gauss-Newton descent on 0.5*||c_eq||^2 + 0.5*||(c_in)+||^2.

    Success means either reaching feasibility or at least halving the
    violation; the caller decides whether partial progress is enough to
    keep iterating.
    """
    z = z.copy()
    try:
        f, ce, ci = eval_all(z)
    except (ValueError, FloatingPointError, ArithmeticError):
        return z, np.nan, np.zeros(0), np.zeros(0), False
    v_start = _violation(ce, ci)
    m0 = 0.5 * float(ce @ ce) + 0.5 * float(np.maximum(ci, 0) @ np.maximum(ci, 0))

    def done(viol):
        return viol <= opts.feas_tol or viol < 0.5 * v_start

    for _ in range(max_steps):
        if _violation(ce, ci) <= opts.feas_tol:
            return z, f, ce, ci, True
        try:
            g, A_eq, A_in = jac_all(z)
        except DerivativeError:
            return z, f, ce, ci, done(_violation(ce, ci))
        act = np.where(ci > 0)[0]
        J = sp.vstack([A_eq, A_in[act]]).tocsr()
        r = np.concatenate([ce, ci[act]])
        if J.shape[0] == 0:
            return z, f, ce, ci, True
        JtJ = np.asarray((J.T @ J).todense()) + 1e-8 * np.eye(problem.n)
        try:
            d = np.linalg.solve(JtJ, -(J.T @ r))
        except np.linalg.LinAlgError:
            return z, f, ce, ci, done(_violation(ce, ci))
        alpha, improved = 1.0, False
        for _ in range(20):
            z_try = np.clip(z + alpha * d, problem.lb, problem.ub)
            try:
                f_t, ce_t, ci_t = eval_all(z_try)
            except (ValueError, FloatingPointError, ArithmeticError):
                alpha *= 0.5
                continue
            m_t = 0.5 * float(ce_t @ ce_t) + 0.5 * float(np.maximum(ci_t, 0) @ np.maximum(ci_t, 0))
            if np.isfinite(m_t) and m_t < m0 * (1 - 1e-4 * alpha):
                z, f, ce, ci, m0 = z_try, f_t, ce_t, ci_t, m_t
                improved = True
                break
            alpha *= 0.5
        if not improved:
            return z, f, ce, ci, done(_violation(ce, ci))
    return z, f, ce, ci, done(_violation(ce, ci))
