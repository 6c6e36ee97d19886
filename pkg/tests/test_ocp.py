"""Maneuver OCP transcription tests.

Derivative callbacks are cross-checked against the solver's own central
finite differences; solved maneuvers are validated against values known
independently: the cruise-time optimum d/v_max and the time-reversal twin
equivalence (driving a speed transition backwards costs exactly the same).
"""

import numpy as np
import pytest

from trailerplan import nlp
from trailerplan.collision import ObstacleSet, circle_centers, default_footprint
from trailerplan.ocp import (
    CostWeights,
    HomotopyParams,
    TerminalManifold,
    stage_cost,
    transcribe,
    transcribe_relaxed,
)
from trailerplan.trajectory import Trajectory
from trailerplan.vehicle import integrate_rk4, ms3t_parameters, rk4_step


@pytest.fixture(scope="module")
def params():
    return ms3t_parameters()


@pytest.fixture(scope="module")
def cost(params):
    return CostWeights.default(params)


def equilibrium(params, v=1.0, theta=0.0, x=0.0, y=0.0):
    lay = params.layout
    s = np.zeros(lay.n)
    s[lay.theta] = theta
    s[lay.x] = x
    s[lay.y] = y
    s[lay.v] = v
    return s


def cruise_trajectory(params, duration=10.0, n=50, v=1.0):
    """Dynamically consistent straight drive used to seed refinement tests."""
    x0 = equilibrium(params, v=v)
    u = np.zeros(params.layout.m)
    xs = integrate_rk4(params, x0, u, duration / n, n_steps=n)
    t = np.linspace(0.0, duration, n + 1)
    us = np.zeros((n + 1, params.layout.m))
    return Trajectory(t, xs, us)


# -- cost model -----------------------------------------------------------


def test_stage_cost_reference_values(params, cost):
    lay = params.layout
    s = np.zeros(lay.n)
    u = np.zeros(lay.m)
    s[lay.beta0] = 0.2
    assert stage_cost(cost, s, u) == pytest.approx(0.02, abs=1e-12)
    s[:] = 0.0
    s[lay.omega0] = 0.1
    u[-1] = 2.0
    assert stage_cost(cost, s, u) == pytest.approx(2.05, abs=1e-12)


def test_stage_cost_batched(params, cost):
    lay = params.layout
    S = np.zeros((4, 5, lay.n))
    U = np.zeros((4, 5, lay.m))
    S[..., lay.beta0] = 0.2
    out = stage_cost(cost, S, U)
    assert out.shape == (4, 5)
    assert np.allclose(out, 0.02)


def test_cost_weights_reject_indefinite(params):
    lay = params.layout
    Q = np.zeros((lay.n, lay.n))
    Q[0, 0] = -1.0
    with pytest.raises(ValueError):
        CostWeights(Q=Q, R=np.eye(lay.m))


# -- terminal manifolds ---------------------------------------------------


def test_manifold_row_counts(params):
    n = params.layout.n
    x0 = equilibrium(params, v=1.0)
    cases = [
        (TerminalManifold(kind="heading_change", theta_target=0.5), n - 2),
        (TerminalManifold(kind="parallel", z_lat=1.0), n - 1),
        (TerminalManifold(kind="straight", v_target=0.0), n - 1),
    ]
    for man, rows in cases:
        C, d = man.residual_rows(params, x0)
        assert C.shape == (rows, n)
        assert d.shape == (rows,)
        assert np.all(np.isfinite(C)) and np.all(np.isfinite(d))
    goal = equilibrium(params, v=1.0, x=5.0)
    C, d = TerminalManifold(kind="full_state", x_goal=goal).residual_rows(params, x0)
    assert C.shape == (n, n)


def test_manifold_rejects_noop_and_degenerate(params):
    x0 = equilibrium(params, v=1.0)
    with pytest.raises(ValueError):
        TerminalManifold(kind="heading_change", theta_target=0.0).residual_rows(params, x0)
    with pytest.raises(ValueError):
        TerminalManifold(kind="parallel", z_lat=0.0).residual_rows(params, x0)
    with pytest.raises(ValueError):
        TerminalManifold(kind="straight", v_target=1.0).residual_rows(params, x0)
    with pytest.raises(ValueError):
        TerminalManifold(kind="full_state", x_goal=x0).residual_rows(params, x0)
    standing = equilibrium(params, v=0.0)
    with pytest.raises(ValueError):
        TerminalManifold(kind="heading_change", theta_target=0.5).residual_rows(params, standing)
    with pytest.raises(ValueError):
        TerminalManifold(kind="bogus")


def test_manifold_heading_branch_matching(params):
    # target 350 deg from a 10 deg start must resolve to -20 deg, not +340
    x0 = equilibrium(params, v=1.0, theta=np.deg2rad(10.0))
    man = TerminalManifold(kind="heading_change", theta_target=np.deg2rad(350.0))
    C, d = man.residual_rows(params, x0)
    row = np.argmax(C[:, params.layout.theta])
    assert d[row] == pytest.approx(np.deg2rad(-10.0), abs=1e-12)


# -- transcription --------------------------------------------------------


def test_decision_dimension(params, cost):
    x0 = equilibrium(params, v=1.0)
    man = TerminalManifold(kind="straight", v_target=0.0)
    ocp = transcribe(params, cost, x0, man, K=50)
    assert ocp.n_z == 51 * 12 + 50 * 3 + 1 == 763
    assert ocp.problem.n == 763


def test_transcribe_input_validation(params, cost):
    x0 = equilibrium(params, v=1.0)
    man = TerminalManifold(kind="straight", v_target=0.0)
    with pytest.raises(ValueError):
        transcribe(params, cost, x0, man, K=9)
    bad = x0.copy()
    bad[params.layout.beta0] = 2.0
    with pytest.raises(ValueError):
        transcribe(params, cost, bad, man, K=20)
    with pytest.raises(ValueError):
        transcribe(
            params, cost, x0, man, K=20,
            guess=(np.zeros((5, 12)), np.zeros((20, 3)), 5.0),
        )


def test_first_node_pinned(params, cost):
    x0 = equilibrium(params, v=1.0)
    man = TerminalManifold(kind="straight", v_target=0.0)
    ocp = transcribe(params, cost, x0, man, K=20)
    n = params.layout.n
    assert np.array_equal(ocp.problem.lb[:n], ocp.problem.ub[:n])
    assert np.allclose(ocp.problem.lb[:n], x0)


@pytest.mark.parametrize(
    "kind,kw,v0",
    [
        ("heading_change", {"theta_target": np.pi / 4}, 1.0),
        ("heading_change", {"theta_target": -np.pi / 2}, -1.0),
        ("parallel", {"z_lat": 2.0}, 1.0),
        ("parallel", {"z_lat": -1.0}, -1.0),
        ("straight", {"v_target": 1.0}, -1.0),
    ],
)
def test_rollout_guess_consistency(params, cost, kind, kw, v0):
    """Kind-specific guesses must start defect-free and inside the boxes."""
    x0 = equilibrium(params, v=v0)
    ocp = transcribe(params, cost, x0, TerminalManifold(kind=kind, **kw), K=40)
    z0 = ocp.problem.z0
    assert ocp.defect_norm(z0) < 1e-8
    X = ocp.unpack(z0)[0]
    x_lb, x_ub = params.state_bounds()
    assert np.all(X >= x_lb[None, :] - 1e-9)
    assert np.all(X <= x_ub[None, :] + 1e-9)


def test_derivatives_match_finite_differences(params, cost):
    x0 = equilibrium(params, v=1.0)
    man = TerminalManifold(kind="heading_change", theta_target=np.pi / 6)
    ocp = transcribe(params, cost, x0, man, K=10)
    prob = ocp.problem
    rng = np.random.default_rng(7)
    z = prob.z0 + 1e-3 * rng.standard_normal(prob.n)
    z = np.clip(z, prob.lb, prob.ub)

    g_cb, Je_cb, Ji_cb = nlp.gradients(prob, z)
    g_fd, Je_fd, Ji_fd = nlp.gradients(prob, z, force_fd=True)

    def close(a, b):
        a = np.asarray(a.todense()) if hasattr(a, "todense") else np.asarray(a)
        b = np.asarray(b.todense()) if hasattr(b, "todense") else np.asarray(b)
        return float(np.abs(a - b).max() / (1.0 + np.abs(b).max()))

    assert close(g_cb, g_fd) < 1e-5
    assert close(Je_cb, Je_fd) < 1e-5
    assert close(Ji_cb, Ji_fd) < 1e-5


def test_objective_matches_independent_quadrature(params, cost):
    x0 = equilibrium(params, v=1.0)
    man = TerminalManifold(kind="heading_change", theta_target=np.pi / 4)
    ocp = transcribe(params, cost, x0, man, K=30)
    z0 = ocp.problem.z0
    traj = ocp.dense_output(z0)
    lx = stage_cost(cost, traj.x, np.zeros_like(traj.u))
    lu = stage_cost(cost, np.zeros_like(traj.x), traj.u)
    J_ref = float(np.trapezoid(lx + lu, traj.t)) + cost.time_weight * traj.duration
    J = ocp.problem.objective(z0)
    assert abs(J - J_ref) / abs(J_ref) < 0.01


def test_node_times_and_dense_output(params, cost):
    x0 = equilibrium(params, v=1.0)
    man = TerminalManifold(kind="parallel", z_lat=1.5)
    ocp = transcribe(params, cost, x0, man, K=25)
    z0 = ocp.problem.z0
    X, U, tG, _ = ocp.unpack(z0)
    tn = ocp.node_times(z0)
    assert tn.shape == (26,)
    assert tn[0] == 0.0
    assert tn[-1] == pytest.approx(tG, rel=1e-12)
    traj = ocp.dense_output(z0)
    assert len(traj) == 25 * ocp.n_sub + 1
    assert traj.duration == pytest.approx(tG, rel=1e-12)
    # shooting nodes appear verbatim in the dense samples
    assert np.allclose(traj.x[:: ocp.n_sub][:-1], X[:-1], atol=1e-12)
    assert np.allclose(traj.x[-1], X[-1], atol=1e-12)
    assert traj.cost == pytest.approx(ocp.problem.objective(z0), rel=1e-12)


def test_cruise_reaches_time_optimal_duration(params, cost):
    """10 m at v_max=1 with matched boundary speeds: optimum is 10 s."""
    x0 = equilibrium(params, v=1.0)
    goal = equilibrium(params, v=1.0, x=10.0)
    ocp = transcribe(
        params, cost, x0, TerminalManifold(kind="full_state", x_goal=goal),
        K=50, t_guess=10.0,
    )
    sol = nlp.solve(ocp.problem, nlp.SolveOptions(max_iter=60))
    assert sol.converged
    tG = ocp.unpack(sol.z)[2]
    assert abs(tG - 10.0) / 10.0 < 0.01
    assert ocp.defect_norm(sol.z) < 1e-8


def test_speed_transition_time_reversal_twins(params, cost):
    """Accelerating 0->1 and stopping 1->0 are the same maneuver reversed."""
    results = {}
    for label, v0, vt in [("up", 0.0, 1.0), ("down", 1.0, 0.0), ("rev", -1.0, 0.0)]:
        x0 = equilibrium(params, v=v0)
        man = TerminalManifold(kind="straight", v_target=vt)
        ocp = transcribe(params, cost, x0, man, K=50)
        sol = nlp.solve(ocp.problem, nlp.SolveOptions(max_iter=100))
        assert sol.converged, label
        results[label] = (sol.objective, ocp.unpack(sol.z)[2])
    J_up, t_up = results["up"]
    for other in ("down", "rev"):
        J_o, t_o = results[other]
        assert abs(J_o - J_up) / J_up < 1e-4
        assert abs(t_o - t_up) / t_up < 1e-4


# -- relaxed boundary transcription ---------------------------------------


def test_homotopy_params_validation():
    with pytest.raises(ValueError):
        HomotopyParams(eps_init=1.5)
    with pytest.raises(ValueError):
        HomotopyParams(c_p=(-1.0, 10.0))


def test_relaxed_guess_satisfies_constraints_at_eps_one(params, cost):
    guess = cruise_trajectory(params)
    ocp = transcribe_relaxed(params, cost, guess.x[0], guess.x[-1], guess)
    z0 = ocp.problem.z0
    assert z0[-2:] == pytest.approx([1.0, 1.0])
    ce = ocp.problem.c_eq(z0)
    assert np.abs(ce).max() < 1e-8
    # epsilon variables live in [0, 1]
    assert np.allclose(ocp.problem.lb[-2:], 0.0)
    assert np.allclose(ocp.problem.ub[-2:], 1.0)


def test_relaxed_objective_includes_boundary_penalty(params, cost):
    guess = cruise_trajectory(params)
    hom = HomotopyParams(c_p=(250.0, 125.0))
    ocp = transcribe_relaxed(params, cost, guess.x[0], guess.x[-1], guess, homotopy=hom)
    z0 = ocp.problem.z0
    J = ocp.problem.objective(z0)
    traj = ocp.dense_output(z0)
    lx = stage_cost(cost, traj.x, np.zeros_like(traj.u))
    lu = stage_cost(cost, np.zeros_like(traj.x), traj.u)
    J_dyn = float(np.trapezoid(lx + lu, traj.t)) + cost.time_weight * traj.duration
    assert abs(J - (J_dyn + 375.0)) / J < 0.01


def test_relaxed_unperturbed_drives_eps_to_zero(params, cost):
    guess = cruise_trajectory(params)
    ocp = transcribe_relaxed(params, cost, guess.x[0], guess.x[-1], guess)
    sol = nlp.solve(ocp.problem, nlp.SolveOptions(max_iter=120))
    assert sol.converged
    eps = ocp.unpack(sol.z)[3]
    assert np.all(eps < 1e-6)
    X = ocp.unpack(sol.z)[0]
    assert np.abs(X[0] - guess.x[0]).max() < 1e-6


def absorb_trajectory(params, travel_time=40.0, dt=0.2):
    """Standstill-to-standstill straight with an accelerate/cruise/brake
    jerk profile, rolled out through the model so the defects vanish."""
    lay = params.layout
    nk = int(travel_time / dt)
    jerk = np.zeros(nk)
    jerk[0:5], jerk[5:10] = 1.0, -1.0
    jerk[-10:-5], jerk[-5:] = -1.0, 1.0
    x = np.zeros(lay.n)
    xs, us = [x.copy()], []
    for k in range(nk):
        u = np.zeros(lay.m)
        u[-1] = jerk[k]
        x = rk4_step(params, x, u, dt)
        xs.append(x.copy())
        us.append(u)
    us.append(np.zeros(lay.m))
    t = np.linspace(0.0, travel_time, nk + 1)
    return Trajectory(t, np.array(xs), np.array(us), stage_boundaries=(0, 10, nk - 10))


def test_relaxed_perturbed_start_recovers_exact_boundary(params, cost):
    # all three hitch angles bent by 0.3 rad at standstill; the 38 m of
    # forward travel in the guess is enough rolling distance to absorb it
    guess = absorb_trajectory(params)
    lay = params.layout
    x_init = guess.x[0].copy()
    x_init[lay.beta] += 0.3
    ocp = transcribe_relaxed(params, cost, x_init, guess.x[-1], guess)
    sol = nlp.solve(ocp.problem, nlp.SolveOptions(max_iter=120))
    assert sol.converged
    X, _, _, eps = ocp.unpack(sol.z)
    assert np.all(eps < 1e-6)
    assert np.abs(X[0] - x_init).max() < 1e-6
    assert np.abs(X[-1] - guess.x[-1]).max() < 1e-6


def test_relaxed_interval_fractions_follow_guess_timing(params, cost):
    guess = cruise_trajectory(params)
    ocp = transcribe_relaxed(params, cost, guess.x[0], guess.x[-1], guess)
    assert ocp.fractions.sum() == pytest.approx(1.0, abs=1e-12)
    tn = ocp.node_times(ocp.problem.z0)
    assert tn[-1] == pytest.approx(guess.duration, rel=1e-12)


def test_relaxed_forward_stage_blocks_reverse_motion(params, cost):
    guess = cruise_trajectory(params)
    ocp = transcribe_relaxed(params, cost, guess.x[0], guess.x[-1], guess)
    lay = params.layout
    n = lay.n
    for k in range(1, ocp.K):
        assert ocp.problem.lb[k * n + lay.v] == 0.0


def test_relaxed_steering_domain_guard(params, cost):
    guess = cruise_trajectory(params)
    bad = guess.x.copy()
    bad[3, params.layout.gamma] = np.pi / 2
    broken = Trajectory(guess.t, bad, guess.u)
    with pytest.raises(ValueError):
        transcribe_relaxed(params, cost, bad[0], bad[-1], broken)


# -- obstacle rows --------------------------------------------------------


def test_obstacle_rows_pruned_by_distance(params, cost):
    guess = cruise_trajectory(params)
    far = ObstacleSet(circles=((0.0, 80.0, 1.0),))
    ocp = transcribe_relaxed(params, cost, guess.x[0], guess.x[-1], guess, obstacles=far)
    assert ocp.problem.c_ineq is None or ocp._n_obs_rows == 0


def test_obstacle_row_values_match_geometry(params, cost):
    guess = cruise_trajectory(params)
    obs = ObstacleSet(circles=((5.0, 4.5, 1.0),))
    margin = 0.05
    ocp = transcribe_relaxed(
        params, cost, guess.x[0], guess.x[-1], guess, obstacles=obs, margin=margin
    )
    assert ocp._n_obs_rows > 0
    z0 = ocp.problem.z0
    vals = ocp.problem.c_ineq(z0)[-ocp._n_obs_rows :]
    fp = ocp.footprint
    X = ocp.unpack(z0)[0]
    centers = circle_centers(params, fp, X)
    ob = ocp._obs
    expect = []
    for k, b, c_o, rr2 in zip(ob["k"], ob["b"], ob["center"], ob["rr2"]):
        d2 = float(((centers[k, b] - c_o) ** 2).sum())
        expect.append(rr2 - d2)
        assert rr2 == pytest.approx((fp.radius + 1.0 + margin) ** 2, rel=1e-12)
    assert np.allclose(vals, expect, atol=1e-10)
