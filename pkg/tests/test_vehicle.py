"""Model-layer tests: recursive kinematics vs the hand-expanded oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trailerplan.vehicle import (
    SteeringDomainError,
    VehicleParameters,
    integrate_rk4,
    ms3t_closed_form_derivative,
    ms3t_parameters,
    rk4_step,
    segment_jacobian,
    state_derivative,
    trailer_n_rates,
    wrap_angle,
)


@pytest.fixture(scope="module")
def ms3t():
    return ms3t_parameters()


def single_trailer_params(hitch=0.0):
    return VehicleParameters(
        n_trailers=1,
        steerable=(),
        lengths=(4.6, 2.5),
        hitch_offsets=(hitch,),
        beta0_max=0.73,
        beta_max=(0.87,),
        gamma_max=(),
        omega0_max=0.8,
        omega0_acc_max=10.0,
        omega_s_max=(),
        omega_s_acc_max=(),
        v_max=1.0,
        a_max=1.0,
        jerk_max=40.0,
    )


def random_inbounds_states(params, count, seed):
    rng = np.random.default_rng(seed)
    lo, hi = params.state_bounds()
    lo = np.where(np.isfinite(lo), lo, -5.0)
    hi = np.where(np.isfinite(hi), hi, 5.0)
    states = rng.uniform(lo, hi, size=(count, params.n_states))
    clo, chi = params.control_bounds()
    controls = rng.uniform(clo, chi, size=(count, params.n_controls))
    return states, controls


# -- layout and parameters ------------------------------------------------


def test_state_dimensions(ms3t):
    assert ms3t.n_states == 7 + 3 + 2 * 1 == 12
    assert ms3t.n_controls == 3
    lay = ms3t.layout
    assert lay.beta0 == 0
    assert lay.beta == slice(1, 4)
    assert lay.gamma == slice(4, 5)
    assert (lay.theta, lay.x, lay.y) == (5, 6, 7)
    assert lay.omega0 == 8 and lay.v == 10 and lay.a == 11


def test_parameter_validation_rejects_bad_values():
    good = ms3t_parameters().to_dict()
    with pytest.raises(ValueError):
        VehicleParameters.from_dict({**good, "segment_lengths_m": [0.0, 2.5, 7.0, 7.0]})
    with pytest.raises(ValueError):
        VehicleParameters.from_dict({**good, "max_tractor_steering_rad": 1.6})
    with pytest.raises(ValueError):
        VehicleParameters.from_dict({**good, "steerable_trailers": [4]})
    with pytest.raises(ValueError):
        VehicleParameters.from_dict({**good, "max_trailer_steering_rad": [0.0]})


def test_yaml_round_trip_and_hash(tmp_path, ms3t):
    path = tmp_path / "vehicle.yaml"
    ms3t.to_yaml(path)
    loaded = VehicleParameters.from_yaml(path)
    assert loaded == ms3t
    assert loaded.param_hash() == ms3t.param_hash()
    assert len(ms3t.param_hash()) == 16

    bad = ms3t.to_dict()
    bad["config_version"] = 99
    with pytest.raises(ValueError, match="version"):
        VehicleParameters.from_dict(bad)


def test_bound_overrides_cap_gamma(ms3t):
    lo, hi = ms3t.state_bounds({"gamma_max": 0.0})
    g = ms3t.layout.gamma
    assert np.all(lo[g] == 0.0) and np.all(hi[g] == 0.0)
    lo2, hi2 = ms3t.state_bounds({"gamma_max": 0.175})
    assert hi2[g][0] == pytest.approx(0.175)
    # caps only shrink: a loose override keeps the vehicle bound
    lo3, hi3 = ms3t.state_bounds({"gamma_max": 2.0})
    assert hi3[g][0] == pytest.approx(0.35)


# -- wrap -----------------------------------------------------------------


def test_wrap_angle_boundary():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)


@given(st.floats(-50, 50), st.integers(-3, 3))
def test_wrap_angle_periodic(theta, k):
    w = wrap_angle(theta)
    assert -np.pi < w <= np.pi
    assert wrap_angle(theta + 2 * np.pi * k) == pytest.approx(w, abs=1e-9)


# -- segment velocity maps ------------------------------------------------


def test_segment_jacobian_zero_angles(ms3t):
    J = segment_jacobian(ms3t, 1, 0.0, 0.0, 0.0)
    np.testing.assert_allclose(J, [[-0.64, 0.0], [0.0, 1.0]], atol=1e-15)


def test_segment_jacobian_onaxle_forms(ms3t):
    b2, b3, g3 = 0.31, -0.22, 0.18
    J2 = segment_jacobian(ms3t, 2, b2, 0.0, 0.0)
    np.testing.assert_allclose(J2, [[0.0, np.sin(b2) / 7.0], [0.0, np.cos(b2)]], atol=1e-15)
    J3 = segment_jacobian(ms3t, 3, b3, g3, 0.0)
    np.testing.assert_allclose(
        J3,
        [
            [0.0, np.sin(b3 - g3) / (7.0 * np.cos(g3))],
            [0.0, np.cos(b3) / np.cos(g3)],
        ],
        atol=1e-15,
    )


def test_segment_jacobian_singularity(ms3t):
    with pytest.raises(SteeringDomainError):
        segment_jacobian(ms3t, 3, 0.1, np.pi / 2, 0.0)
    with pytest.raises(ValueError):
        segment_jacobian(ms3t, 4, 0.0, 0.0, 0.0)


# -- trailer rates --------------------------------------------------------


def test_trailer_rates_straight(ms3t):
    x = np.zeros(12)
    x[10] = 1.0
    td, v3 = trailer_n_rates(ms3t, x)
    assert td == pytest.approx(0.0, abs=1e-15)
    assert v3 == pytest.approx(1.0)


def test_trailer_rates_match_explicit_speed_formula(ms3t):
    x = np.zeros(12)
    x[0:5] = [0.2, 0.1, -0.1, 0.15, 0.05]
    x[10] = 1.0
    _, v3 = trailer_n_rates(ms3t, x)
    b0, b1, b2, b3, g3 = x[0:5]
    expected = (
        1.0
        * np.cos(b3)
        / np.cos(g3)
        * np.cos(b2)
        * (1.6 / 4.6 * np.sin(b1) * np.tan(b0) + np.cos(b1))
    )
    assert v3 == pytest.approx(expected, abs=1e-14)


def test_trailer_rates_single_onaxle_trailer():
    p = single_trailer_params(hitch=0.0)
    x = np.zeros(p.n_states)
    x[0] = 0.0
    x[1] = 0.4  # beta_1
    x[p.layout.v] = 0.7
    td, v1 = trailer_n_rates(p, x)
    assert td == pytest.approx(0.7 * np.sin(0.4) / 2.5)
    assert v1 == pytest.approx(0.7 * np.cos(0.4))


# -- state derivative ------------------------------------------------------


def test_straight_roll_derivative(ms3t):
    x = np.zeros(12)
    x[10] = 1.0
    d = state_derivative(ms3t, x, np.zeros(3))
    expected = np.zeros(12)
    expected[6] = 1.0  # x_3 rate
    np.testing.assert_allclose(d, expected, atol=1e-15)


def test_double_integrator_rows(ms3t):
    x = np.zeros(12)
    x[8] = 0.3  # omega_0
    u = np.array([0.5, 0.0, 0.0])
    d = state_derivative(ms3t, x, u)
    assert d[0] == pytest.approx(0.3)  # beta_0 rate
    assert d[8] == pytest.approx(0.5)  # omega_0 rate


def test_closed_form_beta1_rate_value(ms3t):
    x = np.zeros(12)
    x[0] = 0.73
    x[10] = 1.0
    expected = np.tan(0.73) / 4.6 + (1.6 / (4.6 * 2.5)) * np.tan(0.73)
    for fn in (ms3t_closed_form_derivative, state_derivative):
        d = fn(ms3t, x, np.zeros(3))
        assert d[1] == pytest.approx(expected, abs=1e-14)


def test_closed_form_rejects_other_vehicles():
    p_offaxle = VehicleParameters(
        n_trailers=3,
        steerable=(3,),
        lengths=(4.6, 2.5, 7.0, 7.0),
        hitch_offsets=(1.6, 0.5, 0.0),
        beta0_max=0.73,
        beta_max=(0.87, 0.87, 0.87),
        gamma_max=(0.35,),
        omega0_max=0.8,
        omega0_acc_max=10.0,
        omega_s_max=(0.4,),
        omega_s_acc_max=(10.0,),
        v_max=1.0,
        a_max=1.0,
        jerk_max=40.0,
    )
    with pytest.raises(ValueError, match="on-axle"):
        ms3t_closed_form_derivative(p_offaxle, np.zeros(12), np.zeros(3))
    with pytest.raises(ValueError):
        ms3t_closed_form_derivative(single_trailer_params(), np.zeros(8), np.zeros(2))


def test_closed_form_gamma_singularity(ms3t):
    x = np.zeros(12)
    x[4] = np.pi / 2
    with pytest.raises(SteeringDomainError):
        ms3t_closed_form_derivative(ms3t, x, np.zeros(3))


def test_oracle_equivalence_bulk(ms3t):
    states, controls = random_inbounds_states(ms3t, 1000, seed=7)
    d_rec = state_derivative(ms3t, states, controls)
    d_cf = ms3t_closed_form_derivative(ms3t, states, controls)
    assert np.abs(d_rec - d_cf).max() < 1e-10


def test_scaling_exactly_linear_in_v0(ms3t):
    states, controls = random_inbounds_states(ms3t, 64, seed=3)
    lay = ms3t.layout
    d1 = state_derivative(ms3t, states, controls)
    doubled = states.copy()
    doubled[:, lay.v] *= 2.0
    d2 = state_derivative(ms3t, doubled, controls)
    kin = [lay.theta, lay.x, lay.y] + list(range(1, 4))
    # kinematic rows double bit-exactly because v_0 enters as a single factor
    assert np.array_equal(d2[:, kin], 2.0 * d1[:, kin])


def test_position_invariance(ms3t):
    states, controls = random_inbounds_states(ms3t, 32, seed=11)
    moved = states.copy()
    moved[:, ms3t.layout.x] += 13.7
    moved[:, ms3t.layout.y] -= 4.2
    np.testing.assert_array_equal(
        state_derivative(ms3t, states, controls), state_derivative(ms3t, moved, controls)
    )


def test_rotation_equivariance(ms3t):
    states, controls = random_inbounds_states(ms3t, 32, seed=13)
    lay = ms3t.layout
    phi = 0.83
    rotated = states.copy()
    rotated[:, lay.theta] += phi
    d0 = state_derivative(ms3t, states, controls)
    d1 = state_derivative(ms3t, rotated, controls)
    c, s = np.cos(phi), np.sin(phi)
    np.testing.assert_allclose(d1[:, lay.x], c * d0[:, lay.x] - s * d0[:, lay.y], atol=1e-12)
    np.testing.assert_allclose(d1[:, lay.y], s * d0[:, lay.x] + c * d0[:, lay.y], atol=1e-12)
    others = [i for i in range(12) if i not in (lay.x, lay.y)]
    np.testing.assert_allclose(d1[:, others], d0[:, others], atol=1e-12)


# -- integration ----------------------------------------------------------


def test_integrate_straight_advance(ms3t):
    x = np.zeros(12)
    x[10] = 1.0
    traj = integrate_rk4(ms3t, x, np.zeros(3), dt=0.1, n_steps=10)
    assert traj.shape == (11, 12)
    assert traj[-1, ms3t.layout.x] == pytest.approx(1.0, abs=1e-9)


def test_integrate_zero_velocity_freezes_kinematics(ms3t):
    x = np.zeros(12)
    x[8] = 0.5  # steering moves while the vehicle stands still
    u = np.array([2.0, 3.0, 0.0])
    traj = integrate_rk4(ms3t, x, u, dt=0.05, n_steps=20)
    lay = ms3t.layout
    frozen = [lay.theta, lay.x, lay.y] + list(range(1, 4))
    np.testing.assert_array_equal(traj[:, frozen], np.zeros((21, len(frozen))))
    assert traj[-1, lay.beta0] != 0.0


def test_integrate_control_schedule_and_errors(ms3t):
    x = np.zeros(12)
    x[10] = 0.5
    sched = np.zeros((4, 3))
    sched[2, 2] = 1.0
    traj = integrate_rk4(ms3t, x, sched, dt=0.1)
    assert traj.shape == (5, 12)
    with pytest.raises(ValueError):
        integrate_rk4(ms3t, x, np.zeros(3), dt=-0.1, n_steps=2)
    with pytest.raises(ValueError):
        integrate_rk4(ms3t, x, np.zeros(3), dt=0.1)  # n_steps missing

    singular = np.zeros(12)
    singular[4] = np.pi / 2
    with pytest.raises(SteeringDomainError) as exc:
        integrate_rk4(ms3t, singular, np.zeros(3), dt=0.1, n_steps=3)
    assert exc.value.step == 0


def test_integrate_wraps_theta_only_at_output(ms3t):
    x = np.zeros(12)
    x[0] = 0.5  # constant tractor steering, vehicle keeps turning
    x[5] = 3.0
    x[10] = 1.0
    traj = integrate_rk4(ms3t, x, np.zeros(3), dt=0.1, n_steps=400)
    th = traj[:, ms3t.layout.theta]
    assert np.all(th > -np.pi) and np.all(th <= np.pi)
    assert th.min() < -2.0 and th.max() > 2.0  # actually crossed the seam


def rk4_order_controls(dt, t_end=10.0, piece=0.5):
    """Piecewise-constant schedule on a fixed 0.5 s grid.

    Every tested dt divides the piece length, so halving dt integrates the
    same input signal instead of a re-sampled one.
    """
    rng = np.random.default_rng(42)
    n_pieces = int(round(t_end / piece))
    amp = np.stack(
        [
            0.05 * rng.standard_normal(n_pieces),
            0.04 * rng.standard_normal(n_pieces),
            0.2 * rng.standard_normal(n_pieces),
        ],
        axis=1,
    )
    return np.repeat(amp, int(round(piece / dt)), axis=0)


def test_rk4_observed_order(ms3t):
    x0 = np.zeros(12)
    x0[0], x0[4], x0[10] = 0.15, 0.1, 0.5
    ref = integrate_rk4(ms3t, x0, rk4_order_controls(0.00125), dt=0.00125)[-1]
    e1 = np.abs(integrate_rk4(ms3t, x0, rk4_order_controls(0.1), dt=0.1)[-1] - ref).max()
    e2 = np.abs(integrate_rk4(ms3t, x0, rk4_order_controls(0.05), dt=0.05)[-1] - ref).max()
    order = np.log2(e1 / e2)
    assert 3.7 <= order <= 4.3


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.6, 0.6), st.floats(-0.8, 0.8), st.floats(0.1, 1.0))
def test_rk4_step_matches_integrate(ms3t, b0, b1, v0):
    """Single-step helper and the driver agree sample for sample."""
    x = np.zeros(12)
    x[0], x[1], x[10] = b0, b1, v0
    u = np.array([0.1, -0.2, 0.3])
    traj = integrate_rk4(ms3t, x, u, dt=0.05, n_steps=1)
    step = rk4_step(ms3t, x, u, 0.05)
    np.testing.assert_allclose(traj[1], step, atol=1e-15)
