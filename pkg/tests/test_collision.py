"""Footprint geometry and clearance tests.

The pose-chain examples pin down the hitch conventions numerically; the
equivariance/monotonicity properties and the oversampling oracle guard the
clearance reductions.
"""

import numpy as np
import pytest

from trailerplan.collision import (
    NO_OBSTACLE_CLEARANCE,
    Footprint,
    ObstacleSet,
    body_poses,
    circle_centers,
    default_footprint,
    point_polygon_distance,
    state_clearance,
    sweep_check,
)
from trailerplan.vehicle import ms3t_parameters


@pytest.fixture(scope="module")
def ms3t():
    return ms3t_parameters()


@pytest.fixture(scope="module")
def fp(ms3t):
    return default_footprint(ms3t)


def straight_state(ms3t, x=0.0, y=0.0, theta=0.0, v=0.0):
    s = np.zeros(ms3t.layout.n)
    lay = ms3t.layout
    s[lay.theta] = theta
    s[lay.x] = x
    s[lay.y] = y
    s[lay.v] = v
    return s


def random_states(ms3t, rng, count):
    lay = ms3t.layout
    lo, hi = ms3t.state_bounds()
    lo = np.where(np.isfinite(lo), lo, -3.0)
    hi = np.where(np.isfinite(hi), hi, 3.0)
    s = rng.uniform(lo, hi, size=(count, lay.n))
    s[:, lay.x] = rng.uniform(-20, 20, count)
    s[:, lay.y] = rng.uniform(-20, 20, count)
    s[:, lay.theta] = rng.uniform(-np.pi, np.pi, count)
    return s


def test_straight_chain_positions(ms3t):
    poses = body_poses(ms3t, straight_state(ms3t))
    assert poses.shape == (4, 3)
    # rear axles walking forward from trailer 3 at the origin
    np.testing.assert_allclose(poses[3], [0.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(poses[2], [7.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(poses[1], [14.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(poses[0], [14.0 + 2.5 + 1.6, 0.0, 0.0], atol=1e-12)


def test_joint_angle_adds_to_heading(ms3t):
    s = straight_state(ms3t)
    s[ms3t.layout.beta][0] = np.pi / 2  # beta_1, hypothetical
    poses = body_poses(ms3t, s)
    assert poses[0, 2] == pytest.approx(poses[1, 2] + np.pi / 2)


def test_hitch_coincidence_random(ms3t):
    rng = np.random.default_rng(7)
    states = random_states(ms3t, rng, 200)
    poses = body_poses(ms3t, states)
    for i in range(1, ms3t.n_trailers + 1):
        L = ms3t.lengths[i]
        M = ms3t.hitch_offsets[i - 1]
        front = poses[:, i, :2] + L * np.stack(
            [np.cos(poses[:, i, 2]), np.sin(poses[:, i, 2])], axis=1
        )
        back = poses[:, i - 1, :2] - M * np.stack(
            [np.cos(poses[:, i - 1, 2]), np.sin(poses[:, i - 1, 2])], axis=1
        )
        assert np.abs(front - back).max() < 1e-9


def test_default_footprint_layout(ms3t, fp):
    assert fp.n_circles == 8
    assert fp.radius == 2.0
    centers = circle_centers(ms3t, fp, straight_state(ms3t))
    assert centers.shape == (8, 2)
    # tractor slabs first, then trailers; straight config puts everything on y=0
    np.testing.assert_allclose(centers[:, 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(centers[0], [18.1 + 4.6 / 4, 0.0], atol=1e-12)
    np.testing.assert_allclose(centers[1], [18.1 + 3 * 4.6 / 4, 0.0], atol=1e-12)
    np.testing.assert_allclose(centers[6], [7.0 / 4, 0.0], atol=1e-12)
    np.testing.assert_allclose(centers[7], [3 * 7.0 / 4, 0.0], atol=1e-12)


def test_footprint_coverage_rejects_thin_radius(ms3t):
    with pytest.raises(ValueError):
        default_footprint(ms3t, radius=1.0)
    # a 2 m wide rectangle over a 7 m body is just beyond two radius-2 circles
    with pytest.raises(ValueError):
        default_footprint(ms3t, width=2.0)
    # three circles per body recover the 2 m width
    fp3 = default_footprint(ms3t, width=2.0, circles_per_body=3)
    assert fp3.n_circles == 12


def test_no_obstacles_sentinel(ms3t, fp):
    c = state_clearance(ms3t, fp, ObstacleSet(), straight_state(ms3t))
    assert c == NO_OBSTACLE_CLEARANCE


def test_concentric_circle_clearance(ms3t, fp):
    centers = circle_centers(ms3t, fp, straight_state(ms3t))
    obs = ObstacleSet(circles=((centers[3, 0], centers[3, 1], 1.5),))
    c = state_clearance(ms3t, fp, obs, straight_state(ms3t))
    assert c == pytest.approx(-(2.0 + 1.5), abs=1e-12)


def test_circle_clearance_metric(ms3t, fp):
    state = straight_state(ms3t)
    centers = circle_centers(ms3t, fp, state)
    obs_center = np.array([30.0, 10.0])
    obs = ObstacleSet(circles=((obs_center[0], obs_center[1], 1.0),))
    expect = np.linalg.norm(centers - obs_center, axis=1).min() - 2.0 - 1.0
    assert state_clearance(ms3t, fp, obs, state) == pytest.approx(expect, abs=1e-12)


def test_polygon_distance_unit_square():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert point_polygon_distance(np.array([2.0, 0.5]), sq) == pytest.approx(1.0)
    assert point_polygon_distance(np.array([0.5, 0.5]), sq) == pytest.approx(-0.5)
    assert point_polygon_distance(np.array([2.0, 2.0]), sq) == pytest.approx(np.sqrt(2.0))
    # clockwise input is normalised, same answers
    assert point_polygon_distance(np.array([2.0, 0.5]), sq[::-1]) == pytest.approx(1.0)


def test_polygon_validation():
    with pytest.raises(ValueError):
        ObstacleSet(polygons=(np.array([[0, 0], [1, 0]]),))
    with pytest.raises(ValueError):
        ObstacleSet(
            polygons=(np.array([[0.0, 0.0], [2.0, 0.0], [0.2, 0.2], [0.0, 2.0]]),)
        )
    with pytest.raises(ValueError):
        ObstacleSet(circles=((0.0, 0.0, -1.0),))


def test_polygon_clearance_sign(ms3t, fp):
    state = straight_state(ms3t)
    wall = np.array([[25.0, -5.0], [27.0, -5.0], [27.0, 5.0], [25.0, 5.0]])
    obs = ObstacleSet(polygons=(wall,))
    centers = circle_centers(ms3t, fp, state)
    expect = (25.0 - centers[:, 0].max()) - 2.0
    assert state_clearance(ms3t, fp, obs, state) == pytest.approx(expect, abs=1e-9)


def test_equivariance_under_rigid_transform(ms3t, fp):
    rng = np.random.default_rng(11)
    lay = ms3t.layout
    for _ in range(25):
        s = random_states(ms3t, rng, 1)[0]
        obs = ObstacleSet(
            circles=tuple(
                (rng.uniform(-25, 25), rng.uniform(-25, 25), rng.uniform(0.5, 3.0))
                for _ in range(3)
            ),
            polygons=(
                np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 2.0], [0.0, 2.0]])
                + rng.uniform(-20, 20, 2),
            ),
        )
        alpha = rng.uniform(-np.pi, np.pi)
        shift = rng.uniform(-10, 10, 2)
        R = np.array([[np.cos(alpha), -np.sin(alpha)], [np.sin(alpha), np.cos(alpha)]])
        s2 = s.copy()
        s2[[lay.x, lay.y]] = R @ s[[lay.x, lay.y]] + shift
        s2[lay.theta] += alpha
        obs2 = ObstacleSet(
            circles=tuple(
                (*(R @ np.array([cx, cy]) + shift), r) for cx, cy, r in obs.circles
            ),
            polygons=tuple((R @ np.asarray(p).T).T + shift for p in obs.polygons),
        )
        c1 = state_clearance(ms3t, fp, obs, s)
        c2 = state_clearance(ms3t, fp, obs2, s2)
        assert abs(c1 - c2) < 1e-9


def test_radius_monotonicity(ms3t, fp):
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = random_states(ms3t, rng, 1)[0]
        circ = (rng.uniform(-25, 25), rng.uniform(-25, 25), rng.uniform(0.5, 2.0))
        grow = rng.uniform(0.0, 3.0)
        c1 = state_clearance(ms3t, fp, ObstacleSet(circles=(circ,)), s)
        c2 = state_clearance(
            ms3t, fp, ObstacleSet(circles=((circ[0], circ[1], circ[2] + grow),)), s
        )
        assert c2 <= c1 + 1e-12


def line_states(ms3t, start, heading, length, count):
    lay = ms3t.layout
    s = np.tile(straight_state(ms3t, theta=heading), (count, 1))
    d = np.linspace(0.0, length, count)
    s[:, lay.x] = start[0] + d * np.cos(heading)
    s[:, lay.y] = start[1] + d * np.sin(heading)
    return s


def test_sweep_far_obstacle_clean(ms3t, fp):
    states = line_states(ms3t, (0.0, 0.0), 0.0, 20.0, 400)
    obs = ObstacleSet(circles=((0.0, 200.0, 3.0),))
    assert sweep_check(ms3t, fp, obs, states) is None


def test_sweep_reports_first_violation(ms3t, fp):
    states = line_states(ms3t, (0.0, 0.0), 0.0, 30.0, 601)
    obs = ObstacleSet(circles=((35.0, 0.0, 2.0),))
    idx = sweep_check(ms3t, fp, obs, states)
    clear = state_clearance(ms3t, fp, obs, states)
    assert idx == int(np.argmax(clear < 0.0))
    assert clear[idx] < 0.0
    assert np.all(clear[:idx] >= 0.0)


def test_sweep_margin_shifts_verdict(ms3t, fp):
    states = line_states(ms3t, (0.0, 0.0), 0.0, 5.0, 100)
    obs = ObstacleSet(circles=((30.0, 7.0, 2.0),))
    assert sweep_check(ms3t, fp, obs, states, margin=0.0) is None
    assert sweep_check(ms3t, fp, obs, states, margin=5.0) is not None


def test_oversampling_oracle_agreement(ms3t, fp):
    rng = np.random.default_rng(21)
    tested = 0
    for _ in range(100):
        start = rng.uniform(-10, 10, 2)
        heading = rng.uniform(-np.pi, np.pi)
        dense = line_states(ms3t, start, heading, 20.0, 4001)
        coarse = dense[::10]
        obs = ObstacleSet(
            circles=tuple(
                (rng.uniform(-20, 40), rng.uniform(-20, 40), rng.uniform(1.0, 4.0))
                for _ in range(4)
            )
        )
        min_clear = state_clearance(ms3t, fp, obs, dense).min()
        if abs(min_clear) < 0.02:
            continue  # grazing contact; verdict legitimately sampling-dependent
        tested += 1
        assert (sweep_check(ms3t, fp, obs, coarse) is None) == (
            sweep_check(ms3t, fp, obs, dense) is None
        )
    assert tested > 80
