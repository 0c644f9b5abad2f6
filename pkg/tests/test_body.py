import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softquad import rod
from softquad.body import (RobotConfig, TorsoBody, TorsoState, WholeBody, aggregate_wrenches,
                           cuboid_inertia, rotation_matrix, torso_step, whole_body_simulate,
                           wrap_angle)
from softquad.leg import TendonProfile, TendonSchedule

vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3)


def test_unit_cube_inertia():
    assert np.allclose(cuboid_inertia((1, 1, 1), 1.0), np.eye(3) / 6)


def test_torso_inertia_value():
    I = cuboid_inertia((0.1255, 0.0855, 0.034), 2.0)
    assert I[1, 1] == pytest.approx(2.0 / 12 * (0.1255 ** 2 + 0.034 ** 2))
    assert I[1, 1] == pytest.approx(2.818e-3, rel=1e-3)


def test_swapping_sides_permutes_inertia():
    a = cuboid_inertia((0.3, 0.1, 0.05), 1.5)
    b = cuboid_inertia((0.1, 0.3, 0.05), 1.5)
    assert a[0, 0] == pytest.approx(b[1, 1]) and a[1, 1] == pytest.approx(b[0, 0])
    with pytest.raises(ValueError):
        cuboid_inertia((0.0, 1, 1), 1.0)


def test_body_defaults():
    b = TorsoBody()
    r = b.attachment_array
    assert np.allclose(np.abs(r), [0.06275, 0.04275, 0.017])
    assert np.allclose(r.sum(axis=0)[:2], 0)
    with pytest.raises(ValueError):
        TorsoBody(mass=0.0)


def test_symmetric_vertical_forces_give_no_torque():
    r = TorsoBody().attachment_array
    f = np.tile([0.0, 0.0, 21.19 / 4], (4, 1))
    F, tau = aggregate_wrenches(f, r)
    assert np.allclose(F, [0, 0, 21.19]) and np.allclose(tau, 0, atol=1e-15)
    F, tau = aggregate_wrenches(np.zeros((4, 3)), r)
    assert not F.any() and not tau.any()


def test_single_front_left_force_torque():
    r = TorsoBody().attachment_array
    f = np.zeros((4, 3))
    f[0, 2] = 2.0
    _, tau = aggregate_wrenches(f, r)
    # r x F with r = (a/2, b/2, -c/2), F = (0, 0, 2): (2 b/2, -2 a/2, 0)
    assert np.allclose(tau, [0.0855, -0.1255, 0.0])


def test_couples_are_added():
    r = TorsoBody().attachment_array
    c = np.zeros((4, 3))
    c[2] = [0.0, 0.3, 0.0]
    _, tau = aggregate_wrenches(np.zeros((4, 3)), r, c)
    assert np.allclose(tau, [0, 0.3, 0])


def test_wrap_angle_range():
    assert wrap_angle(-np.pi) == np.pi
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    w = wrap_angle(np.linspace(-20, 20, 101))
    assert np.all(w > -np.pi) and np.all(w <= np.pi)


def test_rotation_is_orthonormal():
    R = rotation_matrix(0.2, -0.4, 1.1)
    assert np.allclose(R @ R.T, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)


def test_zero_wrench_without_gravity_is_a_fixed_point():
    s = TorsoState(position=[0.1, 0.2, 0.04], euler=[0.01, -0.02, 0.3])
    n = torso_step(s, TorsoBody(), (np.zeros(3), np.zeros(3)), 1e-3, gravity=0.0)
    for k in ("position", "velocity", "euler", "omega"):
        assert np.array_equal(getattr(n, k), getattr(s, k))


def test_weight_support_hovers():
    b = TorsoBody()
    n = torso_step(TorsoState(), b, (np.array([0, 0, b.mass * 9.81]), np.zeros(3)), 1e-3, 9.81)
    assert np.allclose(n.velocity, 0) and np.allclose(n.position, 0)
    with pytest.raises(ValueError):
        torso_step(TorsoState(), b, (np.zeros(3), np.zeros(3)), 0.0)


def test_pure_pitch_torque_integrates():
    b = TorsoBody()
    s = TorsoState()
    tau = np.array([0.0, 1e-3, 0.0])
    dt, T = 1e-4, 0.1
    for _ in range(int(round(T / dt))):
        s = torso_step(s, b, (np.zeros(3), tau), dt, gravity=0.0)
    expected = tau[1] / b.inertia[1, 1] * T
    assert s.omega[1] == pytest.approx(expected, rel=1e-9)
    assert s.euler[1] == pytest.approx(0.5 * expected * T, rel=2e-3)


@settings(max_examples=40, deadline=None)
@given(vec, st.floats(0.1, 5.0))
def test_angular_update_is_linear_in_torque(tau, scale):
    b = TorsoBody()
    s = TorsoState(euler=[0.05, -0.1, 0.7])
    tau = np.array(tau)
    one = torso_step(s, b, (np.zeros(3), tau), 1e-3, gravity=0.0).omega
    many = torso_step(s, b, (np.zeros(3), scale * tau), 1e-3, gravity=0.0).omega
    assert np.allclose(many, scale * one, rtol=1e-12, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(vec, vec)
def test_state_vector_round_trip(a, b):
    s = TorsoState(position=a, velocity=b, euler=[0.1, 0.2, 0.3], omega=b)
    t = TorsoState.from_vector(s.as_vector())
    assert np.array_equal(t.as_vector(), s.as_vector())


@pytest.fixture(scope="module")
def standing():
    return whole_body_simulate(RobotConfig(), None, 3.0)


def test_passive_stance_settles(standing):
    late = standing.t >= 2.0
    assert np.ptp(standing.position[late, 2]) < 1e-3
    assert np.abs(standing.velocity[late, 2]).max() < 1e-3


def test_stance_normal_load_equals_total_weight(standing):
    assert standing.normal[-1].sum() == pytest.approx(2.16 * 9.81, rel=1e-3)
    # the torso itself carries only its own weight through the clamps
    assert standing.leg_forces[-1].sum(axis=0)[2] == pytest.approx(2.0 * 9.81, rel=1e-3)


def test_impulse_matches_momentum_change():
    cfg = RobotConfig()
    robot = WholeBody(cfg, engine="numpy")
    robot.advance(0.05, 0.0)
    v0 = robot.torso.velocity.copy()
    impulse = np.zeros(3)
    for _ in range(200):
        F, _ = robot.step(np.full(4, 0.5))
        impulse += (F - [0, 0, cfg.body.mass * cfg.gravity]) * robot.dt
    assert np.allclose(cfg.body.mass * (robot.torso.velocity - v0), impulse, atol=1e-9)


def test_engines_agree():
    sched = [TendonSchedule([(0.0, TendonProfile(0.2, 0.1, 0.2, 1.0))])] + [TendonSchedule()] * 3
    a = whole_body_simulate(RobotConfig(), sched, 0.2, engine="numpy")
    b = whole_body_simulate(RobotConfig(), sched, 0.2, engine="compiled")
    assert np.allclose(a.position, b.position, atol=1e-10)
    assert np.allclose(a.omega, b.omega, atol=1e-8)


def test_mirrored_actuation_mirrors_the_torso():
    prof = TendonSchedule([(0.0, TendonProfile(0.3, 0.2, 0.3, 1.5))])
    idle = TendonSchedule()
    left = whole_body_simulate(RobotConfig(), [prof, idle, prof, idle], 1.0)
    right = whole_body_simulate(RobotConfig(), [idle, prof, idle, prof], 1.0)
    assert np.abs(left.omega[:, 0]).max() > 1e-4
    assert np.allclose(left.omega[:, 0], -right.omega[:, 0], atol=1e-6)
    assert np.allclose(left.velocity[:, 1], -right.velocity[:, 1], atol=1e-6)
    assert np.allclose(left.position[:, 2], right.position[:, 2], atol=1e-6)


def test_trajectory_rows_match_header(standing):
    rows = list(standing.rows())
    assert len(rows) == len(standing.t) == 91
    assert len(rows[0]) == len(standing.header()) == 25


def test_simulate_rejects_bad_duration():
    with pytest.raises(ValueError):
        whole_body_simulate(RobotConfig(), None, 0.0)
    robot = WholeBody(RobotConfig(), engine="numpy")
    with pytest.raises(ValueError):
        robot.advance(0.01, -1.0)
