import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softquad import gait
from softquad.body import RobotConfig, TorsoBody
from softquad.harness import nominal_feet
from softquad.leg import ForceAngleMap
from softquad.mpc import (NU, NX, MpcConfig, MpcController, build_qp, constraint_rows,
                          force_commands_to_angles, leg_feasible, linearize, stage_cost)
from softquad.qp import AdmmSolver, kkt_check

BODY = TorsoBody()
FEET = nominal_feet(RobotConfig())
STAND = gait.reference_trajectory(gait.COMMANDS["stand"], 0.0, 1, 0.033)[0]


def hover_controller(**kw):
    cfg = MpcConfig(**kw)
    g = gait.GaitSchedule("hover", (gait.GaitPhase(1.0, frozenset({"FL"}), (0.5,) * 4),))
    return MpcController(cfg, g, gait.COMMANDS["stand"], BODY.inertia)


def rollout_cost(x0, refs, a_d, b_d, U, cfg):
    """Direct simulation of the stage costs, no condensing."""
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for k in range(cfg.horizon):
        u = U[NU * k:NU * (k + 1)]
        x = a_d @ x + b_d @ u
        total += stage_cost(x, refs[k], cfg.q_diag) + u @ (np.asarray(cfg.r_diag) * u)
    return total


def test_kinematic_rows():
    a_d, b_d = linearize(STAND, BODY.inertia, FEET, 0.033)
    x = STAND.copy()
    x[9:12] = [0.1, -0.2, 0.3]
    nxt = a_d @ x
    assert np.allclose(nxt[3:6], x[3:6] + 0.033 * x[9:12])
    assert a_d[11, 12] == pytest.approx(0.033)
    assert nxt[12] == -9.81


def test_vertical_force_input_entry():
    _, b_d = linearize(STAND, BODY.inertia, FEET, 0.033)
    for i in range(4):
        assert b_d[11, 3 * i + 2] == pytest.approx(0.0165)


def test_symmetric_vertical_forces_produce_no_spin():
    _, b_d = linearize(STAND, BODY.inertia, FEET, 0.033)
    u = np.zeros(NU)
    u[2::3] = 5.0
    assert np.allclose((b_d @ u)[6:9], 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        linearize(STAND, np.zeros((3, 3)), FEET, 0.033)


def test_exact_discretisation_close_to_euler():
    a1, b1 = linearize(STAND, BODY.inertia, FEET, 0.033)
    a2, b2 = linearize(STAND, BODY.inertia, FEET, 0.033, exact=True)
    assert np.allclose(a1, a2, atol=1e-3)
    # ZOH gives the half-step position term that Euler lacks
    assert b2[5, 2] == pytest.approx(0.5 * 0.033 ** 2 / 2.0)


def test_weights():
    cfg = MpcConfig()
    assert cfg.Q[5, 5] == pytest.approx(0.1)
    assert cfg.Q[9, 9] == pytest.approx(0.02)
    assert cfg.Q[12, 12] == 0 and cfg.Q[11, 11] == 0
    assert np.allclose(np.diag(cfg.R), 1e-8)
    assert cfg.horizon * cfg.dt == pytest.approx(0.495)
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        MpcConfig(q_diag=(1.0,) * 12)


def test_equality_row_value():
    cfg = MpcConfig()
    A, lo, hi = constraint_rows([(0.1,) * 4] * cfg.horizon, [(True,) * 4] * cfg.horizon, cfg)
    assert A.shape == (21 * 15, 12 * 15)
    assert lo[20] == hi[20] == pytest.approx(21.19, abs=0.01)
    assert cfg.weight == pytest.approx(2.16 * 9.81)


def test_friction_rows_instantiate():
    cfg = MpcConfig(horizon=1)
    A, lo, hi = constraint_rows([(0.1,) * 4], [(True,) * 4], cfg)
    u = np.zeros(NU)
    u[2] = 6.0
    for fx, ok in ((0.6, True), (-0.6, True), (0.61, False), (-0.61, False)):
        u[0] = fx
        v = A @ u
        inside = np.all(v[:5] >= lo[:5] - 1e-12) and np.all(v[:5] <= hi[:5] + 1e-12)
        assert inside == ok


def test_swing_leg_has_zero_upper_bound():
    cfg = MpcConfig(horizon=1)
    _, _, hi = constraint_rows([(0.5,) * 4], [(True, False, True, True)], cfg)
    assert hi[0] == 6.0 and hi[5] == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_condensed_cost_matches_direct_rollout(seed):
    rng = np.random.default_rng(seed)
    cfg = MpcConfig(horizon=4)
    x0 = STAND + np.concatenate([rng.normal(0, 0.01, 12), [0.0]])
    refs = gait.reference_trajectory(gait.COMMANDS["walk"], 0.0, 4, cfg.dt)
    a_d, b_d = linearize(x0, BODY.inertia, FEET, cfg.dt)
    qp = build_qp(x0, refs, a_d, b_d, cfg, [(0.5,) * 4] * 4, [(True,) * 4] * 4)
    U1, U2 = rng.normal(0, 3, (2, NU * 4))
    d_direct = rollout_cost(x0, refs, a_d, b_d, U1, cfg) - rollout_cost(x0, refs, a_d, b_d, U2, cfg)
    assert qp.objective(U1) - qp.objective(U2) == pytest.approx(d_direct, rel=1e-9, abs=1e-12)


def test_build_qp_rejects_short_references():
    cfg = MpcConfig()
    a_d, b_d = linearize(STAND, BODY.inertia, FEET, cfg.dt)
    with pytest.raises(ValueError):
        build_qp(STAND, np.zeros((3, NX)), a_d, b_d, cfg, [(0.5,) * 4] * 15, [(True,) * 4] * 15)


def test_hover_splits_weight_evenly():
    sol = hover_controller().solve_step(STAND, 0.0, FEET)
    fz = sol.u[2::3]
    assert sol.feasible_total and all(sol.feasible_legs)
    assert fz.sum() == pytest.approx(21.19, abs=0.01)
    assert abs(fz.sum() - MpcConfig().weight) <= 1e-4
    assert np.ptp(fz) < 1e-4


def test_on_reference_tracking_cost_is_zero():
    sol = hover_controller().solve_step(STAND, 0.0, FEET)
    assert sol.cost == 0.0


def test_stage_cost_examples():
    q = MpcConfig().q_diag
    x = STAND.copy()
    assert stage_cost(x, STAND, q) == 0.0
    x[5] += 0.03
    assert stage_cost(x, STAND, q) == pytest.approx(9e-5)
    x = STAND.copy()
    x[9] = 0.08
    assert stage_cost(x, STAND, q) == pytest.approx(1.28e-4)
    assert stage_cost(x, STAND, MpcConfig().Q) == pytest.approx(1.28e-4)


def test_solution_satisfies_kkt():
    c = hover_controller()
    x = STAND.copy()
    x[5] = 0.035
    x[0] = 0.02
    cfg = c.config
    a_d, b_d = linearize(x, BODY.inertia, FEET, cfg.dt)
    mu, stance = c.gait_stages(0.0)
    qp = build_qp(x, c.references(0.0, x), a_d, b_d, cfg, mu, stance)
    sol = AdmmSolver(cfg.solver).solve(qp)
    assert sol.solved
    rep = kkt_check(qp, sol.x, tol=1e-5, y=sol.y)
    assert rep.feasibility < 1e-8 and rep.stationarity < 1e-5


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 2 ** 32 - 1))
def test_argmin_invariant_to_weight_scaling(scale, seed):
    rng = np.random.default_rng(seed)
    x = STAND + np.concatenate([rng.normal(0, 0.01, 12), [0.0]])
    base = MpcConfig()
    a = hover_controller().solve_step(x, 0.0, FEET)
    b = hover_controller(q_diag=tuple(scale * v for v in base.q_diag),
                         r_diag=tuple(scale * v for v in base.r_diag)).solve_step(x, 0.0, FEET)
    assert a.feasible_total and b.feasible_total
    assert np.allclose(a.u, b.u, atol=1e-6)


def test_warm_and_cold_objectives_agree():
    cfg = MpcConfig()
    x = STAND.copy()
    x[9] = 0.03
    a_d, b_d = linearize(x, BODY.inertia, FEET, cfg.dt)
    ctrl = hover_controller()
    mu, stance = ctrl.gait_stages(0.0)
    qp = build_qp(x, ctrl.references(0.0, x), a_d, b_d, cfg, mu, stance)
    solver = AdmmSolver(cfg.solver)
    cold = solver.solve(qp)
    warm = solver.solve(qp, cold.x, cold.y)
    assert cold.solved and warm.solved
    assert warm.objective == pytest.approx(cold.objective, abs=1e-8)


def test_no_stance_legs_falls_back():
    c = hover_controller()
    first = c.solve_step(STAND, 0.0, FEET)
    sol = c.solve_step(STAND, 0.033, FEET, stance_override=(False,) * 4)
    assert sol.used_fallback and not sol.feasible_total
    assert sol.status == "primal_infeasible"
    assert np.array_equal(sol.u, first.u)


def test_initial_fallback_is_even_stance_split():
    c = hover_controller()
    assert np.allclose(c.last_feasible[2::3], MpcConfig().weight / 4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=12, max_size=12), st.floats(0.05, 1.0))
def test_leg_feasibility_flags(u, mu):
    cfg = MpcConfig()
    u = np.array(u)
    flags = leg_feasible(u, (mu,) * 4, (True,) * 4, cfg)
    for i in range(4):
        fx, fy, fz = u[3 * i:3 * i + 3]
        inside = 0 <= fz <= 6 and abs(fx) <= mu * fz and abs(fy) <= mu * fz
        if inside:
            assert flags[i]
        elif not flags[i]:
            continue
        else:
            # only allowed through the tolerance band
            assert fz >= -1e-6 and fz <= 6 + 1e-6


def test_force_to_angle_examples():
    u = np.zeros(NU)
    u[2::3] = 5.3
    ang = force_commands_to_angles(u)
    assert np.ptp(ang) == 0 and ang[0] == pytest.approx(114.1, abs=0.05)
    assert force_commands_to_angles(np.zeros(NU))[0] == pytest.approx(64.58, abs=0.005)
    u[2::3] = 6.0
    assert force_commands_to_angles(u, ForceAngleMap())[0] == pytest.approx(116.28)
