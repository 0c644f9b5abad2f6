import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softquad import rod
from softquad.rod import (ContactParams, NodalLoads, RodError, RodGeometry, RodMaterial,
                          RodProperties, RodState, StabilizationParams)

GEOM = RodGeometry()
MAT = RodMaterial()
PROPS = RodProperties.build(GEOM, MAT)
DS = 0.19 / 30


def straight():
    return rod.straight_reference(GEOM)


def test_taper_ends_and_midpoint():
    assert rod.node_thickness(GEOM, 0) == pytest.approx(0.0135)
    assert rod.node_thickness(GEOM, 30) == pytest.approx(0.0035)
    assert rod.node_thickness(GEOM, 15) == pytest.approx(0.0085)
    with pytest.raises(IndexError):
        rod.node_thickness(GEOM, 31)
    with pytest.raises(IndexError):
        rod.node_thickness(GEOM, -1)


def test_segment_length_is_exact():
    assert GEOM.segment_length == 0.19 / 30
    with pytest.raises(ValueError):
        RodGeometry(node_count=2)


def test_section_properties_at_base():
    area, second, mass, rot = rod.cross_section(GEOM, MAT, 0)
    assert area == pytest.approx(2.7e-4)
    assert second == pytest.approx(4.100e-9, rel=1e-3)
    assert mass == pytest.approx(2.052e-3, rel=1e-3)
    assert rot == pytest.approx(0.5 * 1200 * 2.7e-4 * DS ** 2)


def test_uniform_rod_has_constant_area():
    g = RodGeometry(thickness_base=0.01, thickness_tip=0.01)
    p = RodProperties.build(g, MAT)
    assert np.all(p.area == p.area[0])


def test_segment_kinematics_cases():
    s = straight()
    assert rod.segment_kinematics(s, 4) == pytest.approx((DS, 0.0))
    v = RodState.from_reference(np.array([0.0, 0.0, 0.0]), np.array([0.0, DS, 2 * DS]))
    length, angle = rod.segment_kinematics(v, 0)
    assert length == pytest.approx(DS)
    assert angle == pytest.approx(math.pi / 2)
    w = RodState.from_reference(np.array([0.0, 0.0063333 * 1.1, 0.02]), np.zeros(3))
    assert rod.segment_kinematics(w, 0)[0] == pytest.approx(0.0063333 * 1.1)


def test_coincident_nodes_are_an_error():
    s = straight()
    s.x[3] = s.x[2]
    s.z[3] = s.z[2]
    with pytest.raises(RodError):
        rod.segment_kinematics(s, 2)
    with pytest.raises(RodError):
        rod.internal_forces(s, PROPS, NodalLoads.zeros(31))


def test_reference_state_has_no_internal_load():
    loads = rod.internal_forces(straight(), PROPS, NodalLoads.zeros(31))
    # node coordinates carry rounding, so segment lengths match ds to an ulp
    assert np.abs(loads.fx).max() < 1e-9
    assert np.all(loads.fz == 0) and np.all(loads.my == 0)


def test_stretching_base_segment_by_ten_percent():
    s = straight()
    s.x[1:] += 0.1 * DS
    mat = RodMaterial(shear_coupling=False)
    loads = rod.internal_forces(s, RodProperties.build(GEOM, mat), NodalLoads.zeros(31))
    assert loads.fx[0] == pytest.approx(270.0)
    assert loads.fx[1] == pytest.approx(-270.0)


def test_bending_couple_restores_rest_shape():
    s = straight()
    s.theta[10] += 0.01
    loads = rod.internal_forces(s, RodProperties.build(GEOM, RodMaterial(shear_coupling=False)),
                                NodalLoads.zeros(31))
    # the rotated node is pushed back, its neighbours are dragged along
    assert loads.my[10] < 0
    assert loads.my[9] > 0 and loads.my[11] > 0


def random_state(rng, scale=1e-3):
    s = straight()
    s.x = s.x + rng.normal(0, scale, 31)
    s.z = s.z + rng.normal(0, scale, 31)
    s.theta = s.theta + rng.normal(0, 50 * scale, 31)
    return s


@pytest.mark.parametrize("shear", [True, False])
def test_internal_forces_are_reciprocal(shear):
    rng = np.random.default_rng(3)
    props = RodProperties.build(GEOM, RodMaterial(shear_coupling=shear))
    for _ in range(20):
        s = random_state(rng)
        loads = rod.internal_forces(s, props, NodalLoads.zeros(31))
        scale = np.abs(loads.fx).max() + np.abs(loads.fz).max()
        assert abs(loads.fx.sum()) < 1e-10 * scale
        assert abs(loads.fz.sum()) < 1e-10 * scale
        moment = (s.x * loads.fz - s.z * loads.fx + loads.my).sum()
        assert abs(moment) < 1e-10 * scale * GEOM.length


def fd_gradient(s, props, step=1e-7):
    out = {}
    for name in ("x", "z", "theta"):
        g = np.zeros(31)
        for i in range(31):
            p, m = s.copy(), s.copy()
            getattr(p, name)[i] += step
            getattr(m, name)[i] -= step
            g[i] = (rod.elastic_energy(p, props) - rod.elastic_energy(m, props)) / (2 * step)
        out[name] = g
    return out


@pytest.mark.parametrize("shear", [True, False])
def test_internal_forces_match_energy_gradient(shear):
    rng = np.random.default_rng(11)
    props = RodProperties.build(GEOM, RodMaterial(shear_coupling=shear))
    for _ in range(3):
        s = random_state(rng)
        loads = rod.internal_forces(s, props, NodalLoads.zeros(31))
        g = fd_gradient(s, props)
        f = np.concatenate([loads.fx, loads.fz, loads.my])
        ref = -np.concatenate([g["x"], g["z"], g["theta"]])
        assert np.linalg.norm(f - ref) < 1e-5 * np.linalg.norm(ref)


def test_contact_force_values():
    p = ContactParams()
    s = RodState.from_reference(np.array([0.0, 0.01, 0.02]), np.array([0.001, -0.001, -0.001]))
    s.vz[:] = [0.0, -0.01, 0.2]
    loads = rod.contact_forces(s, p, NodalLoads.zeros(3))
    assert loads.fz[0] == 0.0
    assert loads.fz[1] == pytest.approx(100.1)
    assert loads.fz[2] == pytest.approx(98.0)


def test_contact_never_pulls_down():
    p = ContactParams()
    s = RodState.from_reference(np.array([0.0, 0.01]), np.array([0.0, -1e-4]))
    s.vz[1] = 5.0
    loads = rod.contact_forces(s, p, NodalLoads.zeros(2))
    assert loads.fz[1] == 0.0


def test_friction_values():
    p = ContactParams()
    s = RodState.from_reference(np.array([0.0, 0.01, 0.02]), np.array([0.001, 0.0, -0.001]))
    s.vx[:] = [0.05, 0.05, -0.05]
    loads = rod.friction_forces(s, p, NodalLoads.zeros(3))
    assert loads.fx[0] == 0.0
    assert loads.fx[1] == pytest.approx(-0.5690, abs=1e-4)
    assert loads.fx[2] == pytest.approx(0.5690, abs=1e-4)
    s.vx[:] = 5e-5
    assert np.all(rod.friction_forces(s, p, NodalLoads.zeros(3)).fx == 0.0)


def test_restoring_and_damping():
    stab = StabilizationParams()
    s = straight()
    s.x[5] += 0.01
    s.z[6] -= 0.005
    loads = rod.restoring_forces(s, stab, NodalLoads.zeros(31))
    assert loads.fx[5] == pytest.approx(-8.0)
    assert loads.fz[6] == pytest.approx(4.0)
    assert loads.fx[0] == 0.0
    s = straight()
    s.vx[3] = 1.0
    s.omega[4] = 2.0
    loads = rod.damping_forces(s, stab, NodalLoads.zeros(31))
    assert loads.fx[3] == pytest.approx(-0.1)
    assert loads.my[4] == pytest.approx(-0.2)
    assert np.all(rod.damping_forces(straight(), stab, NodalLoads.zeros(31)).fx == 0)


def test_accelerations_free_fall_balance_and_clamp():
    s = straight()
    ax, az, al = rod.assemble_accelerations(s, NodalLoads.zeros(31), PROPS)
    assert np.allclose(az[1:], -9.81)
    loads = NodalLoads.zeros(31)
    loads.fz[:] = PROPS.mass * 9.81
    loads.fx[0] = 123.0
    ax, az, al = rod.assemble_accelerations(s, loads, PROPS, base_acc=(0.1, 0.2, 0.3))
    assert np.allclose(az[1:], 0.0)
    assert (ax[0], az[0], al[0]) == (0.1, 0.2, 0.3)


def test_euler_step_hand_integration():
    s = straight()
    zero = (np.zeros(31),) * 3
    same = rod.euler_step(s, zero, 1e-4)
    assert np.array_equal(same.x, s.x) and np.array_equal(same.z, s.z)
    acc = (np.zeros(31), np.full(31, -9.81), np.zeros(31))
    new = rod.euler_step(s, acc, 1e-4)
    assert new.vz[5] == pytest.approx(-9.81e-4)
    assert new.z[5] == pytest.approx(s.z[5] + new.vz[5] * 1e-4)
    lit = rod.euler_step(s, acc, 1e-4, semi_implicit=False)
    assert lit.z[5] == s.z[5]
    with pytest.raises(ValueError):
        rod.euler_step(s, acc, 0.0)


def test_euler_step_rejects_non_finite():
    s = straight()
    acc = (np.full(31, np.inf), np.zeros(31), np.zeros(31))
    with pytest.raises(RodError, match="step 7"):
        rod.euler_step(s, acc, 1e-4, step_index=7)


def test_half_steps_agree_with_full_step_to_second_order():
    # harmonic oscillator x'' = -w^2 x
    w = 50.0

    def run(dt, steps):
        s = RodState.from_reference(np.array([0.0, 1.0]), np.zeros(2))
        s.x[1] = 1.01
        for _ in range(steps):
            a = (-w ** 2 * (s.x - s.x_ref), np.zeros(2), np.zeros(2))
            s = rod.euler_step(s, a, dt)
        return s.x[1]

    errs = []
    for dt in (1e-3, 5e-4):
        errs.append(abs(run(dt, 1) - run(dt / 2, 2)))
    assert errs[1] < errs[0] / 3.5


def test_energy_terms_vanish_at_rest_without_gravity():
    s = straight()
    assert abs(rod.total_energy(s, PROPS, StabilizationParams(), gravity=0.0)) < 1e-20


def test_stable_substeps_for_default_leg():
    n = rod.stable_substeps(PROPS, StabilizationParams(), straight(), ContactParams().stiffness)
    assert n == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-5, 2e-3))
def test_reciprocity_property(seed, scale):
    s = random_state(np.random.default_rng(seed), scale)
    loads = rod.internal_forces(s, PROPS, NodalLoads.zeros(31))
    mag = np.abs(loads.fx).max() + np.abs(loads.fz).max() + 1e-30
    assert abs(loads.fx.sum()) <= 1e-10 * mag
    assert abs(loads.fz.sum()) <= 1e-10 * mag


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.01, 0.01), min_size=31, max_size=31),
       st.lists(st.floats(-1.0, 1.0), min_size=31, max_size=31))
def test_contact_is_unilateral(depths, velocities):
    s = RodState.from_reference(np.linspace(0, 0.19, 31), np.array(depths))
    s.vz = np.array(velocities)
    loads = rod.contact_forces(s, ContactParams(), NodalLoads.zeros(31))
    assert np.all(loads.fz >= 0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=31, max_size=31))
def test_friction_dissipates(velocities):
    s = RodState.from_reference(np.linspace(0, 0.19, 31), np.full(31, -1e-4))
    s.vx = np.array(velocities)
    loads = rod.friction_forces(s, ContactParams(), NodalLoads.zeros(31))
    assert (loads.fx * s.vx).sum() <= 0.0


def test_zero_input_fixed_point_without_gravity():
    from softquad.leg import LegDefinition, simulate_leg

    tr = simulate_leg(LegDefinition(ground_height=None), None, 0.05, record_stride=100,
                      gravity=0.0)
    assert np.abs(tr.x[-1] - tr.x[0]).max() < 1e-15
    assert np.abs(tr.z[-1] - tr.z[0]).max() < 1e-15
