"""Planar discrete Cosserat rod for a tapered, tendon-driven soft leg.

Nodes carry ``(x, z, theta)`` with velocities ``(vx, vz, omega)``.  All
arrays may carry leading batch dimensions, so four legs can be stepped as one
``(4, N)`` block.  Loads are accumulated into a :class:`NodalLoads` buffer by
the individual force passes and turned into accelerations by Newton-Euler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

GRAVITY = 9.81


class RodError(RuntimeError):
    """Raised when the rod state becomes degenerate or non-finite."""


@dataclass(frozen=True)
class RodGeometry:
    length: float = 0.19
    node_count: int = 31
    width: float = 0.02
    thickness_base: float = 0.0135
    thickness_tip: float = 0.0035

    def __post_init__(self):
        if self.node_count < 3:
            raise ValueError("node_count must be >= 3")
        if self.length <= 0 or self.width <= 0:
            raise ValueError("length and width must be positive")
        if self.thickness_base <= 0 or self.thickness_tip <= 0:
            raise ValueError("thickness must be strictly positive")

    @property
    def segment_length(self) -> float:
        return self.length / (self.node_count - 1)

    def thickness(self) -> np.ndarray:
        s = np.arange(self.node_count) / (self.node_count - 1)
        return self.thickness_base + (self.thickness_tip - self.thickness_base) * s


@dataclass(frozen=True)
class RodMaterial:
    """Linear elastic material.

    ``shear_coupling`` ties each nodal orientation to its neighbouring
    segment directions through a shear strain with modulus
    ``E / (2 (1 + poisson_ratio))``.  Without it, bending only acts on the
    nodal orientations and never deflects the centreline.
    """

    youngs_modulus: float = 1.0e7
    density: float = 1200.0
    poisson_ratio: float = 0.45
    shear_coupling: bool = True
    shear_correction: float = 5.0 / 6.0

    def __post_init__(self):
        if self.youngs_modulus <= 0 or self.density <= 0:
            raise ValueError("youngs_modulus and density must be positive")

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 1.0e5
    damping: float = 10.0
    friction_mu: float = 0.1
    leg_mass: float = 0.04
    robot_mass: float = 2.16
    gravity: float = GRAVITY
    stiction_velocity: float = 1.0e-4

    def __post_init__(self):
        if self.stiffness <= 0:
            raise ValueError("contact stiffness must be positive")
        if self.damping < 0:
            raise ValueError("contact damping must be non-negative")
        if not 0.0 <= self.friction_mu <= 1.0:
            raise ValueError("friction_mu must lie in [0, 1]")

    @property
    def friction_magnitude(self) -> float:
        return self.friction_mu * (self.leg_mass + self.robot_mass / 4.0) * self.gravity


@dataclass(frozen=True)
class StabilizationParams:
    damping_c: float = 0.1
    restoring_k: float = 800.0

    def __post_init__(self):
        if self.damping_c < 0 or self.restoring_k < 0:
            raise ValueError("stabilization gains must be non-negative")


def node_thickness(geom: RodGeometry, i: int) -> float:
    n = geom.node_count
    if not 0 <= i < n:
        raise IndexError(f"node index {i} outside [0, {n - 1}]")
    return geom.thickness_base + (geom.thickness_tip - geom.thickness_base) * i / (n - 1)


def cross_section(geom: RodGeometry, material: RodMaterial, i: int):
    """Return ``(A, I, m, J)`` for node ``i``: area, second moment, lumped
    mass and rotational inertia."""
    h = node_thickness(geom, i)
    ds = geom.segment_length
    area = geom.width * h
    second_moment = geom.width * h**3 / 12.0
    mass = material.density * area * ds
    rot_inertia = 0.5 * material.density * area * ds**2
    return area, second_moment, mass, rot_inertia


@dataclass(frozen=True)
class RodProperties:
    """Per-node section arrays derived once from geometry and material."""

    geom: RodGeometry
    material: RodMaterial
    area: np.ndarray
    second_moment: np.ndarray
    mass: np.ndarray
    rot_inertia: np.ndarray

    @classmethod
    def build(cls, geom: RodGeometry, material: RodMaterial) -> "RodProperties":
        h = geom.thickness()
        ds = geom.segment_length
        area = geom.width * h
        return cls(
            geom=geom,
            material=material,
            area=area,
            second_moment=geom.width * h**3 / 12.0,
            mass=material.density * area * ds,
            rot_inertia=0.5 * material.density * area * ds**2,
        )

    @property
    def ds(self) -> float:
        return self.geom.segment_length

    @property
    def axial_stiffness(self) -> np.ndarray:
        # segment i uses the section of its base-side node
        return self.material.youngs_modulus * self.area[:-1]

    @property
    def bending_stiffness(self) -> np.ndarray:
        return self.material.youngs_modulus * self.second_moment[:-1] / self.ds

    @property
    def shear_stiffness(self) -> np.ndarray:
        if not self.material.shear_coupling:
            return np.zeros(self.geom.node_count - 1)
        m = self.material
        return m.shear_correction * m.shear_modulus * self.area[:-1] * self.ds


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class RodState:
    x: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    vx: np.ndarray
    vz: np.ndarray
    omega: np.ndarray
    x_ref: np.ndarray
    z_ref: np.ndarray
    theta_ref: np.ndarray
    # rest curvature and rest shear of the reference shape, per segment
    bend_rest: np.ndarray = field(repr=False, default=None)
    shear_rest: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_reference(cls, x_ref, z_ref, theta_ref=None) -> "RodState":
        x_ref = np.array(x_ref, dtype=float)
        z_ref = np.array(z_ref, dtype=float)
        phi = np.arctan2(np.diff(z_ref, axis=-1), np.diff(x_ref, axis=-1))
        if theta_ref is None:
            theta_ref = nodal_orientation(phi)
        theta_ref = np.array(theta_ref, dtype=float)
        bend_rest = np.diff(theta_ref, axis=-1)
        shear_rest = _wrap(phi - 0.5 * (theta_ref[..., :-1] + theta_ref[..., 1:]))
        zeros = np.zeros_like(x_ref)
        return cls(
            x=x_ref.copy(), z=z_ref.copy(), theta=theta_ref.copy(),
            vx=zeros.copy(), vz=zeros.copy(), omega=zeros.copy(),
            x_ref=x_ref, z_ref=z_ref, theta_ref=theta_ref,
            bend_rest=bend_rest, shear_rest=shear_rest,
        )

    def copy(self) -> "RodState":
        return replace(self, x=self.x.copy(), z=self.z.copy(), theta=self.theta.copy(),
                       vx=self.vx.copy(), vz=self.vz.copy(), omega=self.omega.copy())

    @property
    def node_count(self) -> int:
        return self.x.shape[-1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.z))
                    and np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.vx))
                    and np.all(np.isfinite(self.vz)) and np.all(np.isfinite(self.omega)))


def nodal_orientation(phi: np.ndarray) -> np.ndarray:
    """Nodal angles from segment angles: end nodes take their segment, inner
    nodes the circular mean of both neighbours."""
    inner = np.arctan2(np.sin(phi[..., :-1]) + np.sin(phi[..., 1:]),
                       np.cos(phi[..., :-1]) + np.cos(phi[..., 1:]))
    return np.concatenate([phi[..., :1], inner, phi[..., -1:]], axis=-1)


def straight_reference(geom: RodGeometry, angle: float = 0.0, base=(0.0, 0.0)) -> RodState:
    s = np.arange(geom.node_count) * geom.segment_length
    return RodState.from_reference(base[0] + s * math.cos(angle), base[1] + s * math.sin(angle))


def arc_reference(geom: RodGeometry, base_angle: float, curvature: float,
                  base=(0.0, 0.0)) -> RodState:
    """Polyline of ``N`` equal segments whose heading turns by
    ``curvature * ds`` per segment, starting at ``base_angle``."""
    ds = geom.segment_length
    phi = base_angle + curvature * ds * (np.arange(geom.node_count - 1) + 0.5)
    x = np.concatenate([[0.0], np.cumsum(ds * np.cos(phi))]) + base[0]
    z = np.concatenate([[0.0], np.cumsum(ds * np.sin(phi))]) + base[1]
    return RodState.from_reference(x, z)


@dataclass
class NodalLoads:
    fx: np.ndarray
    fz: np.ndarray
    my: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "NodalLoads":
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def zero(self) -> None:
        self.fx.fill(0.0)
        self.fz.fill(0.0)
        self.my.fill(0.0)

    def copy(self) -> "NodalLoads":
        return NodalLoads(self.fx.copy(), self.fz.copy(), self.my.copy())


def segment_kinematics(state: RodState, i: int):
    n = state.node_count
    if not 0 <= i <= n - 2:
        raise IndexError(f"segment index {i} outside [0, {n - 2}]")
    dx = state.x[..., i + 1] - state.x[..., i]
    dz = state.z[..., i + 1] - state.z[..., i]
    length = np.hypot(dx, dz)
    if np.any(length == 0.0):
        raise RodError(f"coincident nodes on segment {i}: orientation undefined")
    return length, np.arctan2(dz, dx)


def _segments(state: RodState):
    dx = np.diff(state.x, axis=-1)
    dz = np.diff(state.z, axis=-1)
    length = np.sqrt(dx * dx + dz * dz)
    if not np.all(length > 0.0):
        if not np.all(np.isfinite(length)):
            raise RodError("non-finite segment length")
        raise RodError("coincident nodes: segment orientation undefined")
    return dx, dz, length


def internal_forces(state: RodState, props: RodProperties, loads: NodalLoads) -> NodalLoads:
    """Axial, shear and bending contributions, each an equal-and-opposite
    pair so the total force and total moment added are zero."""
    dx, dz, length = _segments(state)
    tx = dx / length
    tz = dz / length
    ds = props.ds

    # axial: f = E A eps along the segment, pulling node i toward i+1 when stretched
    f = props.axial_stiffness * (length - ds) / ds
    fx = f * tx
    fz = f * tz
    loads.fx[..., :-1] += fx
    loads.fz[..., :-1] += fz
    loads.fx[..., 1:] -= fx
    loads.fz[..., 1:] -= fz

    # bending between nodal orientations
    m = props.bending_stiffness * (np.diff(state.theta, axis=-1) - state.bend_rest)
    loads.my[..., :-1] += m
    loads.my[..., 1:] -= m

    if props.material.shear_coupling:
        phi = np.arctan2(dz, dx)
        gamma = _wrap(phi - 0.5 * (state.theta[..., :-1] + state.theta[..., 1:]) - state.shear_rest)
        q = props.shear_stiffness * gamma
        # d(phi)/d(P_{i+1}) = n / l with n = (-tz, tx)
        sx = -q * (-tz) / length
        sz = -q * tx / length
        loads.fx[..., 1:] += sx
        loads.fz[..., 1:] += sz
        loads.fx[..., :-1] -= sx
        loads.fz[..., :-1] -= sz
        loads.my[..., :-1] += 0.5 * q
        loads.my[..., 1:] += 0.5 * q

    if not (np.all(np.isfinite(loads.fx)) and np.all(np.isfinite(loads.fz))
            and np.all(np.isfinite(loads.my))):
        raise RodError("non-finite internal load")
    return loads


def elastic_energy(state: RodState, props: RodProperties) -> np.ndarray:
    dx, dz, length = _segments(state)
    ds = props.ds
    eps = (length - ds) / ds
    energy = 0.5 * props.axial_stiffness * eps**2 * ds
    dtheta = np.diff(state.theta, axis=-1) - state.bend_rest
    energy = energy + 0.5 * props.bending_stiffness * dtheta**2
    if props.material.shear_coupling:
        phi = np.arctan2(dz, dx)
        gamma = _wrap(phi - 0.5 * (state.theta[..., :-1] + state.theta[..., 1:]) - state.shear_rest)
        energy = energy + 0.5 * props.shear_stiffness * gamma**2
    return energy.sum(axis=-1)


def contact_forces(state: RodState, params: ContactParams, loads: NodalLoads,
                   ground_height=0.0, ground_velocity=0.0, mask=None) -> NodalLoads:
    """Penalty normal force on penetrating nodes, clamped to be non-negative.

    ``ground_height`` and ``ground_velocity`` are expressed in the rod frame
    and broadcast against the batch dimensions; ``mask`` limits which nodes
    may touch the ground.
    """
    gh = np.asarray(ground_height)[..., None]
    gv = np.asarray(ground_velocity)[..., None]
    depth = gh - state.z
    rate = gv - state.vz
    force = params.stiffness * depth + params.damping * rate
    touching = depth > 0.0
    if mask is not None:
        touching = touching & mask
    force = np.where(touching, np.maximum(force, 0.0), 0.0)
    loads.fz += force
    return loads


def friction_forces(state: RodState, params: ContactParams, loads: NodalLoads,
                    ground_height=0.0, ground_velocity_x=0.0, mask=None) -> NodalLoads:
    """Coulomb friction of constant magnitude on nodes at or below the ground."""
    gh = np.asarray(ground_height)[..., None]
    slip = state.vx - np.asarray(ground_velocity_x)[..., None]
    on_ground = state.z <= gh
    if mask is not None:
        on_ground = on_ground & mask
    moving = np.abs(slip) >= params.stiction_velocity
    loads.fx += np.where(on_ground & moving, -params.friction_magnitude * np.sign(slip), 0.0)
    return loads


def restoring_forces(state: RodState, stab: StabilizationParams, loads: NodalLoads) -> NodalLoads:
    loads.fx -= stab.restoring_k * (state.x - state.x_ref)
    loads.fz -= stab.restoring_k * (state.z - state.z_ref)
    return loads


def damping_forces(state: RodState, stab: StabilizationParams, loads: NodalLoads) -> NodalLoads:
    loads.fx -= stab.damping_c * state.vx
    loads.fz -= stab.damping_c * state.vz
    loads.my -= stab.damping_c * state.omega
    return loads


def gravity_forces(props: RodProperties, loads: NodalLoads, gravity=GRAVITY) -> NodalLoads:
    loads.fz -= props.mass * gravity
    return loads


def assemble_accelerations(state: RodState, loads: NodalLoads, props: RodProperties,
                           gravity: float = GRAVITY, base_acc=(0.0, 0.0, 0.0),
                           include_gravity: bool = True):
    """Newton-Euler per node; the clamped base takes the prescribed motion.

    ``loads`` must not already contain gravity when ``include_gravity`` is
    set (gravity is applied here as ``-m g`` on z).
    """
    ax = loads.fx / props.mass
    az = loads.fz / props.mass
    if include_gravity:
        az = az - gravity
    alpha = loads.my / props.rot_inertia
    ax[..., 0] = base_acc[0]
    az[..., 0] = base_acc[1]
    alpha[..., 0] = base_acc[2]
    return ax, az, alpha


def euler_step(state: RodState, acc, dt: float, semi_implicit: bool = True,
               damping_rate=None, step_index: int | None = None) -> RodState:
    """Advance one step.

    Semi-implicit ordering updates velocities first and moves positions with
    the new velocities.  ``damping_rate`` (per-DOF ``c/m``, ``c/J``) applies
    linear damping implicitly in the velocity update, in which case ``acc``
    must exclude damping.  ``semi_implicit=False`` is the literal forward
    Euler update.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ax, az, alpha = acc
    new = state.copy()
    if semi_implicit:
        vx = state.vx + dt * ax
        vz = state.vz + dt * az
        om = state.omega + dt * alpha
        if damping_rate is not None:
            rt, rr = damping_rate
            vx = vx / (1.0 + dt * rt)
            vz = vz / (1.0 + dt * rt)
            om = om / (1.0 + dt * rr)
        new.x = state.x + dt * vx
        new.z = state.z + dt * vz
        new.theta = state.theta + dt * om
    else:
        new.x = state.x + dt * state.vx
        new.z = state.z + dt * state.vz
        new.theta = state.theta + dt * state.omega
        vx = state.vx + dt * ax
        vz = state.vz + dt * az
        om = state.omega + dt * alpha
    new.vx, new.vz, new.omega = vx, vz, om
    if not new.is_finite():
        where = "" if step_index is None else f" at step {step_index}"
        raise RodError(f"non-finite rod state{where}")
    return new


def gravitational_energy(state: RodState, props: RodProperties, gravity=GRAVITY):
    return (props.mass * gravity * state.z).sum(axis=-1)


def restoring_energy(state: RodState, stab: StabilizationParams):
    d2 = (state.x - state.x_ref) ** 2 + (state.z - state.z_ref) ** 2
    return 0.5 * stab.restoring_k * d2.sum(axis=-1)


def kinetic_energy(state: RodState, props: RodProperties):
    trans = 0.5 * props.mass * (state.vx**2 + state.vz**2)
    rot = 0.5 * props.rot_inertia * state.omega**2
    return (trans + rot).sum(axis=-1)


def total_energy(state: RodState, props: RodProperties, stab: StabilizationParams,
                 gravity=GRAVITY):
    return (kinetic_energy(state, props) + elastic_energy(state, props)
            + gravitational_energy(state, props, gravity) + restoring_energy(state, stab))


def stiffness_matrix(props: RodProperties, stab: StabilizationParams, reference: RodState,
                     include_rotation: bool = True, step: float = 1e-7) -> np.ndarray:
    """Tangent stiffness of the clamped rod about ``reference`` by central
    differences of the internal force, plus the restoring springs.

    DOFs are ordered node by node, ``(x, z[, theta])`` for nodes 1..N-1.
    """
    n = reference.node_count
    names = ("x", "z", "theta") if include_rotation else ("x", "z")
    dofs = [(a, i) for i in range(1, n) for a in names]

    def forces(s):
        loads = NodalLoads.zeros(n)
        internal_forces(s, props, loads)
        parts = [loads.fx[1:], loads.fz[1:]] + ([loads.my[1:]] if include_rotation else [])
        return np.stack(parts, axis=-1).ravel()

    k = np.zeros((len(dofs), len(dofs)))
    for col, (name, node) in enumerate(dofs):
        plus = reference.copy()
        getattr(plus, name)[node] += step
        minus = reference.copy()
        getattr(minus, name)[node] -= step
        k[:, col] = -(forces(plus) - forces(minus)) / (2 * step)
    k = 0.5 * (k + k.T)
    spring = np.tile([stab.restoring_k, stab.restoring_k] + ([0.0] if include_rotation else []), n - 1)
    k[np.diag_indices_from(k)] += spring
    return k


def stable_substeps(props: RodProperties, stab: StabilizationParams, reference: RodState,
                    contact_stiffness: float = 0.0, dt: float = 1e-4,
                    contact_mask=None, margin: float = 1.6) -> int:
    """Smallest substep count keeping the stiffest translational mode of the
    clamped rod inside the symplectic-Euler limit ``omega * h < 2``.

    Rotational DOFs are left out: their damping is applied implicitly and
    they are heavily overdamped at these inertias.
    """
    from scipy.linalg import eigh

    n = reference.node_count
    free = np.arange(1, n)
    k = stiffness_matrix(props, stab, reference, include_rotation=False)
    if contact_stiffness:
        mask = np.ones(n, bool) if contact_mask is None else np.asarray(contact_mask, bool)
        k[np.diag_indices_from(k)[0][1::2], np.diag_indices_from(k)[1][1::2]] += \
            contact_stiffness * mask[free]
    m = np.repeat(props.mass[free], 2)
    lam = eigh(k, np.diag(m), eigvals_only=True).max()
    return max(1, int(math.ceil(dt * math.sqrt(lam) / margin)))
