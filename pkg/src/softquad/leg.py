"""Tendon actuation, the force-angle servo map and the stepping engine for one
or more clamped rod legs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rod
from .rod import (ContactParams, NodalLoads, RodError, RodGeometry, RodMaterial,
                  RodProperties, RodState, StabilizationParams)


@dataclass(frozen=True)
class TendonRouting:
    pulley_angle: float = math.radians(168.0)
    pulley_radius: float = 0.03
    routed_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.routed_fraction <= 1.0:
            raise ValueError("routed_fraction must lie in (0, 1]")
        if not 0.0 < self.pulley_angle < 2.0 * math.pi:
            raise ValueError("pulley_angle must lie in (0, 2*pi)")

    def routed_node_count(self, node_count: int) -> int:
        return int(math.floor(self.routed_fraction * (node_count - 1) + 1e-12)) + 1

    def pulley_point(self):
        return (self.pulley_radius * math.cos(self.pulley_angle),
                self.pulley_radius * math.sin(self.pulley_angle))


@dataclass(frozen=True)
class TendonProfile:
    """Sine ramp, hold, cosine decay."""

    t_ramp: float = 0.5
    t_hold: float = 0.5
    t_decay: float = 0.5
    t_max: float = 1.5

    def __post_init__(self):
        if min(self.t_ramp, self.t_hold, self.t_decay) < 0:
            raise ValueError("profile durations must be non-negative")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")

    @property
    def duration(self) -> float:
        return self.t_ramp + self.t_hold + self.t_decay


def _tension_scalar(p: TendonProfile, t: float) -> float:
    if t < 0:
        raise ValueError("time must be non-negative")
    if t < p.t_ramp:
        return p.t_max * math.sin(0.5 * math.pi * t / p.t_ramp)
    if t <= p.t_ramp + p.t_hold:
        return p.t_max
    if t < p.duration:
        u = (t - p.t_ramp - p.t_hold) / p.t_decay
        return p.t_max * 0.5 * (1.0 + math.cos(math.pi * u))
    return 0.0


def tension_at(profile: TendonProfile, t):
    if isinstance(t, (int, float)):
        return _tension_scalar(profile, float(t))
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    p = profile
    out = np.zeros_like(t)
    if p.t_ramp > 0:
        ramp = t < p.t_ramp
        out = np.where(ramp, p.t_max * np.sin(0.5 * np.pi * np.clip(t / p.t_ramp, 0, 1)), out)
    else:
        ramp = np.zeros_like(t, dtype=bool)
    hold = (~ramp) & (t <= p.t_ramp + p.t_hold)
    out = np.where(hold, p.t_max, out)
    decay = (t > p.t_ramp + p.t_hold) & (t < p.duration)
    if p.t_decay > 0:
        u = np.clip((t - p.t_ramp - p.t_hold) / p.t_decay, 0, 1)
        out = np.where(decay, p.t_max * 0.5 * (1.0 + np.cos(np.pi * u)), out)
    out = np.clip(out, 0.0, p.t_max)
    return float(out) if out.ndim == 0 else out


@dataclass
class TendonSchedule:
    """Sequence of ``(start_time, profile)`` entries.  The most recently
    started entry owns the tendon."""

    entries: list = field(default_factory=list)

    def tension(self, t: float) -> float:
        current = None
        for start, prof in self.entries:
            if start <= t:
                current = (start, prof)
        if current is None:
            return 0.0
        return tension_at(current[1], t - current[0])

    @classmethod
    def periodic(cls, profile: TendonProfile, period: float, offset: float, until: float):
        starts = np.arange(offset, until, period)
        return cls([(float(s), profile) for s in starts])


def tendon_directions(state: RodState, routing: TendonRouting):
    """Unit vectors from routed nodes toward the pulley and the
    renormalisation factor making the resultant equal to one."""
    n_r = routing.routed_node_count(state.node_count)
    px, pz = routing.pulley_point()
    px = px + state.x_ref[..., :1]
    pz = pz + state.z_ref[..., :1]
    dx = px - state.x[..., :n_r]
    dz = pz - state.z[..., :n_r]
    d = np.hypot(dx, dz)
    d = np.where(d > 0, d, 1.0)
    ux, uz = dx / d, dz / d
    res = np.hypot(ux.sum(axis=-1), uz.sum(axis=-1))
    return ux, uz, np.where(res > 0, 1.0 / res, 0.0)


def apply_tendon(state: RodState, routing: TendonRouting, tension, loads: NodalLoads) -> NodalLoads:
    tension = np.asarray(tension, dtype=float)
    if np.any(tension < 0):
        raise ValueError("tension must be non-negative")
    ux, uz, scale = tendon_directions(state, routing)
    n_r = ux.shape[-1]
    w = (tension * scale)[..., None]
    loads.fx[..., :n_r] += w * ux
    loads.fz[..., :n_r] += w * uz
    return loads


@dataclass(frozen=True)
class ForceAngleMap:
    offset: float = 6.91
    slope: float = 0.107
    angle_max: float = 116.28

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("slope must be positive")


def force_to_angle(fmap: ForceAngleMap, f_z):
    """Servo pulling angle in degrees for a desired normal force."""
    f = np.asarray(f_z, dtype=float)
    if np.any(f < -1e-9):
        raise ValueError("normal force must be non-negative")
    out = np.clip((f + fmap.offset) / fmap.slope, 0.0, fmap.angle_max)
    return float(out) if out.ndim == 0 else out


def angle_to_force(fmap: ForceAngleMap, theta):
    a = np.asarray(theta, dtype=float)
    if np.any(a < -1e-9) or np.any(a > fmap.angle_max + 1e-9):
        raise ValueError(f"angle outside [0, {fmap.angle_max}] degrees")
    out = np.maximum(fmap.slope * a - fmap.offset, 0.0)
    return float(out) if out.ndim == 0 else out


def base_reaction(state: RodState, accelerations, external: NodalLoads,
                  props: RodProperties, gravity: float = rod.GRAVITY):
    """Wrench ``(Fx, Fz, My)`` the leg exerts on its attachment.

    ``external`` holds the loads that do not originate at the attachment
    (ground contact, friction, tip traction; gravity is added here).
    Restoring springs, damping and the tendon all act between the rod and
    the attachment, so they cancel against the clamp and need no separate
    bookkeeping: the result is the net external load minus the inertia of
    the free nodes.  ``My`` is the moment about the base node, positive
    turning +x toward +z.
    """
    ax, az, alpha = accelerations
    m = props.mass
    fx = external.fx - m * ax
    fz = external.fz - m * gravity - m * az
    my = external.my - props.rot_inertia * alpha
    rx = state.x - state.x[..., :1]
    rz = state.z - state.z[..., :1]
    moment = (rx * fz - rz * fx + my).sum(axis=-1)
    return np.stack([fx.sum(axis=-1), fz.sum(axis=-1), moment], axis=-1)


@dataclass
class LegDefinition:
    """Everything needed to simulate one clamped leg in its planar frame."""

    geometry: RodGeometry = field(default_factory=RodGeometry)
    material: RodMaterial = field(default_factory=RodMaterial)
    contact: ContactParams = field(default_factory=ContactParams)
    stabilization: StabilizationParams = field(default_factory=StabilizationParams)
    routing: TendonRouting = field(default_factory=TendonRouting)
    base_angle: float = 0.0
    rest_curvature: float = 0.0
    ground_height: float | None = -0.05
    name: str = "leg"

    def reference(self) -> RodState:
        return rod.arc_reference(self.geometry, self.base_angle, self.rest_curvature)

    def properties(self) -> RodProperties:
        return RodProperties.build(self.geometry, self.material)


class RodSimulator:
    """Steps a batch of clamped legs that share geometry and material.

    Each call to :meth:`step` advances ``dt`` using ``substeps`` equal
    semi-implicit sub-steps.  Linear damping is folded implicitly into the
    velocity update unless ``implicit_damping`` is off; the returned
    reaction is the impulse-averaged attachment wrench over ``dt``.
    """

    def __init__(self, props: RodProperties, contact: ContactParams,
                 stab: StabilizationParams, routing: TendonRouting, reference: RodState,
                 contact_mask=None, gravity: float = rod.GRAVITY, substeps="auto",
                 dt: float = 1e-4, semi_implicit: bool = True, implicit_damping: bool = True,
                 engine: str = "compiled"):
        if engine not in ("compiled", "numpy"):
            raise ValueError(f"unknown engine {engine!r}")
        self.engine = engine
        self.props = props
        self.contact = contact
        self.stab = stab
        self.routing = routing
        self.gravity = gravity
        self.dt = dt
        self.semi_implicit = semi_implicit
        self.implicit_damping = implicit_damping and semi_implicit
        self.state = reference.copy()
        n = self.state.node_count
        self.batch_shape = self.state.x.shape[:-1]
        self._flat_shape = (int(np.prod(self.batch_shape)) if self.batch_shape else 1, n)
        if contact_mask is None:
            contact_mask = np.ones(n, dtype=bool)
        self.contact_mask = np.asarray(contact_mask, dtype=bool)
        if substeps == "auto":
            single = _first(reference)
            substeps = rod.stable_substeps(props, stab, single, contact.stiffness, dt,
                                           contact_mask=self.contact_mask)
        self.substeps = int(substeps)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.loads = NodalLoads.zeros(self.state.x.shape)
        self.external = NodalLoads.zeros(self.state.x.shape)
        self.normal_force = np.zeros(self.batch_shape)
        self.time = 0.0
        self.step_count = 0
        m = props.mass
        self._rate_t = stab.damping_c / m
        self._rate_r = stab.damping_c / props.rot_inertia

    def _ground_loads(self, s, ground_h, ground_vz, ground_vx, traction, tendon_free):
        ext = self.external
        ext.zero()
        rod.contact_forces(s, self.contact, ext, ground_h, ground_vz, self.contact_mask)
        self.normal_force = ext.fz.sum(axis=-1)
        if traction is None:
            rod.friction_forces(s, self.contact, ext, ground_h, ground_vx, self.contact_mask)
        else:
            # commanded tangential force, limited by the friction cone of the
            # actual normal load and carried by the contacting nodes
            share = np.where(self.normal_force > 0, 1.0 / np.maximum(self.normal_force, 1e-300), 0.0)
            ext.fx += np.asarray(traction)[..., None] * ext.fz * share[..., None]
        return ext

    def step(self, tension=0.0, ground_height=0.0, ground_vz=0.0, ground_vx=0.0,
             traction=None):
        if self.engine == "compiled":
            return self._step_compiled(tension, ground_height, ground_vz, ground_vx, traction)
        h = self.dt / self.substeps
        tension = np.broadcast_to(np.asarray(tension, dtype=float), self.batch_shape)
        reaction = np.zeros(self.batch_shape + (3,))
        normal = np.zeros(self.batch_shape)
        s = self.state
        for _ in range(self.substeps):
            ext = self._ground_loads(s, ground_height, ground_vz, ground_vx, traction, tension)
            normal += self.normal_force
            loads = self.loads
            loads.zero()
            rod.internal_forces(s, self.props, loads)
            if np.any(tension > 0):
                apply_tendon(s, self.routing, tension, loads)
            loads.fx += ext.fx
            loads.fz += ext.fz
            loads.my += ext.my
            rod.restoring_forces(s, self.stab, loads)
            if not self.implicit_damping:
                rod.damping_forces(s, self.stab, loads)
            acc = rod.assemble_accelerations(s, loads, self.props, self.gravity)
            new = rod.euler_step(s, acc, h, self.semi_implicit,
                                 (self._rate_t, self._rate_r) if self.implicit_damping else None,
                                 self.step_count)
            # realised accelerations include the implicit damping
            real = ((new.vx - s.vx) / h, (new.vz - s.vz) / h, (new.omega - s.omega) / h)
            reaction += base_reaction(s, real, ext, self.props, self.gravity)
            s = new
            self.step_count += 1
        self.state = s
        self.time += self.dt
        self.normal_force = normal / self.substeps
        return reaction / self.substeps

    def _constant_args(self):
        s = self.state
        key = (id(s.x_ref), id(s.z_ref), id(s.bend_rest), id(s.shear_rest))
        if getattr(self, "_const_key", None) != key:
            nb, n = self._flat_shape

            def flat(a):
                return np.ascontiguousarray(np.broadcast_to(a, self.batch_shape + (a.shape[-1],))
                                            .reshape(nb, -1), dtype=float)

            p = self.props
            px, pz = self.routing.pulley_point()
            self._refs = (flat(s.x_ref), flat(s.z_ref), flat(s.bend_rest), flat(s.shear_rest))
            self._params = (
                p.mass, p.rot_inertia, p.axial_stiffness, p.bending_stiffness, p.shear_stiffness,
                p.material.shear_coupling, p.ds, self.stab.restoring_k, self.stab.damping_c)
            self._tendon = (px, pz, self.routing.routed_node_count(n))
            self._ground = (self.contact_mask, self.contact.stiffness, self.contact.damping,
                            self.contact.friction_magnitude, self.contact.stiction_velocity,
                            self.gravity, self.dt / self.substeps, self.substeps,
                            self.semi_implicit, self.implicit_damping)
            self._const_key = key
        return self._refs, self._params, self._tendon, self._ground

    def _per_leg(self, v):
        nb = self._flat_shape[0]
        a = np.asarray(v, dtype=float)
        if a.ndim == 0:
            return np.full(nb, float(a))
        return np.ascontiguousarray(np.broadcast_to(a, self.batch_shape).reshape(nb))

    def _step_compiled(self, tension, ground_height, ground_vz, ground_vx, traction):
        from ._kernel import fused_steps

        s = self.state
        nb, n = self._flat_shape
        names = ("x", "z", "theta", "vx", "vz", "omega")
        arrays = []
        for k in names:
            a = getattr(s, k)
            if not (a.flags.c_contiguous and a.flags.writeable and a.dtype == np.float64):
                a = np.array(a, dtype=float)
                setattr(s, k, a)
            arrays.append(a.reshape(nb, n))
        refs, params, tendon, ground = self._constant_args()
        reaction = np.zeros((nb, 3))
        normal = np.zeros(nb)
        tension = self._per_leg(tension)
        if np.any(tension < 0):
            raise ValueError("tension must be non-negative")
        use_traction = traction is not None
        code = fused_steps(
            *arrays, *refs, *params, tension, *tendon,
            self._per_leg(ground_height), self._per_leg(ground_vz), self._per_leg(ground_vx),
            self._per_leg(traction if use_traction else 0.0), use_traction,
            *ground, reaction, normal)
        if code == -1:
            raise RodError(f"coincident nodes at step {self.step_count}")
        if code == -2:
            raise RodError(f"non-finite rod state at step {self.step_count}")
        self.step_count += self.substeps
        self.time += self.dt
        shape = self.batch_shape
        self.normal_force = normal.reshape(shape)
        return reaction.reshape(shape + (3,))

    def energy(self):
        return rod.total_energy(self.state, self.props, self.stab, self.gravity)


def _first(state: RodState) -> RodState:
    if state.x.ndim == 1:
        return state
    idx = (0,) * (state.x.ndim - 1)
    return RodState.from_reference(state.x_ref[idx], state.z_ref[idx], state.theta_ref[idx])


@dataclass
class RodTrajectory:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    vx: np.ndarray
    vz: np.ndarray
    omega: np.ndarray
    reaction: np.ndarray
    tension: np.ndarray
    energy: np.ndarray

    @property
    def tip(self):
        return self.x[:, -1], self.z[:, -1]

    def rows(self):
        """Long-format rows ``t,node,x,z,theta,vx,vz,omega``."""
        n = self.x.shape[1]
        for k, t in enumerate(self.t):
            for i in range(n):
                yield (t, i, self.x[k, i], self.z[k, i], self.theta[k, i],
                       self.vx[k, i], self.vz[k, i], self.omega[k, i])


def simulate_leg(leg: LegDefinition, tendon_schedule=None, duration: float = 1.5,
                 record_stride: int = 100, dt: float = 1e-4, gravity: float = rod.GRAVITY,
                 semi_implicit: bool = True, substeps="auto",
                 initial_state: RodState | None = None, engine: str = "compiled") -> RodTrajectory:
    """Single clamped leg over a static ground plane."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    if tendon_schedule is None:
        tendon_schedule = TendonSchedule()
    elif isinstance(tendon_schedule, TendonProfile):
        tendon_schedule = TendonSchedule([(0.0, tendon_schedule)])
    ref = leg.reference()
    sim = RodSimulator(leg.properties(), leg.contact, leg.stabilization, leg.routing, ref,
                       gravity=gravity, substeps=substeps, dt=dt, semi_implicit=semi_implicit,
                       implicit_damping=semi_implicit, engine=engine)
    if initial_state is not None:
        sim.state = initial_state.copy()
    ground = -np.inf if leg.ground_height is None else leg.ground_height
    steps = int(round(duration / dt))
    frames = {k: [] for k in ("t", "x", "z", "theta", "vx", "vz", "omega",
                              "reaction", "tension", "energy")}

    def record(t, tension, reaction):
        s = sim.state
        frames["t"].append(t)
        for k in ("x", "z", "theta", "vx", "vz", "omega"):
            frames[k].append(getattr(s, k).copy())
        frames["reaction"].append(reaction)
        frames["tension"].append(tension)
        frames["energy"].append(float(sim.energy()))

    record(0.0, tendon_schedule.tension(0.0), np.zeros(3))
    for k in range(1, steps + 1):
        t = k * dt
        tension = tendon_schedule.tension(t - dt)
        try:
            reaction = sim.step(tension, ground)
        except RodError as exc:
            raise RodError(f"{leg.name}: t={t:.4f}s: {exc}") from exc
        if k % record_stride == 0 or k == steps:
            record(t, tension, reaction)
    return RodTrajectory(**{k: np.asarray(v) for k, v in frames.items()})
