"""Rigid torso carried by four clamped rod legs.

Each leg lives in a level planar frame that translates with its attachment
corner and turns with torso yaw.  The legs only talk to the torso through the
wrench at their clamp, and the torso ignores gyroscopic coupling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rod
from .leg import LegDefinition, RodSimulator
from .rod import RodError, RodState

LEG_NAMES = ("FL", "FR", "BL", "BR")


def cuboid_inertia(dims, mass: float) -> np.ndarray:
    a, b, c = (float(d) for d in dims)
    if min(a, b, c) <= 0 or mass <= 0:
        raise ValueError("dimensions and mass must be positive")
    return np.diag([mass / 12.0 * (b * b + c * c),
                    mass / 12.0 * (a * a + c * c),
                    mass / 12.0 * (a * a + b * b)])


def rotation_matrix(roll, pitch, yaw) -> np.ndarray:
    """Body-to-world rotation, yaw-pitch-roll order."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    # in-range angles pass through untouched, so the shift adds no rounding
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class TorsoBody:
    mass: float = 2.0
    dims: tuple = (0.1255, 0.0855, 0.034)
    attachments: tuple = None
    headings: tuple = None

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("torso mass must be positive")
        a, b, c = self.dims
        if self.attachments is None:
            # bottom corners, ordered FL, FR, BL, BR
            corners = tuple((sx * a / 2, sy * b / 2, -c / 2)
                            for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)))
            object.__setattr__(self, "attachments", corners)
        if self.headings is None:
            object.__setattr__(self, "headings", tuple(
                math.atan2(r[1], r[0]) for r in self.attachments))
        if len(self.attachments) != 4 or len(self.headings) != 4:
            raise ValueError("exactly four attachments and headings are required")
        if np.linalg.eigvalsh(self.inertia).min() <= 0:
            raise ValueError("torso inertia must be positive definite")

    @property
    def inertia(self) -> np.ndarray:
        return cuboid_inertia(self.dims, self.mass)

    @property
    def attachment_array(self) -> np.ndarray:
        return np.asarray(self.attachments, dtype=float)


@dataclass
class TorsoState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for k in ("position", "velocity", "euler", "omega"):
            setattr(self, k, np.array(getattr(self, k), dtype=float).reshape(3))

    def copy(self) -> "TorsoState":
        return TorsoState(self.position.copy(), self.velocity.copy(),
                          self.euler.copy(), self.omega.copy())

    def as_vector(self) -> np.ndarray:
        """12-vector ordered roll, pitch, yaw, p, omega, v."""
        return np.concatenate([self.euler, self.position, self.omega, self.velocity])

    @classmethod
    def from_vector(cls, x) -> "TorsoState":
        x = np.asarray(x, dtype=float)
        return cls(position=x[3:6], velocity=x[9:12], euler=x[0:3], omega=x[6:9])


def aggregate_wrenches(forces, attachments, couples=None):
    """Net force and torque about the centre of mass.

    ``forces`` and ``couples`` are ``(4, 3)`` in the world-aligned frame;
    ``attachments`` are the attachment offsets from the CoM in that frame.
    """
    forces = np.asarray(forces, dtype=float)
    r = np.asarray(attachments, dtype=float)
    net_force = forces.sum(axis=0)
    torque = np.cross(r, forces).sum(axis=0)
    if couples is not None:
        torque = torque + np.asarray(couples, dtype=float).sum(axis=0)
    return net_force, torque


def euler_rates(euler, omega, exact: bool = False):
    """Euler angle derivatives from the world angular velocity."""
    if not exact:
        return np.asarray(omega, dtype=float).copy()
    roll, pitch, yaw = euler
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, tp = math.cos(pitch), math.tan(pitch)
    wx, wy, wz = omega
    pitch_rate = -sy * wx + cy * wy
    roll_rate = (cy * wx + sy * wy) / cp
    yaw_rate = wz + tp * (cy * wx + sy * wy)
    return np.array([roll_rate, pitch_rate, yaw_rate])


def torso_step(state: TorsoState, body: TorsoBody, net_wrench, dt: float,
               gravity: float = rod.GRAVITY, exact_euler: bool = False,
               world_inertia=None) -> TorsoState:
    """Semi-implicit Euler update without the gyroscopic term."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    force, torque = net_wrench
    if world_inertia is None:
        rot = rotation_matrix(*state.euler)
        world_inertia = rot @ body.inertia @ rot.T
    acc = np.asarray(force, dtype=float) / body.mass
    acc[2] -= gravity
    alpha = np.linalg.solve(world_inertia, np.asarray(torque, dtype=float))
    new = state.copy()
    new.velocity = state.velocity + dt * acc
    new.position = state.position + dt * new.velocity
    new.omega = state.omega + dt * alpha
    new.euler = wrap_angle(state.euler + dt * euler_rates(state.euler, new.omega, exact_euler))
    return new


def stance_reference(leg: LegDefinition, drop: float, load: float, iterations: int = 4) -> RodState:
    """Straight inclined leg whose tip, once loaded with ``load`` newtons
    of ground reaction, sits ``drop`` below the attachment."""
    geom = leg.geometry
    props = leg.properties()
    depth = drop
    ref = None
    for _ in range(iterations):
        angle = -math.asin(min(depth / geom.length, 1.0))
        ref = rod.arc_reference(geom, angle, leg.rest_curvature)
        k = rod.stiffness_matrix(props, leg.stabilization, ref)
        tip = 3 * (geom.node_count - 2) + 1
        compliance = np.linalg.inv(k)[tip, tip]
        depth = drop + load * (compliance + 1.0 / leg.contact.stiffness)
    return ref


@dataclass
class RobotConfig:
    body: TorsoBody = field(default_factory=TorsoBody)
    leg: LegDefinition = field(default_factory=LegDefinition)
    leg_mass: float = 0.04
    stand_height: float = 0.04
    include_couples: bool = True
    exact_euler: bool = False
    gravity: float = rod.GRAVITY

    @property
    def total_mass(self) -> float:
        return self.body.mass + 4 * self.leg_mass


class WholeBody:
    """Torso plus four legs, co-stepped at the rod time step."""

    def __init__(self, config: RobotConfig, initial: TorsoState | None = None,
                 engine: str = "compiled"):
        self.config = config
        body = config.body
        leg = config.leg
        self.dt = 1e-4
        attach_drop = config.stand_height + body.attachment_array[:, 2]
        load = config.total_mass * config.gravity / 4.0
        refs = [stance_reference(leg, float(d), load) for d in attach_drop]
        stacked = RodState.from_reference(np.stack([r.x_ref for r in refs]),
                                          np.stack([r.z_ref for r in refs]))
        n = leg.geometry.node_count
        mask = np.zeros(n, dtype=bool)
        mask[-1] = True
        self.legs = RodSimulator(leg.properties(), leg.contact, leg.stabilization, leg.routing,
                                 stacked, contact_mask=mask, gravity=config.gravity,
                                 dt=self.dt, engine=engine)
        if initial is None:
            # lowered onto the ground from the height where the tips just touch
            tip_depth = -stacked.z_ref[:, -1] - body.attachment_array[:, 2]
            initial = TorsoState(position=[0.0, 0.0, float(np.mean(tip_depth))])
        self.torso = initial.copy()
        self.time = 0.0
        self.headings = np.asarray(body.headings, dtype=float)
        self.forces = np.zeros((4, 3))
        self.couples = np.zeros((4, 3))
        self.planar = np.zeros((4, 3))
        self.applied_traction = np.zeros((4, 2))

    @property
    def normal_force(self) -> np.ndarray:
        return self.legs.normal_force

    def leg_frames(self):
        yaw = self.torso.euler[2]
        h = self.headings + yaw
        e_out = np.stack([np.cos(h), np.sin(h), np.zeros(4)], axis=-1)
        e_lat = np.stack([-np.sin(h), np.cos(h), np.zeros(4)], axis=-1)
        return e_out, e_lat

    def attachment_kinematics(self):
        rot = rotation_matrix(*self.torso.euler)
        r = self.config.body.attachment_array @ rot.T
        pos = self.torso.position + r
        vel = self.torso.velocity + np.cross(self.torso.omega, r)
        return r, pos, vel, rot

    def tip_positions(self):
        _, pos, _, _ = self.attachment_kinematics()
        e_out, _ = self.leg_frames()
        s = self.legs.state
        return pos + s.x[:, -1:] * e_out + s.z[:, -1:] * np.array([0.0, 0.0, 1.0])

    def step(self, tension, traction=None, mu=None):
        """Advance one rod step.  ``traction`` is the desired world-frame
        tangential ground force per leg, limited to ``mu`` times the current
        normal load on each axis."""
        cfg = self.config
        r, pos, vel, rot = self.attachment_kinematics()
        e_out, e_lat = self.leg_frames()
        in_plane = None
        lateral = np.zeros(4)
        if traction is not None:
            limit = np.asarray(mu, dtype=float) * self.legs.normal_force
            t = np.clip(np.asarray(traction, dtype=float), -limit[:, None], limit[:, None])
            t = np.where(self.legs.normal_force[:, None] > 0, t, 0.0)
            self.applied_traction = t
            in_plane = (t * e_out[:, :2]).sum(axis=1)
            lateral = (t * e_lat[:, :2]).sum(axis=1)
        reaction = self.legs.step(tension, -pos[:, 2], -vel[:, 2],
                                  -(vel[:, :2] * e_out[:, :2]).sum(axis=1), in_plane)
        self.planar = reaction
        up = np.array([0.0, 0.0, 1.0])
        forces = reaction[:, :1] * e_out + reaction[:, 1:2] * up + lateral[:, None] * e_lat
        axis = np.cross(e_out, up)
        couples = reaction[:, 2:3] * axis
        if traction is not None:
            s = self.legs.state
            lever = s.x[:, -1:] * e_out + s.z[:, -1:] * up
            couples = couples + np.cross(lever, lateral[:, None] * e_lat)
        self.forces = forces
        self.couples = couples
        wrench = aggregate_wrenches(forces, r, couples if cfg.include_couples else None)
        world_inertia = rot @ cfg.body.inertia @ rot.T
        self.torso = torso_step(self.torso, cfg.body, wrench, self.dt, cfg.gravity,
                                cfg.exact_euler, world_inertia)
        self.time += self.dt
        if not (np.all(np.isfinite(self.torso.position)) and np.all(np.isfinite(self.torso.omega))):
            raise RodError(f"torso state diverged at t={self.time:.4f}s")
        return wrench

    def advance(self, duration: float, tension, traction=None, mu=None):
        """Run whole rod steps covering ``duration``; returns the mean
        per-leg world forces over the interval.  ``tension`` is a 4-vector
        held over the interval or a callable of time."""
        steps = max(1, int(round(duration / self.dt)))
        if callable(tension):
            seq = np.array([np.broadcast_to(tension(self.time + k * self.dt), (4,))
                            for k in range(steps)], dtype=float)
        else:
            seq = np.tile(np.broadcast_to(np.asarray(tension, dtype=float), (4,)), (steps, 1))
        if np.any(seq < 0):
            raise ValueError("tension must be non-negative")
        if self.legs.engine == "compiled":
            return self._advance_compiled(seq, traction, mu)
        acc = np.zeros((4, 3))
        for k in range(steps):
            try:
                self.step(seq[k], traction, mu)
            except RodError as exc:
                raise RodError(f"whole body, t={self.time:.4f}s: {exc}") from exc
            acc += self.forces
        return acc / steps

    def _advance_compiled(self, seq, traction, mu):
        from ._kernel import body_steps

        legs = self.legs
        s = legs.state
        for k in ("x", "z", "theta", "vx", "vz", "omega"):
            a = getattr(s, k)
            if not (a.flags.c_contiguous and a.flags.writeable and a.dtype == np.float64):
                setattr(s, k, np.array(a, dtype=float))
        refs, params, tendon, ground = legs._constant_args()
        mask, kc, dc, fric, vst, grav, h, nsub, semi, impl = ground
        use_traction = traction is not None
        trac = np.zeros((4, 2)) if traction is None else np.ascontiguousarray(traction, dtype=float)
        mu_arr = np.zeros(4) if mu is None else np.ascontiguousarray(np.broadcast_to(mu, (4,)), dtype=float)
        t = self.torso
        cfg = self.config
        reaction = np.zeros((4, 3))
        forces = np.zeros((4, 3))
        couples = np.zeros((4, 3))
        mean_forces = np.zeros((4, 3))
        normal = np.array(legs.normal_force, dtype=float)
        applied = np.array(self.applied_traction, dtype=float)
        code = body_steps(
            seq.shape[0], s.x, s.z, s.theta, s.vx, s.vz, s.omega, *refs, *params,
            np.ascontiguousarray(seq), *tendon, trac, use_traction, mu_arr,
            mask, kc, dc, fric, vst, grav, h, nsub, semi, impl,
            t.position, t.velocity, t.euler, t.omega, cfg.body.mass,
            np.ascontiguousarray(np.diag(cfg.body.inertia)), cfg.body.attachment_array,
            self.headings, cfg.include_couples, cfg.exact_euler, self.dt,
            reaction, normal, forces, couples, mean_forces, applied)
        steps = seq.shape[0]
        if code != 0:
            what = {-1: "coincident rod nodes", -2: "non-finite rod state",
                    -3: "torso state diverged"}.get(code, "kernel failure")
            raise RodError(f"whole body, t={self.time:.4f}s: {what}")
        self.time += steps * self.dt
        legs.time += steps * self.dt
        legs.step_count += steps * nsub
        legs.normal_force = normal
        self.planar = reaction
        self.forces = forces
        self.couples = couples
        self.applied_traction = applied
        return mean_forces


@dataclass
class BodyTrajectory:
    t: np.ndarray
    position: np.ndarray
    euler: np.ndarray
    velocity: np.ndarray
    omega: np.ndarray
    leg_forces: np.ndarray
    tips: np.ndarray
    normal: np.ndarray

    def header(self):
        cols = ["t", "px", "py", "pz", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz"]
        for k in range(1, 5):
            cols += [f"rx{k}", f"ry{k}", f"rz{k}"]
        return cols

    def rows(self):
        for k in range(len(self.t)):
            yield ([self.t[k], *self.position[k], *self.euler[k], *self.velocity[k],
                    *self.omega[k], *self.leg_forces[k].ravel()])


class TrajectoryRecorder:
    def __init__(self):
        self.frames = {k: [] for k in ("t", "position", "euler", "velocity", "omega",
                                       "leg_forces", "tips", "normal")}

    def record(self, robot: WholeBody, leg_forces=None):
        f = self.frames
        s = robot.torso
        f["t"].append(robot.time)
        f["position"].append(s.position.copy())
        f["euler"].append(s.euler.copy())
        f["velocity"].append(s.velocity.copy())
        f["omega"].append(s.omega.copy())
        f["leg_forces"].append((robot.forces if leg_forces is None else leg_forces).copy())
        f["tips"].append(robot.tip_positions())
        f["normal"].append(robot.normal_force.copy())

    def result(self) -> BodyTrajectory:
        return BodyTrajectory(**{k: np.asarray(v, dtype=float) for k, v in self.frames.items()})


def whole_body_simulate(config: RobotConfig, schedules=None, duration: float = 2.0,
                        record_rate: float = 30.0, engine: str = "compiled",
                        initial: TorsoState | None = None) -> BodyTrajectory:
    """Open-loop run: per-leg tendon schedules, Coulomb tip friction."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    robot = WholeBody(config, initial, engine=engine)

    def tension(t):
        if schedules is None:
            return 0.0
        return np.array([s.tension(t) for s in schedules])

    rec = TrajectoryRecorder()
    rec.record(robot)
    frame = 1.0 / record_rate
    ticks = int(round(duration * record_rate))
    for k in range(ticks):
        mean_forces = robot.advance(frame, tension)
        rec.record(robot, mean_forces)
    return rec.result()
