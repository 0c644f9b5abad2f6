"""Time-switched gait tables and the reference states fed to the MPC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LEGS = ("FL", "FR", "BL", "BR")
FRONT = ("FL", "FR")

MU_GRIP = 0.6
MU_FRONT = 0.2
MU_BACK = 0.1


@dataclass(frozen=True)
class GaitPhase:
    duration: float
    active: frozenset
    mu: tuple
    stance: frozenset = frozenset(LEGS)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("phase duration must be positive")
        if len(self.mu) != 4 or not all(0.0 < m <= 1.0 for m in self.mu):
            raise ValueError("need four friction coefficients in (0, 1]")
        if not self.active or not set(self.active) <= set(LEGS):
            raise ValueError("active legs must be a non-empty subset of FL, FR, BL, BR")


@dataclass(frozen=True)
class GaitSchedule:
    name: str
    phases: tuple

    def __post_init__(self):
        if not self.phases:
            raise ValueError("a gait needs at least one phase")

    @property
    def cycle_duration(self) -> float:
        return math.fsum(p.duration for p in self.phases)

    @property
    def boundaries(self) -> np.ndarray:
        return np.cumsum([0.0] + [p.duration for p in self.phases])


def default_mu(active) -> tuple:
    """0.6 on a contracting leg, 0.2 on other front legs, 0.1 on back legs."""
    return tuple(MU_GRIP if leg in active else MU_FRONT if leg in FRONT else MU_BACK
                 for leg in LEGS)


def _sequence(name, order, phase_duration):
    return GaitSchedule(name, tuple(
        GaitPhase(phase_duration, frozenset([leg]), default_mu({leg})) for leg in order))


def walk_gait(cycle: float = 5.0) -> GaitSchedule:
    return _sequence("walk", ("FL", "FR"), cycle / 2.0)


def crawl_gait(cycle: float = 8.0, order=("FL", "BR", "FR", "BL")) -> GaitSchedule:
    return _sequence("crawl", order, cycle / 4.0)


def omni60_gait(cycle: float = 5.0, order=("FR", "BL", "FL", "BR")) -> GaitSchedule:
    return _sequence("omni60", order, cycle / 4.0)


GAITS = {"walk": walk_gait, "crawl": crawl_gait, "omni60": omni60_gait}


def gait_by_name(name: str) -> GaitSchedule:
    try:
        return GAITS[name]()
    except KeyError:
        raise ValueError(f"unknown gait {name!r}; expected one of {sorted(GAITS)}") from None


@dataclass(frozen=True)
class PhaseInfo:
    index: int
    active: frozenset
    mu: tuple
    stance: frozenset
    phase_time: float
    phase_duration: float


def phase_at(schedule: GaitSchedule, t: float) -> PhaseInfo:
    if t < 0:
        raise ValueError("time must be non-negative")
    cycle = schedule.cycle_duration
    local = math.fmod(t, cycle)
    edges = schedule.boundaries
    # guard against fmod landing a hair below a boundary that t sits on
    idx = int(np.searchsorted(edges, local + 1e-12, side="right") - 1)
    idx = min(max(idx, 0), len(schedule.phases) - 1)
    ph = schedule.phases[idx]
    return PhaseInfo(idx, ph.active, ph.mu, ph.stance, max(local - edges[idx], 0.0), ph.duration)


@dataclass(frozen=True)
class ReferenceCommand:
    v_x: float = 0.0
    v_y: float = 0.0
    p_z: float = 0.04
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.v_x, self.v_y, self.p_z, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("reference command must be finite")
        if self.p_z <= 0:
            raise ValueError("p_z reference must be positive")


COMMANDS = {
    "walk": ReferenceCommand(v_x=0.08, p_z=0.04),
    "crawl": ReferenceCommand(v_x=0.08, p_z=0.04),
    "omni60": ReferenceCommand(v_x=0.052, v_y=0.09, p_z=0.04),
    "stand": ReferenceCommand(p_z=0.04),
}

GRAVITY_STATE = -9.81


def reference_trajectory(command: ReferenceCommand, t0: float, horizon: int, dt: float,
                         anchor=(0.0, 0.0, 0.0)) -> np.ndarray:
    """``(horizon, 13)`` reference states at ``t0 + k dt``.

    Planar position advances at the commanded velocity from ``anchor``
    ``(t_anchor, x_anchor, y_anchor)``, so sequences split across horizons
    line up exactly.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    ta, xa, ya = anchor
    t = t0 + dt * np.arange(horizon)
    ref = np.zeros((horizon, 13))
    ref[:, 0] = command.roll
    ref[:, 1] = command.pitch
    ref[:, 2] = command.yaw
    ref[:, 3] = xa + command.v_x * (t - ta)
    ref[:, 4] = ya + command.v_y * (t - ta)
    ref[:, 5] = command.p_z
    ref[:, 9] = command.v_x
    ref[:, 10] = command.v_y
    ref[:, 12] = GRAVITY_STATE
    return ref


def tension_shape(info: PhaseInfo, leg: str, ramp_fraction: float = 0.3,
                  decay_fraction: float = 0.3) -> float:
    """Multiplier on a leg's commanded tendon tension: a sine ramp, hold and
    cosine release over the phase for the contracting leg, 1 otherwise."""
    if leg not in info.active:
        return 1.0
    d = info.phase_duration
    t = info.phase_time
    ramp = ramp_fraction * d
    decay = decay_fraction * d
    if t < ramp:
        return math.sin(0.5 * math.pi * t / ramp)
    if t <= d - decay:
        return 1.0
    u = min((t - (d - decay)) / decay, 1.0)
    return 0.5 * (1.0 + math.cos(math.pi * u))


@dataclass
class GaitTable:
    """Serialisable phase table, used for config round trips."""

    name: str
    phases: list = field(default_factory=list)

    def to_schedule(self) -> GaitSchedule:
        out = []
        for p in self.phases:
            active = frozenset(p["active"])
            mu = tuple(p.get("mu", default_mu(active)))
            stance = frozenset(p.get("stance", LEGS))
            out.append(GaitPhase(float(p["duration"]), active, mu, stance))
        return GaitSchedule(self.name, tuple(out))

    @classmethod
    def from_schedule(cls, schedule: GaitSchedule) -> "GaitTable":
        return cls(schedule.name, [
            {"duration": p.duration, "active": sorted(p.active), "mu": list(p.mu),
             "stance": sorted(p.stance)} for p in schedule.phases])
