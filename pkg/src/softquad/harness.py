"""Closed-loop runs, the perturbation study, constraint maps and
trajectory comparison metrics."""
from __future__ import annotations

import csv
import math
import time as _time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import gait as gaitmod
from .body import RobotConfig, TorsoState, TrajectoryRecorder, WholeBody
from .leg import ForceAngleMap, angle_to_force, force_to_angle
from .mpc import NU, NX, MpcConfig, MpcController, leg_feasible, linearize, stage_cost

TELEMETRY_HEADER = (["t", "cost", "feasible_total"] + [f"feasible_leg{i}" for i in range(1, 5)]
                    + [f"f{a}{i}" for i in range(1, 5) for a in "xyz"]
                    + [f"theta{i}" for i in range(1, 5)])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


@dataclass
class DcmGrid:
    """Feasibility per tick for each leg block and for the whole input."""

    t: np.ndarray
    legs: np.ndarray
    total: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.legs = np.asarray(self.legs, dtype=bool).reshape(-1, 4)
        self.total = np.asarray(self.total, dtype=bool).ravel()
        if len(self.t) == 0:
            raise ValueError("empty constraint map")
        if not (len(self.t) == len(self.legs) == len(self.total)):
            raise ValueError("constraint map columns differ in length")

    @property
    def red_cells(self) -> int:
        return int(np.count_nonzero(~self.total))

    @property
    def all_green(self) -> bool:
        return bool(self.legs.all() and self.total.all())

    def rows(self):
        for k in range(len(self.t)):
            yield [self.t[k], *self.legs[k], self.total[k]]


@dataclass
class Telemetry:
    t: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    feasible_total: list = field(default_factory=list)
    feasible_legs: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    angles: list = field(default_factory=list)
    status: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    stance: list = field(default_factory=list)
    solve_time: list = field(default_factory=list)

    def append(self, t, sol, angles, solve_time):
        self.t.append(t)
        self.cost.append(sol.cost)
        self.feasible_total.append(sol.feasible_total)
        self.feasible_legs.append(list(sol.feasible_legs))
        self.forces.append(np.array(sol.u))
        self.angles.append(np.array(angles))
        self.status.append(sol.status)
        self.mu.append(sol.mu)
        self.stance.append(sol.stance)
        self.solve_time.append(solve_time)

    def __len__(self):
        return len(self.t)

    def rows(self):
        for k in range(len(self.t)):
            yield [self.t[k], self.cost[k], self.feasible_total[k], *self.feasible_legs[k],
                   *self.forces[k], *self.angles[k]]

    def dcm(self) -> DcmGrid:
        return DcmGrid(self.t, self.feasible_legs, self.feasible_total)


@dataclass
class ClosedLoopResult:
    trajectory: object
    telemetry: Telemetry
    dcm: DcmGrid
    wall_time: float


def measured_state(robot: WholeBody, gravity: float = 9.81) -> np.ndarray:
    return np.concatenate([robot.torso.as_vector(), [-gravity]])


def run_closed_loop(gait: str | gaitmod.GaitSchedule = "walk", duration: float = 25.0,
                    mpc_config: MpcConfig | None = None, robot_config: RobotConfig | None = None,
                    command: gaitmod.ReferenceCommand | None = None, engine: str = "compiled",
                    fmap: ForceAngleMap = ForceAngleMap(), progress=None) -> ClosedLoopResult:
    """One MPC solve per control tick against the full rod model.

    Each tick reads the torso state, solves for ground forces, maps the
    normal forces to servo angles and back to tendon tension shaped by the
    gait phase, and hands the tangential forces to the tips as traction
    limited by the phase friction coefficients.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    schedule = gaitmod.gait_by_name(gait) if isinstance(gait, str) else gait
    if command is None:
        command = gaitmod.COMMANDS.get(schedule.name, gaitmod.COMMANDS["walk"])
    cfg = mpc_config or MpcConfig()
    rcfg = robot_config or RobotConfig()
    robot = WholeBody(rcfg, engine=engine)
    ctrl = MpcController(cfg, schedule, command, rcfg.body.inertia)
    rec = TrajectoryRecorder()
    rec.record(robot)
    tel = Telemetry()
    ticks = int(round(duration / cfg.dt))
    start = _time.perf_counter()
    for k in range(ticks):
        t = robot.time
        x = measured_state(robot, rcfg.gravity)
        feet = robot.tip_positions() - robot.torso.position
        t0 = _time.perf_counter()
        sol = ctrl.solve_step(x, t, feet)
        solve_time = _time.perf_counter() - t0
        u = sol.u.reshape(4, 3)
        angles = force_to_angle(fmap, np.maximum(u[:, 2], 0.0))
        info = gaitmod.phase_at(schedule, t)
        shape = np.array([gaitmod.tension_shape(info, leg) for leg in gaitmod.LEGS])
        tension = angle_to_force(fmap, angles) * shape
        try:
            mean_forces = robot.advance(cfg.dt, tension, traction=u[:, :2], mu=np.array(sol.mu))
        except Exception as exc:
            raise RuntimeError(f"closed loop failed at tick {k} (t={t:.3f}s): {exc}") from exc
        tel.append(t, sol, angles, solve_time)
        rec.record(robot, mean_forces)
        if progress is not None:
            progress(k, ticks)
    return ClosedLoopResult(rec.result(), tel, tel.dcm(), _time.perf_counter() - start)


# ---------------------------------------------------------------- stability study

@dataclass(frozen=True)
class PerturbationScenario:
    name: str
    overrides: tuple = ()
    noise_sigma: float = 0.0
    duration: float = 25.0

    def initial_state(self, command: gaitmod.ReferenceCommand, gravity: float = 9.81) -> np.ndarray:
        x = gaitmod.reference_trajectory(command, 0.0, 1, 1.0)[0]
        x[12] = -gravity
        for idx, val in self.overrides:
            x[idx] = val
        return x


# state indices: 0 roll, 1 pitch, 5 pz, 9 vx
SCENARIOS = (
    PerturbationScenario("Baseline"),
    PerturbationScenario("Roll", ((0, 0.1),)),
    PerturbationScenario("Pitch", ((1, 0.1),)),
    PerturbationScenario("Height", ((5, 0.01),)),
    PerturbationScenario("Velocity", ((9, 0.05),)),
    PerturbationScenario("Combined", ((0, 0.05), (1, 0.05), (5, 0.02), (9, 0.03))),
    PerturbationScenario("Noise", noise_sigma=0.001),
)


def scenario_by_name(name: str) -> PerturbationScenario:
    for s in SCENARIOS:
        if s.name.lower() == name.lower():
            return s
    raise ValueError(f"unknown scenario {name!r}")


@dataclass
class ScenarioResult:
    name: str
    t: np.ndarray
    cost: np.ndarray
    states: np.ndarray
    dcm: DcmGrid
    max_cost: float
    mean_cost: float
    final_cost: float
    settling_time: float | None
    infeasible_steps: int

    def summary(self) -> dict:
        return {"scenario": self.name, "max_cost": self.max_cost, "mean_cost": self.mean_cost,
                "final_cost": self.final_cost,
                "settling_time": "not-settled" if self.settling_time is None else self.settling_time,
                "infeasible_steps": self.infeasible_steps}


@dataclass
class StabilityReport:
    results: list

    def __getitem__(self, name) -> ScenarioResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def rows(self):
        for r in self.results:
            s = r.summary()
            yield [s["scenario"], repr(s["max_cost"]), repr(s["mean_cost"]),
                   repr(s["final_cost"]),
                   s["settling_time"] if isinstance(s["settling_time"], str) else repr(s["settling_time"]),
                   str(s["infeasible_steps"])]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "max_cost", "mean_cost", "final_cost", "settling_time",
                        "infeasible_steps"])
            w.writerows(self.rows())


def settling_time(cost, dt: float = None, threshold: float = 0.01, t=None):
    """Earliest time after which the cost stays below ``threshold``;
    ``None`` when it never does."""
    c = np.asarray(cost, dtype=float)
    if c.size == 0:
        raise ValueError("empty cost series")
    if t is None:
        if dt is None:
            raise ValueError("need dt or a time vector")
        t = dt * np.arange(c.size)
    t = np.asarray(t, dtype=float)
    above = np.nonzero(~(c < threshold))[0]
    if above.size == 0:
        return float(t[0])
    last = above[-1]
    if last == c.size - 1:
        return None
    return float(t[last + 1])


def nominal_feet(robot_config: RobotConfig) -> np.ndarray:
    robot = WholeBody(robot_config, engine="numpy")
    feet = robot.tip_positions() - robot.torso.position
    feet[:, 2] = -robot_config.stand_height
    return feet


def run_scenario(scenario: PerturbationScenario, mpc_config: MpcConfig | None = None,
                 gait: str = "walk", seed: int = 0, n_mpc: int = 15, n_rollout: int = 5,
                 robot_config: RobotConfig | None = None, feet=None,
                 clip_sigmas: float = 3.0, command=None) -> ScenarioResult:
    """Roll the single-body model forward at the control rate.

    Ticks alternate in blocks: ``n_mpc`` ticks re-solve the MPC and apply
    its first input, then ``n_rollout`` ticks replay the rest of the last
    plan open loop.  The plant carries the full robot mass so the weight
    equality balances gravity exactly.
    """
    if n_mpc < 1 or n_rollout < 0:
        raise ValueError("need n_mpc >= 1 and n_rollout >= 0")
    cfg = mpc_config or MpcConfig()
    if n_rollout >= cfg.horizon:
        raise ValueError("rollout block must be shorter than the horizon")
    rcfg = robot_config or RobotConfig()
    schedule = gaitmod.gait_by_name(gait) if isinstance(gait, str) else gait
    if command is None:
        command = gaitmod.COMMANDS.get(schedule.name, gaitmod.COMMANDS["walk"])
    if feet is None:
        feet = nominal_feet(rcfg)
    inertia = rcfg.body.inertia
    ctrl = MpcController(cfg, schedule, command, inertia)
    rng = np.random.default_rng(seed)
    x = scenario.initial_state(command, cfg.gravity)
    ticks = int(round(scenario.duration / cfg.dt))
    block = n_mpc + n_rollout
    times, costs, states, legs, total = [], [], [], [], []
    plan = None
    for k in range(ticks):
        t = k * cfg.dt
        pos = k % block
        if pos < n_mpc or plan is None:
            sol = ctrl.solve_step(x, t, feet)
            u = sol.u
            leg_ok, tot_ok, cost = sol.feasible_legs, sol.feasible_total, sol.cost
            plan = (sol, ctrl._warm[0] if ctrl._warm is not None else None, k)
        else:
            sol0, shifted, k0 = plan
            offset = k - k0 - 1
            if shifted is not None and offset * NU + NU <= shifted.size:
                u = shifted[offset * NU:(offset + 1) * NU]
            else:
                u = sol0.u
            mu, stance = ctrl.gait_stages(t)
            leg_ok = leg_feasible(u, mu[0], stance[0], cfg)
            tot_ok = sol0.feasible_total and abs(u[2::3].sum() - cfg.weight) <= cfg.sum_tolerance
            ref = gaitmod.reference_trajectory(command, t, 1, cfg.dt, anchor=(t, x[3], x[4]))[0]
            cost = stage_cost(x, ref, cfg.q_diag)
        times.append(t)
        costs.append(cost)
        states.append(x.copy())
        legs.append(list(leg_ok))
        total.append(bool(tot_ok))
        a_d, b_d = linearize(x, inertia, feet, cfg.dt, rcfg.total_mass, cfg.exact_discretization)
        x = a_d @ x + b_d @ u
        if scenario.noise_sigma > 0:
            s = scenario.noise_sigma
            noise = np.clip(rng.normal(0.0, s, NX - 1), -clip_sigmas * s, clip_sigmas * s)
            x[:NX - 1] += noise
    c = np.asarray(costs)
    grid = DcmGrid(times, legs, total)
    settle = settling_time(c, t=np.asarray(times))
    return ScenarioResult(scenario.name, np.asarray(times), c, np.asarray(states), grid,
                          float(c.max()), float(c.mean()), float(c[-1]), settle, grid.red_cells)


def run_perturbation_suite(scenarios=SCENARIOS, mpc_config: MpcConfig | None = None,
                           seed: int = 0, n_mpc: int = 15, n_rollout: int = 5,
                           gait="walk", robot_config: RobotConfig | None = None,
                           duration: float | None = None, command=None) -> StabilityReport:
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("no scenarios given")
    rcfg = robot_config or RobotConfig()
    feet = nominal_feet(rcfg)
    out = []
    for sc in scenarios:
        if duration is not None:
            sc = PerturbationScenario(sc.name, sc.overrides, sc.noise_sigma, duration)
        # streams keyed on the scenario name, so results do not depend on order
        sub_seed = np.random.SeedSequence([seed, zlib.crc32(sc.name.encode())]).generate_state(1)[0]
        out.append(run_scenario(sc, mpc_config, gait, int(sub_seed), n_mpc, n_rollout,
                                rcfg, feet, command=command))
    return StabilityReport(out)


# ---------------------------------------------------------------- validation

@dataclass
class TrajectoryRecord:
    t: np.ndarray
    values: np.ndarray
    source: str = "simulation"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.t) != len(self.values):
            raise ValueError("time and value lengths differ")
        if len(self.t) < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.source not in ("simulation", "external"):
            raise ValueError("source must be simulation or external")


def load_marker_csv(path, marker: str = "com") -> TrajectoryRecord:
    """Read ``t,marker_id,x,y,z`` rows for one marker."""
    t, xyz = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["marker_id"] == marker:
                t.append(float(row["t"]))
                xyz.append([float(row["x"]), float(row["y"]), float(row["z"])])
    if not t:
        raise ValueError(f"no samples for marker {marker!r} in {path}")
    return TrajectoryRecord(t, xyz, "external")


def time_align(external: TrajectoryRecord, sim: TrajectoryRecord):
    """Interpolate ``external`` onto the part of the simulation grid that
    both records cover."""
    lo = max(external.t[0], sim.t[0])
    hi = min(external.t[-1], sim.t[-1])
    if hi < lo:
        raise ValueError("trajectories do not overlap in time")
    keep = (sim.t >= lo - 1e-12) & (sim.t <= hi + 1e-12)
    t = sim.t[keep]
    cols = [np.interp(t, external.t, external.values[:, j]) for j in range(external.values.shape[1])]
    return t, np.stack(cols, axis=1), sim.values[keep]


@dataclass
class Metrics:
    rmse: float
    mae: float
    nrmse: float
    avg_error: float
    error_pct: float
    accuracy: float
    nrmse_defined: bool = True

    def as_dict(self) -> dict:
        return {"RMSE": self.rmse, "MAE": self.mae, "NRMSE": self.nrmse,
                "avg_error": self.avg_error, "error_pct": self.error_pct,
                "accuracy": self.accuracy, "nrmse_defined": self.nrmse_defined}


def compute_metrics(measured, reference) -> Metrics:
    """Error metrics of ``measured`` against ``reference`` (1-D series)."""
    m = np.asarray(measured, dtype=float).ravel()
    r = np.asarray(reference, dtype=float).ravel()
    if m.size != r.size or m.size == 0:
        raise ValueError("series must be non-empty and of equal length")
    e = m - r
    rmse = math.sqrt(float(np.mean(e * e)))
    mae = float(np.mean(np.abs(e)))
    avg = abs(float(np.mean(e)))
    span = float(r.max() - r.min())
    nrmse = rmse / span * 100.0 if span > 0 else float("inf")
    pct = avg / span * 100.0 if span > 0 else float("inf")
    # a range too small to divide by is treated like a flat reference
    defined = bool(span > 0 and math.isfinite(nrmse) and math.isfinite(pct))
    if not defined:
        nrmse = pct = float("nan")
    acc = 100.0 - pct if defined else float("nan")
    return Metrics(rmse, mae, nrmse, avg, pct, acc, defined)


def trajectory_metrics(external: TrajectoryRecord, sim: TrajectoryRecord, axes="xyz") -> dict:
    _, ext, own = time_align(external, sim)
    return {a: compute_metrics(ext[:, j], own[:, j]) for j, a in enumerate(axes[:ext.shape[1]])}


def path_slope(xy) -> float:
    xy = np.asarray(xy, dtype=float)
    d = xy[-1] - xy[0]
    if abs(d[0]) < 1e-12:
        raise ValueError("no net x displacement")
    return float(d[1] / d[0])


def path_rmse_to_line(xy, angle: float) -> float:
    """RMS perpendicular distance from the path to the line through its start
    at ``angle``."""
    xy = np.asarray(xy, dtype=float) - np.asarray(xy, dtype=float)[0]
    n = np.array([-math.sin(angle), math.cos(angle)])
    return math.sqrt(float(np.mean((xy @ n) ** 2)))
