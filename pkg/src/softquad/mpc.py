"""Convex MPC over per-leg ground reaction forces.

The prediction model is the single rigid body with gravity carried as a
13th state, discretised at the control rate and condensed over the horizon
so the decision vector is the stacked 12H force sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import gait as gaitmod
from .leg import ForceAngleMap, force_to_angle
from .qp import AdmmSettings, AdmmSolver, QuadraticProgram, SOLVED

NX = 13
NU = 12

# roll, pitch, yaw, px, py, pz, wx, wy, wz, vx, vy, vz, gz
STATE_WEIGHTS = (0.1, 0.1, 0.1, 0.0, 0.0, 100.0, 0.01, 0.01, 0.01, 20.0, 0.1, 0.0, 0.0)
WEIGHT_SCALE = 1.0 / 1000.0


@dataclass
class MpcConfig:
    horizon: int = 15
    dt: float = 0.033
    q_diag: tuple = tuple(w * WEIGHT_SCALE for w in STATE_WEIGHTS)
    r_diag: tuple = (1e-8,) * NU
    f_max: float = 6.0
    model_mass: float = 2.0
    total_mass: float = 2.16
    gravity: float = 9.81
    exact_discretization: bool = False
    solver: AdmmSettings = field(default_factory=AdmmSettings)
    force_tolerance: float = 1e-6
    sum_tolerance: float = 1e-4

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.q_diag) != NX or len(self.r_diag) != NU:
            raise ValueError(f"Q needs {NX} entries and R {NU}")
        if min(self.q_diag) < 0 or min(self.r_diag) < 0:
            raise ValueError("weights must be non-negative")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)

    @property
    def weight(self) -> float:
        return self.total_mass * self.gravity


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def linearize(x_k, inertia, foot_positions, dt: float, mass: float = 2.0,
              exact: bool = False):
    """Discrete ``(A_d, B_d)`` about ``x_k``.

    ``inertia`` is the body-frame inertia; it is turned to the world frame
    with the current yaw.  ``foot_positions`` are the four contact points
    relative to the CoM in world axes.
    """
    inertia = np.asarray(inertia, dtype=float)
    if np.linalg.det(inertia) <= 0:
        raise ValueError("inertia must be non-singular")
    yaw = float(x_k[2])
    c, s = math.cos(yaw), math.sin(yaw)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    inv_world = np.linalg.inv(rz @ inertia @ rz.T)
    a = np.zeros((NX, NX))
    a[0:3, 6:9] = rz.T
    a[3:6, 9:12] = np.eye(3)
    a[11, 12] = 1.0
    b = np.zeros((NX, NU))
    feet = np.asarray(foot_positions, dtype=float)
    for i in range(4):
        b[6:9, 3 * i:3 * i + 3] = inv_world @ skew(feet[i])
        b[9:12, 3 * i:3 * i + 3] = np.eye(3) / mass
    if exact:
        block = np.zeros((NX + NU, NX + NU))
        block[:NX, :NX] = a
        block[:NX, NX:] = b
        e = expm(block * dt)
        return e[:NX, :NX], e[:NX, NX:]
    return np.eye(NX) + a * dt, b * dt


def prediction_matrices(a_d, b_d, horizon: int):
    """``X = Sx x0 + Su U`` for the stacked states ``x_1 .. x_H``."""
    sx = np.zeros((NX * horizon, NX))
    su = np.zeros((NX * horizon, NU * horizon))
    power = np.eye(NX)
    powers = []
    for k in range(horizon):
        powers.append(power)
        power = a_d @ power
        sx[NX * k:NX * (k + 1)] = power
    for k in range(horizon):
        for j in range(k + 1):
            su[NX * k:NX * (k + 1), NU * j:NU * (j + 1)] = powers[k - j] @ b_d
    return sx, su


def constraint_rows(mu_stages, stance_stages, config: MpcConfig):
    """Stacked ``(A, l, u)`` over the horizon: per leg an ``f_z`` bound and
    four friction half-planes, then one equality on the total normal force."""
    h = config.horizon
    rows_per_stage = 4 * 5 + 1
    A = np.zeros((rows_per_stage * h, NU * h))
    lo = np.zeros(rows_per_stage * h)
    hi = np.zeros(rows_per_stage * h)
    for k in range(h):
        base = rows_per_stage * k
        col = NU * k
        for i in range(4):
            mu = mu_stages[k][i]
            r = base + 5 * i
            fx, fy, fz = col + 3 * i, col + 3 * i + 1, col + 3 * i + 2
            A[r, fz] = 1.0
            lo[r] = 0.0
            hi[r] = config.f_max if stance_stages[k][i] else 0.0
            A[r + 1, fx], A[r + 1, fz] = 1.0, -mu
            lo[r + 1], hi[r + 1] = -np.inf, 0.0
            A[r + 2, fx], A[r + 2, fz] = 1.0, mu
            lo[r + 2], hi[r + 2] = 0.0, np.inf
            A[r + 3, fy], A[r + 3, fz] = 1.0, -mu
            lo[r + 3], hi[r + 3] = -np.inf, 0.0
            A[r + 4, fy], A[r + 4, fz] = 1.0, mu
            lo[r + 4], hi[r + 4] = 0.0, np.inf
        r = base + 20
        A[r, col + 2:col + NU:3] = 1.0
        lo[r] = hi[r] = config.weight
    return A, lo, hi


def build_qp(x_k, refs, a_d, b_d, config: MpcConfig, mu_stages, stance_stages) -> QuadraticProgram:
    refs = np.asarray(refs, dtype=float)
    h = config.horizon
    if refs.shape != (h, NX):
        raise ValueError(f"expected {h} reference states, got {refs.shape}")
    if len(mu_stages) != h or len(stance_stages) != h:
        raise ValueError("gait information must cover the horizon")
    sx, su = prediction_matrices(a_d, b_d, h)
    qbar = np.tile(np.asarray(config.q_diag, dtype=float), h)
    rbar = np.tile(np.asarray(config.r_diag, dtype=float), h)
    free = sx @ np.asarray(x_k, dtype=float) - refs.ravel()
    P = 2.0 * (su.T @ (qbar[:, None] * su))
    P[np.diag_indices_from(P)] += 2.0 * rbar
    P = 0.5 * (P + P.T)
    q = 2.0 * su.T @ (qbar * free)
    A, lo, hi = constraint_rows(mu_stages, stance_stages, config)
    return QuadraticProgram(P, q, A, lo, hi)


def stage_cost(x, x_ref, Q) -> float:
    e = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        return float(e @ (Q * e))
    return float(e @ Q @ e)


def leg_feasible(u, mu, stance, config: MpcConfig):
    """Per-leg check of the bound and friction block for one stage input."""
    u = np.asarray(u, dtype=float).reshape(4, 3)
    tol = config.force_tolerance
    out = []
    for i in range(4):
        fx, fy, fz = u[i]
        top = config.f_max if stance[i] else 0.0
        ok = (-tol <= fz <= top + tol and abs(fx) <= mu[i] * fz + tol
              and abs(fy) <= mu[i] * fz + tol)
        out.append(bool(ok))
    return out


@dataclass
class MpcSolution:
    u: np.ndarray
    feasible_legs: list
    feasible_total: bool
    cost: float
    status: str
    iterations: int
    objective: float
    mu: tuple
    stance: tuple
    used_fallback: bool = False


def initial_input(config: MpcConfig, stance) -> np.ndarray:
    u = np.zeros(NU)
    legs = [i for i in range(4) if stance[i]]
    for i in legs:
        u[3 * i + 2] = config.weight / len(legs)
    return u


class MpcController:
    """Receding-horizon controller: one QP per tick, last feasible input on
    failure."""

    def __init__(self, config: MpcConfig, schedule: gaitmod.GaitSchedule,
                 command: gaitmod.ReferenceCommand, inertia, solver: AdmmSolver | None = None):
        self.config = config
        self.schedule = schedule
        self.command = command
        self.inertia = np.asarray(inertia, dtype=float)
        self.solver = solver or AdmmSolver(config.solver)
        stance0 = [leg in gaitmod.phase_at(schedule, 0.0).stance for leg in gaitmod.LEGS]
        self.last_feasible = initial_input(config, stance0)
        self._warm = None

    def gait_stages(self, t: float):
        mu, stance = [], []
        for k in range(self.config.horizon):
            info = gaitmod.phase_at(self.schedule, t + k * self.config.dt)
            mu.append(info.mu)
            stance.append(tuple(leg in info.stance for leg in gaitmod.LEGS))
        return mu, stance

    def references(self, t: float, x_k):
        cfg = self.config
        return gaitmod.reference_trajectory(self.command, t + cfg.dt, cfg.horizon, cfg.dt,
                                            anchor=(t, float(x_k[3]), float(x_k[4])))

    def solve_step(self, x_k, t: float, foot_positions, mu_override=None, stance_override=None):
        cfg = self.config
        x_k = np.asarray(x_k, dtype=float)
        a_d, b_d = linearize(x_k, self.inertia, foot_positions, cfg.dt, cfg.model_mass,
                             cfg.exact_discretization)
        mu, stance = self.gait_stages(t)
        if mu_override is not None:
            mu = [tuple(mu_override)] * cfg.horizon
        if stance_override is not None:
            stance = [tuple(stance_override)] * cfg.horizon
        refs = self.references(t, x_k)
        qp = build_qp(x_k, refs, a_d, b_d, cfg, mu, stance)
        x0 = y0 = None
        if self._warm is not None:
            x0, y0 = self._warm
        sol = self.solver.solve(qp, x0, y0 if y0 is not None and y0.size == qp.m else None)
        cost = stage_cost(x_k, gaitmod.reference_trajectory(
            self.command, t, 1, cfg.dt, anchor=(t, x_k[3], x_k[4]))[0], cfg.q_diag)
        fallback = sol.status != SOLVED
        if not fallback:
            u = sol.x[:NU].copy()
            # shift the horizon by one stage for the next warm start
            xs = np.concatenate([sol.x[NU:], sol.x[-NU:]])
            rows = qp.m // cfg.horizon
            ys = np.concatenate([sol.y[rows:], sol.y[-rows:]])
            self._warm = (xs, ys)
        else:
            u = self.last_feasible.copy()
            self._warm = None
        legs = leg_feasible(u, mu[0], stance[0], cfg)
        total = (not fallback) and abs(u[2::3].sum() - cfg.weight) <= cfg.sum_tolerance
        if total and all(legs):
            self.last_feasible = u.copy()
        return MpcSolution(u, legs, bool(total), cost, sol.status, sol.iterations,
                           sol.objective, tuple(mu[0]), tuple(stance[0]), fallback)


def force_commands_to_angles(u, fmap: ForceAngleMap = ForceAngleMap()) -> np.ndarray:
    """Servo angle per leg from the commanded normal force; the tangential
    components have no actuator of their own."""
    fz = np.asarray(u, dtype=float).reshape(4, 3)[:, 2]
    return np.asarray(force_to_angle(fmap, np.maximum(fz, 0.0)), dtype=float)
