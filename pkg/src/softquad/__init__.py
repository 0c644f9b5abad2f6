"""Soft quadruped with tapered tendon-driven rod legs: rod mechanics, a
rigid torso co-simulation, gait tables, an ADMM QP solver and a convex
ground-force MPC, plus the run and analysis harness."""

from .body import RobotConfig, TorsoBody, TorsoState, WholeBody, whole_body_simulate
from .gait import ReferenceCommand, gait_by_name, phase_at, reference_trajectory
from .harness import (compute_metrics, run_closed_loop, run_perturbation_suite, settling_time,
                      time_align)
from .leg import LegDefinition, RodSimulator, TendonProfile, simulate_leg
from .mpc import MpcConfig, MpcController
from .qp import QuadraticProgram, solve

__version__ = "0.1.0"
