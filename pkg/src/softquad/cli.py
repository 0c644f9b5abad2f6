"""``softquad`` command line.

Every subcommand writes into ``--out`` and prints a one-line JSON summary.
Failures print ``{"error": ..., "message": ...}`` on stderr and exit 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import config as configmod
from . import harness, plotting
from .body import whole_body_simulate
from .leg import TendonSchedule, simulate_leg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, code=2)


def _fail(kind, message, code=1):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)}) + "\n")
    sys.exit(code)


def _out(args, *parts):
    path = os.path.join(args.out, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _report(payload):
    print(json.dumps(payload, sort_keys=True))


def cmd_simulate_leg(args, cfg):
    duration = args.duration or 3.0
    period = cfg.tendon.duration + 0.5
    schedule = TendonSchedule.periodic(cfg.tendon, period, 0.0, duration)
    leg = cfg.robot.leg
    traj = simulate_leg(leg, schedule, duration, record_stride=args.stride)
    csv_path = _out(args, "leg_trajectory.csv")
    harness.write_csv(csv_path, ["t", "node", "x", "z", "theta", "vx", "vz", "omega"], traj.rows())
    tip_path = _out(args, "leg_tip.csv")
    harness.write_csv(tip_path, ["t", "tension", "tip_x", "tip_z", "Fx", "Fz", "My", "energy"],
                      ([traj.t[k], traj.tension[k], traj.x[k, -1], traj.z[k, -1],
                        *traj.reaction[k], traj.energy[k]] for k in range(len(traj.t))))
    frames = np.linspace(0, len(traj.t) - 1, min(12, len(traj.t))).astype(int)
    svg = plotting.leg_shape(traj.x, traj.z, _out(args, "leg_shape.svg"), frames)
    _report({"command": "simulate-leg", "frames": len(traj.t), "csv": csv_path, "svg": svg,
             "tip_min_z": float(traj.z[:, -1].min())})


def cmd_simulate_body(args, cfg):
    duration = args.duration or 2.0
    schedules = None
    if args.tendon:
        period = cfg.tendon.duration + 0.5
        schedules = [TendonSchedule.periodic(cfg.tendon, period, 0.25 * period * i, duration)
                     for i in range(4)]
    traj = whole_body_simulate(cfg.robot, schedules, duration)
    path = _out(args, "body_trajectory.csv")
    harness.write_csv(path, traj.header(), traj.rows())
    svg = plotting.height_tracking(traj.t, traj.position[:, 2], cfg.robot.stand_height,
                                   _out(args, "height.svg"))
    _report({"command": "simulate-body", "samples": len(traj.t), "csv": path, "svg": svg,
             "final_pz": float(traj.position[-1, 2])})


def _write_run(args, res, cfg):
    tr, tel = res.trajectory, res.telemetry
    files = {}
    files["trajectory"] = _out(args, "trajectory.csv")
    harness.write_csv(files["trajectory"], tr.header(), tr.rows())
    files["telemetry"] = _out(args, "telemetry.csv")
    harness.write_csv(files["telemetry"], harness.TELEMETRY_HEADER, tel.rows())
    files.update(_export_dcm(args, res.dcm))
    cmd = cfg.reference
    files["height"] = plotting.height_tracking(tr.t, tr.position[:, 2], cmd.p_z,
                                               _out(args, "height.svg"))
    files["velocity"] = plotting.velocities(tr.t, tr.velocity, (cmd.v_x, cmd.v_y),
                                            _out(args, "velocity.svg"))
    files["path"] = plotting.com_path(tr.position[:, :2], _out(args, "path.svg"),
                                      math.atan2(cmd.v_y, cmd.v_x) if cmd.v_x or cmd.v_y else None)
    files["forces"] = plotting.leg_forces(tel.t, tel.forces, _out(args, "forces.svg"))
    return files


def _export_dcm(args, grid, prefix=""):
    csv_path = _out(args, prefix + "dcm.csv")
    harness.write_csv(csv_path, ["t", "leg1", "leg2", "leg3", "leg4", "total"], grid.rows())
    svg = plotting.dcm_heatmap(grid.t, grid.legs, grid.total, _out(args, prefix + "dcm.svg"))
    return {"dcm_csv": csv_path, "dcm_svg": svg}


def cmd_run_mpc(args, cfg):
    duration = args.duration or 25.0
    res = harness.run_closed_loop(cfg.gait, duration, cfg.mpc, cfg.robot, cfg.reference)
    files = _write_run(args, res, cfg)
    tr = res.trajectory
    tail = tr.t >= tr.t[-1] - min(10.0, 0.4 * duration)
    summary = {"command": "run-mpc", "gait": cfg.gait.name, "duration": duration,
               "ticks": len(res.telemetry), "infeasible_steps": res.dcm.red_cells,
               "final_pz": float(tr.position[-1, 2]),
               "mean_vx_tail": float(tr.velocity[tail, 0].mean()),
               "mean_vy_tail": float(tr.velocity[tail, 1].mean()),
               "wall_time": res.wall_time, "files": files}
    if abs(tr.position[-1, 0] - tr.position[0, 0]) > 1e-9:
        summary["path_slope"] = harness.path_slope(tr.position[:, :2])
    with open(_out(args, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _report(summary)


def cmd_perturb_suite(args, cfg):
    names = args.scenario or cfg.scenarios
    scenarios = ([harness.scenario_by_name(n) for n in names] if names else harness.SCENARIOS)
    report = harness.run_perturbation_suite(scenarios, cfg.mpc, args.seed, cfg.n_mpc,
                                            cfg.n_rollout, cfg.gait, cfg.robot, args.duration,
                                            cfg.command)
    path = _out(args, "stability_report.csv")
    report.write_csv(path)
    with open(_out(args, "stability_report.json"), "w") as fh:
        json.dump([r.summary() for r in report.results], fh, indent=2, sort_keys=True)
    costs = _out(args, "costs.csv")
    harness.write_csv(costs, ["t"] + [r.name for r in report.results],
                      ([report.results[0].t[k]] + [r.cost[k] for r in report.results]
                       for k in range(len(report.results[0].t))))
    for r in report.results:
        _export_dcm(args, r.dcm, prefix=os.path.join(r.name, ""))
    svg = plotting.cost_curves({r.name: (r.t, r.cost) for r in report.results},
                               _out(args, "costs.svg"))
    _report({"command": "perturb-suite", "seed": args.seed, "report": path, "svg": svg,
             "scenarios": [r.summary() for r in report.results]})


def _read_sim_com(path):
    t, xyz = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            t.append(float(row["t"]))
            xyz.append([float(row["px"]), float(row["py"]), float(row["pz"])])
    return harness.TrajectoryRecord(t, xyz, "simulation")


def cmd_validate(args, cfg):
    if not args.sim:
        raise ValueError("validate needs --sim <trajectory.csv>")
    sim = _read_sim_com(args.sim)
    if args.external:
        ext = harness.load_marker_csv(args.external, args.marker)
    else:
        # self test: the simulation's own path with zero-mean noise
        rng = np.random.default_rng(args.seed)
        ext = harness.TrajectoryRecord(
            sim.t, sim.values + rng.normal(0.0, args.noise, sim.values.shape), "external")
    metrics = harness.trajectory_metrics(ext, sim)
    out = {a: m.as_dict() for a, m in metrics.items()}
    path = _out(args, "metrics.json")
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    _, ext_al, _ = harness.time_align(ext, sim)
    plotting.com_path(sim.values[:, :2], _out(args, "validation_path.svg"), external=ext_al[:, :2])
    _report({"command": "validate", "metrics": out, "file": path})


def _read_telemetry(path):
    cols = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k, v in row.items():
                cols.setdefault(k, []).append(float(v))
    if not cols:
        raise ValueError(f"{path} has no rows")
    return {k: np.asarray(v) for k, v in cols.items()}


def cmd_export_dcm(args, cfg):
    if not args.telemetry:
        raise ValueError("export-dcm needs --telemetry <telemetry.csv>")
    tel = _read_telemetry(args.telemetry)
    legs = np.column_stack([tel[f"feasible_leg{i}"] for i in range(1, 5)]) > 0.5
    grid = harness.DcmGrid(tel["t"], legs, tel["feasible_total"] > 0.5)
    files = _export_dcm(args, grid)
    _report({"command": "export-dcm", "red_cells": grid.red_cells, **files})


def cmd_plot(args, cfg):
    files = {}
    if args.trajectory:
        tr = _read_telemetry(args.trajectory)
        cmd = cfg.reference
        files["height"] = plotting.height_tracking(tr["t"], tr["pz"], cmd.p_z,
                                                   _out(args, "height.svg"))
        v = np.column_stack([tr["vx"], tr["vy"]])
        files["velocity"] = plotting.velocities(tr["t"], v, (cmd.v_x, cmd.v_y),
                                                _out(args, "velocity.svg"))
        files["path"] = plotting.com_path(np.column_stack([tr["px"], tr["py"]]),
                                          _out(args, "path.svg"))
    if args.telemetry:
        tel = _read_telemetry(args.telemetry)
        f = np.column_stack([tel[f"f{a}{i}"] for i in range(1, 5) for a in "xyz"])
        files["forces"] = plotting.leg_forces(tel["t"], f, _out(args, "forces.svg"))
        files["cost"] = plotting.cost_curves({"run": (tel["t"], tel["cost"])},
                                             _out(args, "cost.svg"))
    if args.costs:
        c = _read_telemetry(args.costs)
        t = c.pop("t")
        files["costs"] = plotting.cost_curves({k: (t, v) for k, v in c.items()},
                                              _out(args, "costs.svg"))
    if not files:
        raise ValueError("plot needs --trajectory, --telemetry or --costs")
    _report({"command": "plot", "files": files})


COMMANDS = {
    "simulate-leg": cmd_simulate_leg,
    "simulate-body": cmd_simulate_body,
    "run-mpc": cmd_run_mpc,
    "perturb-suite": cmd_perturb_suite,
    "validate": cmd_validate,
    "export-dcm": cmd_export_dcm,
    "plot": cmd_plot,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--duration", type=float, help="simulated seconds")

    p = _Parser(prog="softquad", description="Soft quadruped simulation and MPC harness",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    leg = sub.add_parser("simulate-leg", parents=[common], help="single leg under tendon pulses")
    leg.add_argument("--stride", type=int, default=100, help="record every n rod steps")
    body = sub.add_parser("simulate-body", parents=[common], help="open-loop whole body")
    body.add_argument("--tendon", action="store_true", help="pulse each leg in turn")
    sub.add_parser("run-mpc", parents=[common], help="closed-loop MPC on the full rod model")
    suite = sub.add_parser("perturb-suite", parents=[common], help="perturbation stability study")
    suite.add_argument("--scenario", action="append", help="run only these scenarios")
    val = sub.add_parser("validate", parents=[common], help="compare against recorded data")
    val.add_argument("--sim", help="trajectory.csv from run-mpc")
    val.add_argument("--external", help="marker CSV t,marker_id,x,y,z")
    val.add_argument("--marker", default="com")
    val.add_argument("--noise", type=float, default=0.002,
                     help="noise std for the self test when no external file is given")
    dcm = sub.add_parser("export-dcm", parents=[common], help="constraint map from telemetry")
    dcm.add_argument("--telemetry")
    plot = sub.add_parser("plot", parents=[common], help="figures from saved CSVs")
    plot.add_argument("--trajectory")
    plot.add_argument("--telemetry")
    plot.add_argument("--costs")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2 ** 64:
        _fail("UsageError", "--seed must be an unsigned 64-bit integer", code=2)
    if args.duration is not None and not args.duration > 0:
        _fail("UsageError", "--duration must be positive", code=2)
    try:
        cfg = configmod.load(args.config)
        COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError) as exc:
        _fail(type(exc).__name__, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
