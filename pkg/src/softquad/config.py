"""JSON run configuration.

Every section is optional; missing keys keep the defaults.  Example::

    {"gait": "walk",
     "command": {"v_x": 0.08},
     "mpc": {"horizon": 15, "dt": 0.033},
     "robot": {"torso_mass": 2.0, "stand_height": 0.04},
     "leg": {"youngs_modulus": 1e7, "contact": {"stiffness": 1e5}},
     "tendon": {"t_max": 1.5},
     "suite": {"n_mpc": 15, "n_rollout": 5, "scenarios": ["Baseline", "Noise"]}}
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from . import gait as gaitmod
from .body import RobotConfig, TorsoBody
from .leg import LegDefinition, TendonProfile
from .mpc import MpcConfig
from .qp import AdmmSettings
from .rod import RodGeometry, RodMaterial

SECTIONS = {"gait", "gait_table", "command", "mpc", "solver", "robot", "leg", "tendon", "suite"}


class ConfigError(ValueError):
    pass


def _apply(obj, values: dict, section: str, rename=None):
    rename = rename or {}
    names = {f.name for f in dataclasses.fields(obj)}
    kw = {}
    for k, v in values.items():
        key = rename.get(k, k)
        if key not in names:
            raise ConfigError(f"unknown key {section}.{k}")
        kw[key] = tuple(v) if isinstance(v, list) else v
    try:
        return dataclasses.replace(obj, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class RunConfig:
    gait: gaitmod.GaitSchedule = field(default_factory=gaitmod.walk_gait)
    command: gaitmod.ReferenceCommand | None = None
    mpc: MpcConfig = field(default_factory=MpcConfig)
    robot: RobotConfig = field(default_factory=RobotConfig)
    tendon: TendonProfile = field(default_factory=TendonProfile)
    n_mpc: int = 15
    n_rollout: int = 5
    scenarios: tuple | None = None

    @property
    def reference(self) -> gaitmod.ReferenceCommand:
        if self.command is not None:
            return self.command
        return gaitmod.COMMANDS.get(self.gait.name, gaitmod.COMMANDS["walk"])


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    cfg = RunConfig()
    if "gait_table" in data:
        t = data["gait_table"]
        cfg.gait = gaitmod.GaitTable(t.get("name", "custom"), t["phases"]).to_schedule()
    elif "gait" in data:
        cfg.gait = gaitmod.gait_by_name(data["gait"])
    if "command" in data:
        cfg.command = _apply(cfg.reference, data["command"], "command")
    solver = _apply(AdmmSettings(), data.get("solver", {}), "solver")
    mpc = dict(data.get("mpc", {}))
    cfg.mpc = _apply(MpcConfig(solver=solver), mpc, "mpc")
    robot = dict(data.get("robot", {}))
    body_keys = {"torso_mass": "mass", "dims": "dims"}
    body_vals = {k: robot.pop(k) for k in list(robot) if k in body_keys}
    try:
        # built fresh so attachment corners follow any new dimensions
        body = TorsoBody(**{body_keys[k]: tuple(v) if isinstance(v, list) else v
                            for k, v in body_vals.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"robot: {exc}") from exc
    leg = LegDefinition()
    lv = dict(data.get("leg", {}))
    geom_keys = {f.name for f in dataclasses.fields(RodGeometry)}
    mat_keys = {f.name for f in dataclasses.fields(RodMaterial)}
    geom = _apply(leg.geometry, {k: lv.pop(k) for k in list(lv) if k in geom_keys}, "leg")
    mat = _apply(leg.material, {k: lv.pop(k) for k in list(lv) if k in mat_keys}, "leg")
    contact = _apply(leg.contact, lv.pop("contact", {}), "leg.contact")
    stab = _apply(leg.stabilization, lv.pop("stabilization", {}), "leg.stabilization")
    leg = _apply(dataclasses.replace(leg, geometry=geom, material=mat, contact=contact,
                                     stabilization=stab), lv, "leg")
    cfg.robot = _apply(RobotConfig(body=body, leg=leg), robot, "robot")
    cfg.tendon = _apply(cfg.tendon, data.get("tendon", {}), "tendon")
    suite = dict(data.get("suite", {}))
    cfg.n_mpc = int(suite.pop("n_mpc", cfg.n_mpc))
    cfg.n_rollout = int(suite.pop("n_rollout", cfg.n_rollout))
    if "scenarios" in suite:
        cfg.scenarios = tuple(suite.pop("scenarios"))
    if suite:
        raise ConfigError(f"unknown key suite.{next(iter(suite))}")
    return cfg


def load(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)
