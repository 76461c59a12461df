"""YAML configuration: robot, actuators, controller, planner, sim, scenario.

One file describes one experiment setup. Sections are nested key-value maps;
unknown keys raise, and error messages carry the file and field path. The
packaged scenario registry ships ready-made configs for the two benchmark
robots and the disturbance-rejection experiment.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .actuator import ActuatorBank, AxisActuator, State
from .control import (ComputedTorqueController, ControllerGains,
                      PassiveController, SlidingModeController)
from .errors import ConfigError
from .gearopt import HysteresisPolicy
from .planner import PlannerParams
from .robot import Link, RobotModel
from .sim import SimConfig

_AXIS_SHORTHAND = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}

SCENARIOS = {
    "pendulum-swingup": "pendulum.yaml",
    "arm3-reach": "arm3.yaml",
    "disturbance-rejection": "disturbance.yaml",
}

CONTROLLER_KINDS = ("ct", "rstar", "sliding")


class _Section:
    """Dict wrapper that validates keys and tracks the field path for errors."""

    def __init__(self, data, path, source):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: {path} must be a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.source = source
        self.seen = set()

    def get(self, key, default=None, required=False):
        self.seen.add(key)
        if key in self.data:
            return self.data[key]
        if required:
            raise ConfigError(f"{self.source}: missing required field {self.path}.{key}")
        return default

    def section(self, key):
        return _Section(self.get(key), f"{self.path}.{key}", self.source)

    def finish(self):
        unknown = set(self.data) - self.seen
        if unknown:
            raise ConfigError(
                f"{self.source}: unknown field(s) {sorted(unknown)} in {self.path}")

    def number(self, key, default=None, required=False, positive=False, nonneg=False):
        v = self.get(key, default, required)
        if v is None:
            return None
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.source}: {self.path}.{key} must be a number, got {v!r}")
        if positive and v <= 0.0:
            raise ConfigError(f"{self.source}: {self.path}.{key} must be > 0, got {v}")
        if nonneg and v < 0.0:
            raise ConfigError(f"{self.source}: {self.path}.{key} must be >= 0, got {v}")
        return v

    def vector(self, key, default=None, required=False):
        v = self.get(key, default, required)
        if v is None:
            return None
        try:
            return np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.source}: {self.path}.{key} must be a number list")


@dataclass(frozen=True)
class ControlSettings:
    gains: ControllerGains
    rate_hz: float = 500.0
    min_shift_gain: float = 0.0
    dwell_time: float = 0.1

    @property
    def control_period(self) -> float:
        return 1.0 / self.rate_hz

    def policy(self) -> HysteresisPolicy:
        return HysteresisPolicy(self.min_shift_gain, self.dwell_time)


@dataclass(frozen=True)
class SimSettings:
    hold_time: float = 2.0
    physics_step: float = 1e-3
    integrator: str = "rk4"
    velocity_ceiling: float = 50.0
    tracking_tolerance: float = 0.1
    duration: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    start_q: np.ndarray
    start_qd: np.ndarray
    start_gears: np.ndarray
    goal_q: np.ndarray
    goal_qd: np.ndarray
    payload: float = 0.0
    dmax: float = 0.0

    def start_state(self) -> State:
        return State(self.start_q.copy(), self.start_qd.copy(), self.start_gears.copy(), 0.0)


@dataclass
class AppConfig:
    """Everything one experiment needs, parsed and validated."""

    model: RobotModel
    bank: ActuatorBank
    control: ControlSettings
    planner: dict
    sim: SimSettings
    scenario: Scenario
    source: str = "<config>"

    def planner_params(self, seed: int = 0, **overrides) -> PlannerParams:
        kw = dict(self.planner)
        kw.update(goal_q=self.scenario.goal_q, goal_qd=self.scenario.goal_qd, seed=seed)
        kw.update(overrides)
        return PlannerParams(**kw)

    def sim_config(self, duration: float, payload: float = 0.0, disturbance=None,
                   seed: int = 0, **overrides) -> SimConfig:
        kw = dict(
            duration=duration,
            physics_step=self.sim.physics_step,
            control_period=self.control.control_period,
            integrator=self.sim.integrator,
            payload_mass=payload,
            disturbance=disturbance,
            velocity_ceiling=self.sim.velocity_ceiling,
            tracking_tolerance=self.sim.tracking_tolerance,
            seed=seed,
        )
        kw.update(overrides)
        return SimConfig(**kw)

    def controller(self, kind: str, fixed_gears=None, dmax: Optional[float] = None,
                   enforce_speed_limit: bool = True):
        """Build a fresh controller instance of the requested kind.

        ct: computed torque with gears held fixed (defaults to the scenario's
        starting gears); rstar: computed torque with active gear selection;
        sliding: the robust variant (dmax defaults to the scenario's).
        """
        if kind == "passive":
            return PassiveController(self.bank, fixed_gears if fixed_gears is not None
                                     else self.scenario.start_gears)
        if kind == "ct":
            gears = fixed_gears if fixed_gears is not None else self.scenario.start_gears
            return ComputedTorqueController(
                self.model, self.bank, gains=self.control.gains,
                policy=self.control.policy(), fixed_gears=gears,
                enforce_speed_limit=enforce_speed_limit)
        if kind == "rstar":
            return ComputedTorqueController(
                self.model, self.bank, gains=self.control.gains,
                policy=self.control.policy(), fixed_gears=fixed_gears,
                enforce_speed_limit=enforce_speed_limit)
        if kind == "sliding":
            bound = self.scenario.dmax if dmax is None else dmax
            return SlidingModeController(
                self.model, self.bank, disturbance_bound=bound,
                gains=self.control.gains, policy=self.control.policy(),
                fixed_gears=fixed_gears, enforce_speed_limit=enforce_speed_limit)
        raise ConfigError(f"unknown controller kind {kind!r} "
                          f"(choose from {CONTROLLER_KINDS + ('passive',)})")


def _parse_axis(value, path, source):
    if isinstance(value, str):
        if value not in _AXIS_SHORTHAND:
            raise ConfigError(f"{source}: {path} must be x, y, z, or a 3-vector, got {value!r}")
        return _AXIS_SHORTHAND[value]
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: {path} must be x, y, z, or a 3-vector")


def _parse_robot(sec: _Section) -> RobotModel:
    name = sec.get("name", "robot")
    gravity = sec.vector("gravity", default=[0.0, 0.0, -9.81])
    end_effector = sec.vector("end_effector", default=[0.0, 0.0, 0.0])
    links_raw = sec.get("links", required=True)
    if not isinstance(links_raw, list) or not links_raw:
        raise ConfigError(f"{sec.source}: robot.links must be a non-empty list")
    links = []
    for i, item in enumerate(links_raw):
        ls = _Section(item, f"robot.links[{i}]", sec.source)
        try:
            links.append(Link(
                mass=ls.number("mass", required=True, positive=True),
                com=ls.vector("com", required=True),
                offset=ls.vector("offset", default=[0.0, 0.0, 0.0]),
                axis=_parse_axis(ls.get("axis", required=True), ls.path + ".axis", sec.source),
                inertia=ls.get("inertia", 0.0),
                damping=ls.number("damping", default=0.0, nonneg=True),
            ))
        except ValueError as exc:
            raise ConfigError(f"{sec.source}: {ls.path}: {exc}") from exc
        ls.finish()
    sec.finish()
    try:
        return RobotModel(links=tuple(links), gravity=gravity,
                          end_effector=end_effector, name=name)
    except ValueError as exc:
        raise ConfigError(f"{sec.source}: robot: {exc}") from exc


def _parse_actuators(sec: _Section, n_dof: int) -> ActuatorBank:
    defaults = sec.section("defaults")
    base = {
        "inertia": defaults.number("inertia", default=2.5e-3),
        "damping": defaults.number("damping", default=1e-2),
        "torque_limit": defaults.number("torque_limit", default=3.0),
        "speed_limit": defaults.number("speed_limit", default=100.0),
        "gears": defaults.get("gears", [1.0, 10.0]),
    }
    defaults.finish()
    overrides = sec.get("axes", default=[])
    if overrides and len(overrides) != n_dof:
        raise ConfigError(f"{sec.source}: actuators.axes must list all {n_dof} axes")
    axes = []
    for i in range(n_dof):
        spec = dict(base)
        if overrides:
            ax = _Section(overrides[i], f"actuators.axes[{i}]", sec.source)
            for key in spec:
                v = ax.get(key)
                if v is not None:
                    spec[key] = v
            ax.finish()
        try:
            axes.append(AxisActuator(
                inertia=float(spec["inertia"]), damping=float(spec["damping"]),
                torque_limit=float(spec["torque_limit"]),
                speed_limit=float(spec["speed_limit"]),
                gears=tuple(float(g) for g in spec["gears"])))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{sec.source}: actuators.axes[{i}]: {exc}") from exc
    sec.finish()
    return ActuatorBank(axes=tuple(axes))


def _parse_control(sec: _Section, bank: ActuatorBank) -> ControlSettings:
    try:
        gains = ControllerGains(
            kp=sec.number("kp", default=50.0, positive=True),
            kd=sec.number("kd", default=15.0, positive=True),
            lam=sec.number("lam", default=5.0, positive=True),
            k_margin=sec.number("k_margin", default=1.2, positive=True),
            boundary_layer=sec.number("boundary_layer", default=0.1, nonneg=True),
            literal_reference_accel=bool(sec.get("literal_reference_accel", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"{sec.source}: controller: {exc}") from exc
    min_gain = sec.number("min_shift_gain", default=None, nonneg=True)
    if min_gain is None:
        min_gain = 0.02 * float(np.min(bank.torque_limits))
    settings = ControlSettings(
        gains=gains,
        rate_hz=sec.number("rate_hz", default=500.0, positive=True),
        min_shift_gain=min_gain,
        dwell_time=sec.number("dwell_time", default=0.1, nonneg=True),
    )
    sec.finish()
    return settings


_PLANNER_KEYS = {
    "tol_q": float, "tol_qd": float, "edge_duration": float, "substep": float,
    "max_nodes": int, "torque_levels": tuple, "gear_mode": str, "goal_bias": float,
    "q_weight": float, "qd_weight": float, "sample_qd_range": float,
    "velocity_ceiling": float, "enforce_speed_limit": bool,
}


def _parse_planner(sec: _Section) -> dict:
    out = {}
    for key, cast in _PLANNER_KEYS.items():
        v = sec.get(key)
        if v is None:
            continue
        try:
            if cast is tuple:
                out[key] = tuple(float(x) for x in v)
            else:
                out[key] = cast(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{sec.source}: planner.{key} has invalid value {v!r}")
    sec.finish()
    return out


def _parse_sim(sec: _Section) -> SimSettings:
    settings = SimSettings(
        hold_time=sec.number("hold_time", default=2.0, nonneg=True),
        physics_step=sec.number("physics_step", default=1e-3, positive=True),
        integrator=str(sec.get("integrator", "rk4")),
        velocity_ceiling=sec.number("velocity_ceiling", default=50.0, positive=True),
        tracking_tolerance=sec.number("tracking_tolerance", default=0.1, positive=True),
        duration=sec.number("duration", default=None, positive=True),
    )
    sec.finish()
    return settings


def _parse_scenario(sec: _Section, n_dof: int, bank: ActuatorBank) -> Scenario:
    def joint_vector(key, default):
        v = sec.vector(key, default=default)
        if v.shape != (n_dof,):
            raise ConfigError(f"{sec.source}: scenario.{key} must have {n_dof} entries")
        return v

    zeros = [0.0] * n_dof
    start_q = joint_vector("start_q", zeros)
    start_qd = joint_vector("start_qd", zeros)
    goal_q = joint_vector("goal_q", zeros)
    goal_qd = joint_vector("goal_qd", zeros)
    gears_raw = sec.get("start_gears", [0] * n_dof)
    try:
        start_gears = bank.validate_indices(np.asarray(gears_raw, dtype=int))
    except ValueError as exc:
        raise ConfigError(f"{sec.source}: scenario.start_gears: {exc}") from exc
    scenario = Scenario(
        start_q=start_q, start_qd=start_qd, start_gears=start_gears,
        goal_q=goal_q, goal_qd=goal_qd,
        payload=sec.number("payload", default=0.0, nonneg=True),
        dmax=sec.number("dmax", default=0.0, nonneg=True),
    )
    sec.finish()
    return scenario


def load_config(path) -> AppConfig:
    """Parse and validate a YAML experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from exc
    return parse_config(raw, source=str(path))


def parse_config(raw, source: str = "<config>") -> AppConfig:
    root = _Section(raw, "", source)
    model = _parse_robot(root.section("robot"))
    bank = _parse_actuators(root.section("actuators"), model.n_dof)
    if bank.n_axes != model.n_dof:
        raise ConfigError(f"{source}: actuator count {bank.n_axes} != robot DoF {model.n_dof}")
    control = _parse_control(root.section("controller"), bank)
    planner = _parse_planner(root.section("planner"))
    sim = _parse_sim(root.section("sim"))
    scenario = _parse_scenario(root.section("scenario"), model.n_dof, bank)
    root.finish()
    return AppConfig(model=model, bank=bank, control=control, planner=planner,
                     sim=sim, scenario=scenario, source=source)


def scenario_config_path(name: str) -> Path:
    """Resolve a registered scenario name to its packaged config file."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; registered: {sorted(SCENARIOS)}")
    ref = importlib.resources.files("vgasim.configs").joinpath(SCENARIOS[name])
    return Path(str(ref))


def load_scenario(name: str) -> AppConfig:
    return load_config(scenario_config_path(name))
