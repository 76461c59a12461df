"""Simulation, control, and planning for robots with variable gear-ratio actuators."""

from .actuator import ActuatorBank, AxisActuator, Disturbance, State
from .robot import Link, RobotModel

__version__ = "0.1.0"

__all__ = [
    "ActuatorBank",
    "AxisActuator",
    "Disturbance",
    "Link",
    "RobotModel",
    "State",
    "__version__",
]
