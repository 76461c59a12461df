"""Exception types shared across the package."""


class VgasimError(Exception):
    """Base class for all package errors."""


class ConfigError(VgasimError):
    """Invalid or unreadable configuration file."""


class NoFeasibleGearError(VgasimError):
    """Every gear option violates the rotor speed constraint on some axis."""


class KinematicSingularityError(VgasimError):
    """Task-space Jacobian is singular at the queried configuration."""


class PlanNotFoundError(VgasimError):
    """Planner exhausted its node budget without reaching the goal."""


class SimulationDivergedError(VgasimError):
    """Joint velocities exceeded the divergence ceiling during simulation.

    Carries the partial log so callers can inspect what happened.
    """

    def __init__(self, message, time=None, log=None):
        super().__init__(message)
        self.time = time
        self.log = log


class TrajectoryFormatError(VgasimError):
    """Trajectory file is malformed or has an unsupported version."""
