"""Actuator bank, joint state, and disturbance types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class AxisActuator:
    """Per-axis actuator: rotor inertia, viscous damping, limits, gear options.

    The gear set is an ordered list of strictly positive, strictly ascending
    ratios. A ratio R maps joint speed to rotor speed (w = R qd) and rotor
    torque to joint torque (scaled by R).
    """

    inertia: float
    damping: float
    torque_limit: float
    speed_limit: float
    gears: tuple[float, ...]

    def __post_init__(self):
        if self.inertia <= 0.0 or self.damping <= 0.0:
            raise ValueError("rotor inertia and damping must be strictly positive")
        if self.torque_limit <= 0.0 or self.speed_limit <= 0.0:
            raise ValueError("torque and speed limits must be strictly positive")
        gears = tuple(float(g) for g in self.gears)
        if not gears:
            raise ValueError("gear set must be non-empty")
        if any(g <= 0.0 for g in gears):
            raise ValueError("gear ratios must be strictly positive")
        if any(b <= a for a, b in zip(gears, gears[1:])):
            raise ValueError("gear set must be strictly ascending with no duplicates")
        object.__setattr__(self, "gears", gears)


@dataclass(frozen=True)
class ActuatorBank:
    """One actuator per joint axis."""

    axes: tuple[AxisActuator, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not self.axes:
            raise ValueError("actuator bank must have at least one axis")
        for name, values in (
            ("_inertia", [a.inertia for a in self.axes]),
            ("_damping", [a.damping for a in self.axes]),
            ("_torque_limits", [a.torque_limit for a in self.axes]),
            ("_speed_limits", [a.speed_limit for a in self.axes]),
        ):
            arr = np.array(values)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_axes(self) -> int:
        return len(self.axes)

    @property
    def inertia(self) -> np.ndarray:
        return self._inertia

    @property
    def damping(self) -> np.ndarray:
        return self._damping

    @property
    def torque_limits(self) -> np.ndarray:
        return self._torque_limits

    @property
    def speed_limits(self) -> np.ndarray:
        return self._speed_limits

    def gear_counts(self) -> np.ndarray:
        return np.array([len(a.gears) for a in self.axes])

    def validate_indices(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        if indices.shape != (self.n_axes,):
            raise ValueError(f"expected {self.n_axes} gear indices, got shape {indices.shape}")
        for i, (idx, axis) in enumerate(zip(indices, self.axes)):
            if not 0 <= idx < len(axis.gears):
                raise ValueError(f"gear index {idx} out of range for axis {i}")
        return indices

    def ratios(self, indices) -> np.ndarray:
        """Vector of engaged gear ratios for one index selection per axis."""
        indices = self.validate_indices(indices)
        return np.array([a.gears[i] for a, i in zip(self.axes, indices)])

    def ratio_matrix(self, indices) -> np.ndarray:
        """Diagonal gear-ratio matrix R for one index selection per axis."""
        return np.diag(self.ratios(indices))

    @staticmethod
    def uniform(n_axes: int, inertia: float, damping: float, torque_limit: float,
                speed_limit: float, gears) -> "ActuatorBank":
        axis = AxisActuator(inertia, damping, torque_limit, speed_limit, tuple(gears))
        return ActuatorBank(axes=(axis,) * n_axes)


@dataclass
class State:
    """Joint positions/velocities, engaged gear per axis, and the sim clock."""

    q: np.ndarray
    qd: np.ndarray
    gear_indices: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        self.gear_indices = np.asarray(self.gear_indices, dtype=int)

    def rotor_speeds(self, bank: ActuatorBank) -> np.ndarray:
        """w = R qd for the engaged gears."""
        return bank.ratios(self.gear_indices) * self.qd

    def copy(self) -> "State":
        return State(self.q.copy(), self.qd.copy(), self.gear_indices.copy(), self.t)


@dataclass(frozen=True)
class Disturbance:
    """Generalized joint disturbance force d(t, q, qd) with a declared bound.

    The declared bound is what a controller is told; it does not have to
    actually bound the signal (an underestimated bound is itself a scenario).
    """

    force: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    bound: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        bound = np.atleast_1d(np.asarray(self.bound, dtype=float))
        if np.any(bound < 0.0):
            raise ValueError("declared disturbance bound must be non-negative")
        object.__setattr__(self, "bound", bound)

    def __call__(self, t: float, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        return np.asarray(self.force(t, q, qd), dtype=float)


def no_disturbance(n: int) -> Disturbance:
    zero = np.zeros(n)
    return Disturbance(force=lambda t, q, qd: zero, bound=zero, label="none")


def constant_disturbance(d) -> Disturbance:
    d = np.atleast_1d(np.asarray(d, dtype=float))
    return Disturbance(force=lambda t, q, qd: d, bound=np.abs(d), label="constant")


def impulse_disturbance(n: int, axis: int, magnitude: float, start: float,
                        duration: float = 0.02) -> Disturbance:
    """Rectangular force pulse on one axis; momentum transfer = magnitude * duration."""
    def force(t, q, qd):
        d = np.zeros(n)
        if start <= t < start + duration:
            d[axis] = magnitude
        return d

    bound = np.zeros(n)
    bound[axis] = abs(magnitude)
    return Disturbance(force=force, bound=bound, label=f"impulse@{start:g}s")


def random_bounded_disturbance(n: int, bound, seed: int, hold: float = 0.05) -> Disturbance:
    """Piecewise-constant uniform noise in [-bound, bound], resampled every `hold` s.

    Deterministic: the sample for each hold window is derived from the window
    index, so evaluation order does not matter.
    """
    bound = np.broadcast_to(np.asarray(bound, dtype=float), (n,)).copy()

    def force(t, q, qd):
        window = max(0, int(np.floor(t / hold)))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(window,)))
        return rng.uniform(-bound, bound)

    return Disturbance(force=force, bound=bound, label=f"random(seed={seed})")
