"""Closed-loop trajectory-following controllers with active gear selection.

Two feedback laws, both emitting a motor torque and gear set-points per cycle:

* Computed-torque: feedback-linearizing torque for a corrected reference
  acceleration, gears picked to minimize that torque.
* Sliding-mode: the computed torque evaluated on the sliding reference, plus a
  discontinuous term (smoothed over a boundary layer) sized from a declared
  disturbance bound; gears picked with the bound-inflated objective.

Gear proposals pass through the hysteresis filter; commanded torques saturate
at the actuator limits last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .actuator import ActuatorBank, State
from .dynamics import effective_inertia, extrinsic_torque, intrinsic_torque
from .gearopt import (GearObjectiveWeights, HysteresisPolicy,
                      effective_extrinsic, hysteresis_filter, select_gears)
from .robot import RobotModel


@dataclass(frozen=True)
class ReferenceSample:
    """One reference point: desired position, velocity, acceleration at time t."""

    q_d: np.ndarray
    qd_d: np.ndarray
    qdd_d: np.ndarray
    t: float

    def __post_init__(self):
        for name in ("q_d", "qd_d", "qdd_d"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"reference {name} must be finite")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ControllerGains:
    """Feedback gains shared by both controllers.

    kp/kd drive the computed-torque acceleration correction; lam is the
    sliding-surface slope, k_margin the multiplier on the Eq.-type lower bound
    of the discontinuous gain, boundary_layer the sat() width (0 recovers pure
    sign). literal_reference_accel switches the sliding reference acceleration
    to the literal qdd_d - qd_e form for comparison runs.
    """

    kp: float = 50.0
    kd: float = 15.0
    lam: float = 5.0
    k_margin: float = 1.2
    boundary_layer: float = 0.1
    literal_reference_accel: bool = False

    def __post_init__(self):
        if self.kp <= 0.0 or self.kd <= 0.0 or self.lam <= 0.0 or self.k_margin <= 0.0:
            raise ValueError("gains must be strictly positive")
        if self.boundary_layer < 0.0:
            raise ValueError("boundary layer width must be non-negative")


@dataclass(frozen=True)
class ControlCommand:
    """Controller output for one cycle: saturated torque, gears, diagnostics."""

    torque: np.ndarray
    gear_indices: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def saturate(tau: np.ndarray, limits: np.ndarray) -> np.ndarray:
    return np.clip(tau, -limits, limits)


class ComputedTorqueController:
    """Computed-torque tracking with per-cycle optimal gear selection.

    With fixed_gears set, gear optimization is bypassed and the given indices
    are held for the whole run (the fixed-gear baseline of the benchmark).
    Owns its hysteresis state: one instance per control loop.
    """

    name = "rstar"

    def __init__(self, model: RobotModel, bank: ActuatorBank,
                 gains: Optional[ControllerGains] = None,
                 weights: Optional[GearObjectiveWeights] = None,
                 policy: Optional[HysteresisPolicy] = None,
                 fixed_gears=None,
                 enforce_speed_limit: bool = True):
        self.model = model
        self.bank = bank
        self.gains = gains or ControllerGains()
        self.weights = weights or GearObjectiveWeights()
        self.policy = policy or HysteresisPolicy()
        self.policy.reset(bank.n_axes)
        self.fixed_gears = None if fixed_gears is None else bank.validate_indices(fixed_gears)
        self.enforce_speed_limit = enforce_speed_limit

    def reference_acceleration(self, state: State, ref: ReferenceSample) -> np.ndarray:
        g = self.gains
        return ref.qdd_d + g.kd * (ref.qd_d - state.qd) + g.kp * (ref.q_d - state.q)

    def _sliding_variable(self, state: State, ref: ReferenceSample):
        return None

    def _robust_term(self, state: State, ratios: np.ndarray, s) -> np.ndarray:
        return np.zeros(self.bank.n_axes)

    def step(self, state: State, ref: ReferenceSample) -> ControlCommand:
        qdd_r = self.reference_acceleration(state, ref)
        s = self._sliding_variable(state, ref)

        if self.fixed_gears is not None:
            gears = self.fixed_gears
            selection = None
        else:
            selection = select_gears(self.model, self.bank, state.q, state.qd, qdd_r,
                                     weights=self.weights, s=s,
                                     current=state.gear_indices,
                                     enforce_speed_limit=self.enforce_speed_limit)
            tau_current = _candidate_torque(self.model, self.bank, state, qdd_r,
                                            self.weights, s, state.gear_indices)
            gears = hysteresis_filter(selection.indices, state.gear_indices,
                                      selection.torque, tau_current,
                                      self.policy, state.t)

        r = self.bank.ratios(gears)
        tau_e = extrinsic_torque(self.model, qdd_r, state.qd, state.q)
        tau_i = intrinsic_torque(self.bank, qdd_r, state.qd)
        tau = tau_e / r + r * tau_i + self._robust_term(state, r, s)
        tau_sat = saturate(tau, self.bank.torque_limits)

        diag = {"qdd_r": qdd_r, "tau_e": tau_e, "tau_i": tau_i,
                "tau_unsaturated": tau}
        if s is not None:
            diag["s"] = s
        if selection is not None:
            diag["proposed"] = selection.indices
            diag["candidate_cost"] = selection.cost
        return ControlCommand(torque=tau_sat, gear_indices=gears, diagnostics=diag)


class SlidingModeController(ComputedTorqueController):
    """Sliding-mode variant robust to bounded disturbances.

    The discontinuous gain follows G = [H + R^T I R] diag(k) with k set
    k_margin times above the worst-case acceleration error the declared bound
    can produce, recomputed every cycle from the current H and engaged gears.
    The switching term is smoothed with sat(s / boundary_layer).
    """

    name = "sliding"

    def __init__(self, model: RobotModel, bank: ActuatorBank,
                 disturbance_bound,
                 gains: Optional[ControllerGains] = None,
                 weights: Optional[GearObjectiveWeights] = None,
                 policy: Optional[HysteresisPolicy] = None,
                 fixed_gears=None,
                 enforce_speed_limit: bool = True):
        bound = np.broadcast_to(np.asarray(disturbance_bound, dtype=float),
                                (bank.n_axes,)).copy()
        if np.any(bound < 0.0):
            raise ValueError("disturbance bound must be non-negative")
        weights = weights or GearObjectiveWeights()
        if weights.disturbance_bound is None:
            weights = GearObjectiveWeights(
                alpha=weights.alpha,
                desired_endpoint_inertia=weights.desired_endpoint_inertia,
                disturbance_bound=bound)
        super().__init__(model, bank, gains=gains, weights=weights, policy=policy,
                         fixed_gears=fixed_gears, enforce_speed_limit=enforce_speed_limit)
        self.disturbance_bound = bound

    def reference_acceleration(self, state: State, ref: ReferenceSample) -> np.ndarray:
        qd_e = state.qd - ref.qd_d
        if self.gains.literal_reference_accel:
            return ref.qdd_d - qd_e
        return ref.qdd_d - self.gains.lam * qd_e

    def _sliding_variable(self, state: State, ref: ReferenceSample) -> np.ndarray:
        q_e = state.q - ref.q_d
        qd_e = state.qd - ref.qd_d
        return qd_e + self.gains.lam * q_e

    def discontinuous_gain(self, q, ratios: np.ndarray) -> np.ndarray:
        """G = [H + R^T I R] diag(k), k_i = k_margin * sum_j |M^-1_ij| dmax_j."""
        M = effective_inertia(self.model, self.bank, ratios, q)
        k = self.gains.k_margin * (np.abs(np.linalg.inv(M)) @ self.disturbance_bound)
        return M @ np.diag(k), k

    def _robust_term(self, state: State, ratios: np.ndarray, s) -> np.ndarray:
        G, k = self.discontinuous_gain(state.q, ratios)
        self._last_gain = k
        return -(G @ _sat(s, self.gains.boundary_layer)) / ratios

    def step(self, state: State, ref: ReferenceSample) -> ControlCommand:
        cmd = super().step(state, ref)
        cmd.diagnostics["k"] = getattr(self, "_last_gain", None)
        return cmd


def _sat(s: np.ndarray, width: float) -> np.ndarray:
    """Boundary-layer-smoothed sign: clip(s/width, -1, 1); width 0 is pure sign."""
    if width == 0.0:
        return np.sign(s)
    return np.clip(s / width, -1.0, 1.0)


def _candidate_torque(model, bank, state: State, qdd_r, weights, s, indices) -> np.ndarray:
    """Objective torque for a given gear choice at the same state and qdd_r."""
    tau_e = extrinsic_torque(model, qdd_r, state.qd, state.q)
    tau_i = intrinsic_torque(bank, qdd_r, state.qd)
    numer = effective_extrinsic(tau_e, weights.disturbance_bound, s)
    r = bank.ratios(indices)
    return numer / r + r * tau_i


class PassiveController:
    """Zero torque, fixed gears: free evolution under the engaged ratio.

    Used for phase-portrait data and energy audits.
    """

    name = "passive"

    def __init__(self, bank: ActuatorBank, fixed_gears):
        self.bank = bank
        self.fixed_gears = bank.validate_indices(fixed_gears)
        self._zero = np.zeros(bank.n_axes)

    def step(self, state: State, ref: ReferenceSample) -> ControlCommand:
        return ControlCommand(torque=self._zero, gear_indices=self.fixed_gears)


# reference interpolation --------------------------------------------------

class TrajectoryReference:
    """Random-access interpolation over planner samples.

    Positions and velocities interpolate linearly, accelerations are held from
    the left sample (zero-order hold); queries past the end return the final
    sample (set-point hold).
    """

    def __init__(self, times, q, qd, qdd):
        times = np.asarray(times, dtype=float)
        if times.size == 0:
            raise ValueError("trajectory must have at least one sample")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        self.times = times
        self.q = np.atleast_2d(np.asarray(q, dtype=float))
        self.qd = np.atleast_2d(np.asarray(qd, dtype=float))
        self.qdd = np.atleast_2d(np.asarray(qdd, dtype=float))

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def sample(self, t: float) -> ReferenceSample:
        times = self.times
        if t <= times[0]:
            return ReferenceSample(self.q[0], self.qd[0], self.qdd[0], t)
        if t == times[-1]:
            return ReferenceSample(self.q[-1], self.qd[-1], self.qdd[-1], t)
        if t > times[-1]:
            # hold the final position as a set-point
            return ReferenceSample(self.q[-1], np.zeros_like(self.qd[-1]),
                                   np.zeros_like(self.qdd[-1]), t)
        k = int(np.searchsorted(times, t, side="right") - 1)
        t0, t1 = times[k], times[k + 1]
        a = (t - t0) / (t1 - t0)
        return ReferenceSample(
            q_d=(1.0 - a) * self.q[k] + a * self.q[k + 1],
            qd_d=(1.0 - a) * self.qd[k] + a * self.qd[k + 1],
            qdd_d=self.qdd[k],
            t=t,
        )


def run_reference(trajectory, rate_hz: float = 500.0,
                  duration: Optional[float] = None) -> Iterator[ReferenceSample]:
    """Stream reference samples at the control rate.

    `trajectory` is anything with times/q/qd/qdd arrays (a planner Trajectory)
    or a TrajectoryReference. After the last sample the final position is held;
    the stream stops at `duration` (default: the trajectory end).
    """
    ref = trajectory if isinstance(trajectory, TrajectoryReference) else \
        TrajectoryReference(trajectory.times, trajectory.q, trajectory.qd, trajectory.qdd)
    end = ref.duration if duration is None else duration
    dt = 1.0 / rate_hz
    n_steps = int(round(end * rate_hz))
    for k in range(n_steps + 1):
        yield ref.sample(k * dt)
