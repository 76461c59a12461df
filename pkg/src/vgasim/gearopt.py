"""Gear-ratio selection minimizing motor torque, plus the shift-hysteresis filter.

The continuous optimum per axis is R* = sqrt(|tau_E / tau_I|). With a discrete
gear set the selection enumerates the options: per-axis independently when the
objective is pure torque, over the full cross-product when an end-point
inertia penalty couples the axes. Gears whose rotor speed would exceed the
limit are excluded. An expected disturbance bound inflates the extrinsic
numerator so large uncertainty drives the selection toward large ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .actuator import ActuatorBank
from .dynamics import endpoint_inertia, extrinsic_torque, intrinsic_torque
from .errors import NoFeasibleGearError
from .robot import RobotModel

#: R* when the intrinsic torque vanishes but the extrinsic does not: any
#: finite ratio is beaten by a larger one, so pick the largest feasible gear.
UNBOUNDED = math.inf

#: R* when both torques vanish: every ratio costs the same.
INDIFFERENT = math.nan


def optimal_ratio_continuous(tau_e: float, tau_i: float) -> float:
    """Analytic per-axis optimum R* = sqrt(|tau_e / tau_i|).

    Returns UNBOUNDED (+inf) when tau_i == 0 with tau_e != 0, and INDIFFERENT
    (nan) when both are zero.
    """
    if tau_i == 0.0:
        return INDIFFERENT if tau_e == 0.0 else UNBOUNDED
    return math.sqrt(abs(tau_e / tau_i))


@dataclass(frozen=True)
class GearObjectiveWeights:
    """Objective shaping for the gear selection.

    alpha weighs an end-point inertia mismatch ||M_d - M||_F against the
    squared torque (alpha = 0: pure torque minimization). disturbance_bound is
    the expected per-axis |d|_max that inflates the extrinsic torque when a
    sliding variable is supplied.
    """

    alpha: float = 0.0
    desired_endpoint_inertia: Optional[np.ndarray] = None
    disturbance_bound: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        if self.desired_endpoint_inertia is not None:
            object.__setattr__(self, "desired_endpoint_inertia",
                               np.asarray(self.desired_endpoint_inertia, dtype=float))
        if self.disturbance_bound is not None:
            bound = np.atleast_1d(np.asarray(self.disturbance_bound, dtype=float))
            if np.any(bound < 0.0):
                raise ValueError("disturbance bound must be non-negative")
            object.__setattr__(self, "disturbance_bound", bound)
        if self.alpha > 0.0 and self.desired_endpoint_inertia is None:
            raise ValueError("alpha > 0 requires a desired end-point inertia")


@dataclass(frozen=True)
class GearSelection:
    """Result of a selection: indices per axis and the objective torque."""

    indices: np.ndarray
    torque: np.ndarray
    cost: float


def effective_extrinsic(tau_e: np.ndarray, bound: Optional[np.ndarray],
                        s: Optional[np.ndarray]) -> np.ndarray:
    """Extrinsic torque inflated by the expected disturbance bound.

    The inflation is worst-case aligned with the extrinsic torque, gated on the
    sliding variable: axes sitting exactly on the sliding surface (s_i == 0)
    get no inflation, and when tau_e_i == 0 the inflation takes the sign of
    s_i. This keeps the selected ratio monotone in the bound.
    """
    if bound is None or s is None:
        return tau_e
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = tau_e.copy()
    for i in range(out.shape[0]):
        if s[i] == 0.0 or bound[i] == 0.0:
            continue
        direction = np.sign(out[i]) if out[i] != 0.0 else np.sign(s[i])
        out[i] = out[i] + bound[i] * direction
    return out


def _feasible_gears(axis_gears, qd_i: float, w_max: float, enforce: bool):
    if not enforce:
        return list(range(len(axis_gears)))
    return [g for g, r in enumerate(axis_gears) if abs(r * qd_i) <= w_max]


def select_gears(model: RobotModel, bank: ActuatorBank, q, qd, qdd_r,
                 weights: Optional[GearObjectiveWeights] = None,
                 s=None, current=None, enforce_speed_limit: bool = True) -> GearSelection:
    """Pick the gear indices minimizing the instantaneous motor torque objective.

    Candidate motor torque per axis for ratio r: n_i / r + r * tau_I_i, where
    n_i is the (possibly disturbance-inflated) extrinsic torque. Ties keep the
    currently engaged gear when given, then prefer the smaller ratio.

    Raises NoFeasibleGearError if every gear violates the rotor speed limit on
    some axis.
    """
    weights = weights or GearObjectiveWeights()
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd_r = np.asarray(qdd_r, dtype=float)
    n = bank.n_axes

    tau_e = extrinsic_torque(model, qdd_r, qd, q)
    tau_i = intrinsic_torque(bank, qdd_r, qd)
    numer = effective_extrinsic(tau_e, weights.disturbance_bound, s)

    if current is not None:
        current = bank.validate_indices(current)

    feasible = []
    for i, axis in enumerate(bank.axes):
        opts = _feasible_gears(axis.gears, qd[i], axis.speed_limit, enforce_speed_limit)
        if not opts:
            raise NoFeasibleGearError(
                f"axis {i}: every gear exceeds the rotor speed limit at qd={qd[i]:.3f} rad/s")
        feasible.append(opts)

    def candidate_torque(i: int, g: int) -> float:
        r = bank.axes[i].gears[g]
        return numer[i] / r + r * tau_i[i]

    if weights.alpha == 0.0:
        indices = np.empty(n, dtype=int)
        torque = np.empty(n)
        total = 0.0
        for i in range(n):
            best_g, best_tau, best_cost = _argmin_axis(
                feasible[i], lambda g: candidate_torque(i, g),
                None if current is None else int(current[i]))
            indices[i] = best_g
            torque[i] = best_tau
            total += best_cost
        return GearSelection(indices=indices, torque=torque, cost=total)

    # alpha > 0 couples axes through the end-point inertia: enumerate combos
    best = None
    current_tuple = None if current is None else tuple(int(c) for c in current)
    for combo in product(*feasible):
        taus = np.array([candidate_torque(i, g) for i, g in enumerate(combo)])
        M = endpoint_inertia(model, bank, bank.ratios(np.array(combo)), q)
        mismatch = np.linalg.norm(weights.desired_endpoint_inertia - M, ord="fro")
        cost = float(taus @ taus) + weights.alpha * mismatch
        key = (cost, 0 if combo == current_tuple else 1, combo)
        if best is None or key < best[0]:
            best = (key, np.array(combo, dtype=int), taus)
    key, indices, taus = best
    return GearSelection(indices=indices, torque=taus, cost=key[0])


def _argmin_axis(options, torque_of, current_g):
    """Per-axis argmin on squared torque; ties keep current, then smaller ratio."""
    best = None
    for g in options:
        tau = torque_of(g)
        cost = tau * tau
        key = (cost, 0 if g == current_g else 1, g)
        if best is None or key < best[0]:
            best = (key, g, tau, cost)
    _, g, tau, cost = best
    return g, tau, cost


@dataclass
class HysteresisPolicy:
    """Shift suppression: a gear change must buy at least min_torque_gain of
    per-axis torque reduction and respect a per-axis dwell time.

    Carries the last-shift timestamps, so use one instance per control loop.
    """

    min_torque_gain: float = 0.0
    dwell_time: float = 0.0
    last_shift: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        if self.min_torque_gain < 0.0 or self.dwell_time < 0.0:
            raise ValueError("hysteresis thresholds must be non-negative")
        self.last_shift = np.asarray(self.last_shift, dtype=float)

    def reset(self, n_axes: int):
        self.last_shift = np.full(n_axes, -np.inf)

    def _ensure(self, n_axes: int):
        if self.last_shift.shape != (n_axes,):
            self.reset(n_axes)


def hysteresis_filter(proposed, current, tau_proposed, tau_current,
                      policy: HysteresisPolicy, now: float) -> np.ndarray:
    """Accept or veto proposed gear changes axis by axis.

    Both torque vectors must be computed at the same state and reference
    acceleration. An axis shifts only if |tau_current| - |tau_proposed| >
    min_torque_gain and at least dwell_time has elapsed since its last shift;
    accepted shifts update the timestamp.
    """
    proposed = np.asarray(proposed, dtype=int)
    current = np.asarray(current, dtype=int)
    tau_proposed = np.asarray(tau_proposed, dtype=float)
    tau_current = np.asarray(tau_current, dtype=float)
    n = proposed.shape[0]
    policy._ensure(n)

    final = current.copy()
    for i in range(n):
        if proposed[i] == current[i]:
            continue
        gain = abs(tau_current[i]) - abs(tau_proposed[i])
        # strict threshold; a zero threshold never vetoes (filter is the identity)
        if policy.min_torque_gain > 0.0 and gain <= policy.min_torque_gain:
            continue
        if now - policy.last_shift[i] < policy.dwell_time:
            continue
        final[i] = proposed[i]
        policy.last_shift[i] = now
    return final
