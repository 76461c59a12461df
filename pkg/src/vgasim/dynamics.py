"""Coupled load/actuator dynamics through a diagonal gear-ratio matrix.

Sign conventions
----------------
The disturbance vector ``d`` is the generalized force pushing on the joints
(load side). Forward dynamics therefore adds ``+d``; inverse dynamics returns
the motor torque that realizes a desired acceleration while the environment
pushes with ``d``, so ``d`` enters with a minus sign there. The two compose to
an exact round trip.
"""

from __future__ import annotations

import numpy as np

from .actuator import ActuatorBank
from .errors import KinematicSingularityError
from .robot import RobotModel

_SINGULARITY_RCOND = 1e-10


def _ratio_vector(bank_or_n, R) -> np.ndarray:
    """Validate a gear-ratio matrix (or vector) and return its diagonal."""
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        r = R
    elif R.ndim == 2:
        if R.shape[0] != R.shape[1]:
            raise ValueError("gear-ratio matrix must be square")
        if np.any(R != np.diag(np.diag(R))):
            raise ValueError("gear-ratio matrix must be diagonal")
        r = np.diag(R).copy()
    else:
        raise ValueError("gear ratios must be a vector or a diagonal matrix")
    if np.any(r == 0.0) or not np.all(np.isfinite(r)):
        raise ValueError("gear-ratio matrix must be invertible (finite, nonzero diagonal)")
    return r


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Load-side mass matrix H(q)."""
    return model.mass_matrix(q)


def extrinsic_torque(model: RobotModel, qdd, qd, q) -> np.ndarray:
    """Joint forces from the load side: H qdd + C qd + D qd + g."""
    qd = np.asarray(qd, dtype=float)
    return model.rnea(q, qd, qdd) + model.joint_damping * qd


def intrinsic_torque(bank: ActuatorBank, qdd, qd) -> np.ndarray:
    """Actuator-side resistive terms I qdd + B qd, in joint coordinates.

    Gear scalings are applied where the coupled equations use them, not here.
    """
    qdd = np.asarray(qdd, dtype=float)
    qd = np.asarray(qd, dtype=float)
    return bank.inertia * qdd + bank.damping * qd


def inverse_dynamics(model: RobotModel, bank: ActuatorBank, R, qdd, qd, q, d=None) -> np.ndarray:
    """Motor torque realizing qdd: tau = R^-1 (tau_E - d) + R tau_I."""
    r = _ratio_vector(bank, R)
    tau_e = extrinsic_torque(model, qdd, qd, q)
    tau_i = intrinsic_torque(bank, qdd, qd)
    if d is not None:
        tau_e = tau_e - np.asarray(d, dtype=float)
    return tau_e / r + r * tau_i


def forward_dynamics(model: RobotModel, bank: ActuatorBank, R, tau, qd, q, d=None) -> np.ndarray:
    """Joint acceleration under motor torque tau and joint disturbance d.

    qdd = [H + R^T I R]^-1 (R^T tau - R^T B R qd - C qd - D qd - g + d)
    """
    r = _ratio_vector(bank, R)
    qd = np.asarray(qd, dtype=float)
    tau = np.asarray(tau, dtype=float)
    H = model.mass_matrix(q)
    M = H + np.diag(r * r * bank.inertia)
    rhs = r * tau - r * r * bank.damping * qd - model.bias_forces(q, qd) - model.joint_damping * qd
    if d is not None:
        rhs = rhs + np.asarray(d, dtype=float)
    return np.linalg.solve(M, rhs)


def effective_inertia(model: RobotModel, bank: ActuatorBank, R, q) -> np.ndarray:
    """H + R^T I R, the joint-space inertia including reflected rotors."""
    r = _ratio_vector(bank, R)
    return model.mass_matrix(q) + np.diag(r * r * bank.inertia)


def endpoint_inertia(model: RobotModel, bank: ActuatorBank, R, q) -> np.ndarray:
    """Task-space inertia M = J^-T [R^T I R + H] J^-1.

    Raises KinematicSingularityError when J(q) is (near-)singular.
    """
    J = model.task_jacobian(q)
    if np.linalg.matrix_rank(J, tol=None) < J.shape[0] or \
            1.0 / np.linalg.cond(J) < _SINGULARITY_RCOND:
        raise KinematicSingularityError(
            f"task Jacobian singular at q={np.array2string(np.asarray(q, dtype=float), precision=4)}")
    Jinv = np.linalg.inv(J)
    return Jinv.T @ effective_inertia(model, bank, R, q) @ Jinv


def acceleration_sensitivity(model: RobotModel, bank: ActuatorBank, R, q, d) -> np.ndarray:
    """Acceleration error induced by a joint disturbance:

    qdd_e = [H + R^T I R]^-1 d

    Larger gear ratios reflect more rotor inertia to the load side and shrink
    this error.
    """
    d = np.asarray(d, dtype=float)
    return np.linalg.solve(effective_inertia(model, bank, R, q), d)


def total_energy(model: RobotModel, bank: ActuatorBank, R, q, qd) -> float:
    """Mechanical energy: load kinetic + reflected rotor kinetic + potential."""
    r = _ratio_vector(bank, R)
    qd = np.asarray(qd, dtype=float)
    rotor = 0.5 * np.sum(bank.inertia * (r * qd) ** 2)
    return model.kinetic_energy(q, qd) + rotor + model.potential_energy(q)
