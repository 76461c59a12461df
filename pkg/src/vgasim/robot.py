"""Serial-chain rigid-body model.

A robot is a chain of links connected by revolute joints. Link frames sit at
their joint; frame i is reached from frame i-1 by a fixed translation
(``offset``, expressed in the parent frame) followed by a rotation of q_i about
``axis`` (unit vector, invariant under its own rotation). All quantities are SI.

The chain algorithms work in world coordinates:

* ``rnea(q, qd, qdd)`` - recursive Newton-Euler, returns H qdd + C qd + g.
* ``mass_matrix(q)``   - composite-rigid-body accumulation, returns H.
* ``coriolis_matrix(q, qd)`` - Christoffel-symbol C built from the mass-matrix
  gradient, so x^T (Hdot - 2C) x vanishes identically.

The inner loops run on plain Python tuples instead of numpy arrays: these are
3-vectors and 3x3 matrices, where numpy's per-call overhead is ~10x the
arithmetic. The simulator and planner call rnea tens of millions of times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_GRAD_STEP = 1e-6
_EYE3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


# tuple-math kernels ------------------------------------------------------

def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def _add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _scale(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _matvec(m, v):
    return (m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2])


def _matmul(a, b):
    return tuple(
        tuple(a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j] for j in range(3))
        for i in range(3)
    )


def _mat_add(a, b):
    return tuple(tuple(a[i][j] + b[i][j] for j in range(3)) for i in range(3))


def _rotate_tensor(rot, tensor):
    """R I R^T for 3x3 tuples."""
    ri = _matmul(rot, tensor)
    return tuple(
        tuple(ri[i][0] * rot[j][0] + ri[i][1] * rot[j][1] + ri[i][2] * rot[j][2] for j in range(3))
        for i in range(3)
    )


def _axis_rotation(axis, angle):
    """Rodrigues rotation about a unit axis, as a 3x3 tuple."""
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    k = 1.0 - c
    return ((c + x * x * k, x * y * k - z * s, x * z * k + y * s),
            (y * x * k + z * s, c + y * y * k, y * z * k - x * s),
            (z * x * k - y * s, z * y * k + x * s, c + z * z * k))


def _parallel_axis_t(mass, d):
    """Inertia shift (tuple form) of a body displaced by d from the reference point."""
    dd = _dot(d, d)
    return tuple(
        tuple(mass * ((dd if i == j else 0.0) - d[i] * d[j]) for j in range(3))
        for i in range(3)
    )


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("joint axis must be a nonzero vector")
    return v / n


def _inertia_tensor(value) -> np.ndarray:
    """Accept a scalar (isotropic), a length-3 diagonal, or a full 3x3 tensor."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        tensor = float(arr) * np.eye(3)
    elif arr.shape == (3,):
        tensor = np.diag(arr)
    elif arr.shape == (3, 3):
        tensor = arr.copy()
    else:
        raise ValueError(f"inertia must be scalar, length-3, or 3x3, got shape {arr.shape}")
    if np.any(np.diag(tensor) < 0.0):
        raise ValueError("rotational inertia must be non-negative")
    return tensor


@dataclass(frozen=True)
class Link:
    """One link of the chain.

    offset: position of this link's joint in the parent link frame [m]
    axis:   revolute joint axis, unit vector in the link frame
    com:    center of mass in the link frame [m]
    mass:   [kg], strictly positive
    inertia: rotational inertia about the COM, link frame [kg m^2]
    damping: viscous joint damping [N m s/rad]
    """

    mass: float
    com: np.ndarray
    offset: np.ndarray
    axis: np.ndarray
    inertia: np.ndarray
    damping: float = 0.0

    def __post_init__(self):
        if self.mass <= 0.0:
            raise ValueError("link mass must be strictly positive")
        if self.damping < 0.0:
            raise ValueError("joint damping must be non-negative")
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        object.__setattr__(self, "axis", _unit(self.axis))
        object.__setattr__(self, "inertia", _inertia_tensor(self.inertia))


class _LinkParams:
    """Tuple-form link constants for the hot loops."""

    __slots__ = ("mass", "com", "offset", "axis", "inertia", "iso")

    def __init__(self, link: Link):
        self.mass = float(link.mass)
        self.com = tuple(link.com)
        self.offset = tuple(link.offset)
        self.axis = tuple(link.axis)
        self.inertia = tuple(tuple(row) for row in link.inertia)
        iso = link.inertia[0, 0]
        if np.allclose(link.inertia, iso * np.eye(3), atol=0.0):
            self.iso = float(iso)  # R I R^T == I, and w x (I w) == 0
        else:
            self.iso = None


@dataclass(frozen=True)
class RobotModel:
    """Kinematic and inertial description of an n-DoF serial chain.

    Immutable after construction; all methods are pure functions of their
    inputs, so instances are safe to share across threads.
    """

    links: tuple[Link, ...]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    end_effector: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "robot"

    def __post_init__(self):
        if not self.links:
            raise ValueError("robot needs at least one link")
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float))
        object.__setattr__(self, "end_effector", np.asarray(self.end_effector, dtype=float))
        object.__setattr__(self, "_params", tuple(_LinkParams(lk) for lk in self.links))
        damping = np.array([lk.damping for lk in self.links])
        damping.setflags(write=False)
        object.__setattr__(self, "_damping", damping)

    @property
    def n_dof(self) -> int:
        return len(self.links)

    @property
    def joint_damping(self) -> np.ndarray:
        """Diagonal of the joint damping matrix D."""
        return self._damping

    # kinematics ---------------------------------------------------------

    def _fk(self, q):
        """Per-link world rotation, joint origin, world axis, and world COM (tuples)."""
        rot = _EYE3
        origin = (0.0, 0.0, 0.0)
        rots, origins, axes, coms = [], [], [], []
        for lk, qi in zip(self._params, q):
            origin = _add(origin, _matvec(rot, lk.offset))
            axes.append(_matvec(rot, lk.axis))
            rot = _matmul(rot, _axis_rotation(lk.axis, qi))
            rots.append(rot)
            origins.append(origin)
            coms.append(_add(origin, _matvec(rot, lk.com)))
        return rots, origins, axes, coms

    def end_effector_position(self, q) -> np.ndarray:
        rots, origins, _, _ = self._fk(q)
        return np.array(_add(origins[-1], _matvec(rots[-1], tuple(self.end_effector))))

    def end_effector_jacobian(self, q) -> np.ndarray:
        """3 x n position Jacobian of the end-effector point."""
        rots, origins, axes, _ = self._fk(q)
        tip = _add(origins[-1], _matvec(rots[-1], tuple(self.end_effector)))
        cols = [_cross(a, _sub(tip, o)) for a, o in zip(axes, origins)]
        return np.array(cols).T

    def task_jacobian(self, q) -> np.ndarray:
        """Square task-space Jacobian.

        1-DoF chains use the joint coordinate itself as the task coordinate
        (J = 1); 3-DoF chains use the end-effector position Jacobian. Other
        sizes have no canonical square task map and raise.
        """
        if self.n_dof == 1:
            return np.eye(1)
        if self.n_dof == 3:
            return self.end_effector_jacobian(q)
        raise ValueError(f"no square task Jacobian defined for a {self.n_dof}-DoF chain")

    # dynamics -----------------------------------------------------------

    def rnea(self, q, qd, qdd) -> np.ndarray:
        """Inverse dynamics of the load side: H qdd + C qd + g.

        Joint damping is not included; add D qd separately.
        """
        n = len(self._params)
        rot = _EYE3
        origin = (0.0, 0.0, 0.0)
        w = (0.0, 0.0, 0.0)
        al = (0.0, 0.0, 0.0)
        gx, gy, gz = self.gravity
        ao = (-gx, -gy, -gz)  # gravity folded into the base acceleration

        axes = [None] * n
        rs = [None] * n
        origins = [None] * n
        Fs = [None] * n
        Ns = [None] * n
        for i, lk in enumerate(self._params):
            d = _matvec(rot, lk.offset)
            ao = _add(_add(ao, _cross(al, d)), _cross(w, _cross(w, d)))
            origin = _add(origin, d)
            axis_w = _matvec(rot, lk.axis)
            rot = _matmul(rot, _axis_rotation(lk.axis, float(q[i])))
            wd = _scale(axis_w, float(qd[i]))
            al = _add(_add(al, _scale(axis_w, float(qdd[i]))), _cross(w, wd))
            w = _add(w, wd)
            r = _matvec(rot, lk.com)
            ac = _add(_add(ao, _cross(al, r)), _cross(w, _cross(w, r)))
            axes[i] = axis_w
            rs[i] = r
            origins[i] = origin
            Fs[i] = _scale(ac, lk.mass)
            if lk.iso is not None:
                Ns[i] = _scale(al, lk.iso)
            else:
                iw = _rotate_tensor(rot, lk.inertia)
                Ns[i] = _add(_matvec(iw, al), _cross(w, _matvec(iw, w)))

        tau = np.empty(n)
        f_child = (0.0, 0.0, 0.0)
        n_child = (0.0, 0.0, 0.0)
        o_child = origins[-1]
        for i in range(n - 1, -1, -1):
            f = _add(Fs[i], f_child)
            nm = _add(_add(_add(Ns[i], _cross(rs[i], Fs[i])), n_child),
                      _cross(_sub(o_child, origins[i]), f_child))
            tau[i] = _dot(axes[i], nm)
            f_child, n_child, o_child = f, nm, origins[i]
        return tau

    def mass_matrix(self, q) -> np.ndarray:
        """Joint-space mass matrix H(q), symmetric positive-definite."""
        n = len(self._params)
        rots, origins, axes, coms = self._fk(q)

        H = np.empty((n, n))
        # composite body seen by joint i: links i..n-1, accumulated tip-to-base
        m_c = 0.0
        mc_c = (0.0, 0.0, 0.0)
        c_c = (0.0, 0.0, 0.0)
        I_c = None
        for i in range(n - 1, -1, -1):
            lk = self._params[i]
            m_new = m_c + lk.mass
            mc_new = _add(mc_c, _scale(coms[i], lk.mass))
            c_new = _scale(mc_new, 1.0 / m_new)
            if lk.iso is not None:
                iw = ((lk.iso, 0.0, 0.0), (0.0, lk.iso, 0.0), (0.0, 0.0, lk.iso))
            else:
                iw = _rotate_tensor(rots[i], lk.inertia)
            I_new = _mat_add(iw, _parallel_axis_t(lk.mass, _sub(coms[i], c_new)))
            if m_c > 0.0:
                I_new = _mat_add(I_new, _mat_add(I_c, _parallel_axis_t(m_c, _sub(c_c, c_new))))
            m_c, mc_c, c_c, I_c = m_new, mc_new, c_new, I_new

            # unit angular acceleration about (origin_i, axis_i)
            lever = _sub(c_c, origins[i])
            F = _scale(_cross(axes[i], lever), m_c)
            N = _add(_matvec(I_c, axes[i]), _cross(lever, F))
            H[i, i] = _dot(axes[i], N)
            for j in range(i - 1, -1, -1):
                H[j, i] = _dot(axes[j], _add(N, _cross(_sub(origins[i], origins[j]), F)))
                H[i, j] = H[j, i]
        return H

    def bias_forces(self, q, qd) -> np.ndarray:
        """C(q, qd) qd + g(q), the velocity and gravity terms of the load EoM."""
        return self.rnea(q, qd, (0.0,) * self.n_dof)

    def gravity_forces(self, q) -> np.ndarray:
        z = (0.0,) * self.n_dof
        return self.rnea(q, z, z)

    def mass_matrix_gradient(self, q, step: float = _GRAD_STEP) -> np.ndarray:
        """dH/dq as an (n, n, n) array, central differences: out[k] = dH/dq_k."""
        q = np.asarray(q, dtype=float)
        n = self.n_dof
        grad = np.empty((n, n, n))
        for k in range(n):
            dq = np.zeros(n)
            dq[k] = step
            grad[k] = (self.mass_matrix(q + dq) - self.mass_matrix(q - dq)) / (2.0 * step)
        return grad

    def coriolis_matrix(self, q, qd) -> np.ndarray:
        """Christoffel-symbol Coriolis/centrifugal matrix C(q, qd).

        Built from the mass-matrix gradient so that Hdot - 2C is exactly
        skew-symmetric when Hdot is assembled from the same gradient.
        """
        qd = np.asarray(qd, dtype=float)
        dH = self.mass_matrix_gradient(q)
        # C_ij = 1/2 sum_k (dH_ij/dq_k + dH_ik/dq_j - dH_jk/dq_i) qd_k
        term1 = np.einsum("kij,k->ij", dH, qd)
        term2 = np.einsum("jik,k->ij", dH, qd)
        term3 = np.einsum("ijk,k->ij", dH, qd)
        return 0.5 * (term1 + term2 - term3)

    # energy -------------------------------------------------------------

    def potential_energy(self, q) -> float:
        """Gravitational potential, zero when all COMs sit at the world origin."""
        _, _, _, coms = self._fk(q)
        g = tuple(self.gravity)
        return -sum(lk.mass * _dot(g, c) for lk, c in zip(self._params, coms))

    def kinetic_energy(self, q, qd) -> float:
        """Load-side kinetic energy (rotor contribution excluded)."""
        qd = np.asarray(qd, dtype=float)
        return 0.5 * qd @ self.mass_matrix(q) @ qd

    # payload ------------------------------------------------------------

    def with_end_mass(self, extra_mass: float) -> "RobotModel":
        """A copy of this model with a point mass added at the end-effector.

        Used to build the true plant for unknown-payload scenarios while the
        controller keeps the nominal model.
        """
        if extra_mass < 0.0:
            raise ValueError("payload mass must be non-negative")
        if extra_mass == 0.0:
            return self
        last = self.links[-1]
        m_new = last.mass + extra_mass
        com_new = (last.mass * last.com + extra_mass * self.end_effector) / m_new
        d_link = tuple(last.com - com_new)
        d_load = tuple(self.end_effector - com_new)
        inertia_new = (
            last.inertia
            + np.array(_parallel_axis_t(last.mass, d_link))
            + np.array(_parallel_axis_t(extra_mass, d_load))
        )
        loaded = Link(
            mass=m_new,
            com=com_new,
            offset=last.offset,
            axis=last.axis,
            inertia=inertia_new,
            damping=last.damping,
        )
        return RobotModel(
            links=self.links[:-1] + (loaded,),
            gravity=self.gravity,
            end_effector=self.end_effector,
            name=f"{self.name}+{extra_mass:g}kg",
        )
