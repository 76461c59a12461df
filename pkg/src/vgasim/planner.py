"""Offline low-torque trajectory search over torque x gear primitives.

Kinodynamic RRT: sample a random state, find the nearest tree node under a
weighted angle-wrapped metric, and extend it with the control primitive whose
one-edge forward integration lands closest to the sample. Candidate primitives
are screened with a single coarse RK4 step; only the winner is re-integrated
at the fine substep that the stored trajectory (and any replay) uses. The
search runs to its full node budget and returns the cheapest goal-reaching
path by accumulated torque-squared cost. Deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .actuator import ActuatorBank, State
from .dynamics import forward_dynamics
from .errors import PlanNotFoundError, TrajectoryFormatError
from .robot import RobotModel

TRAJECTORY_FORMAT = "vgasim-trajectory"
TRAJECTORY_VERSION = 1


@dataclass(frozen=True)
class Primitive:
    """One edge control: constant motor torque per axis + engaged gear indices."""

    torque: tuple
    gears: tuple


@dataclass(frozen=True)
class PlannerParams:
    """Search configuration; defaults suit the 1-DoF pendulum swing-up."""

    goal_q: np.ndarray
    goal_qd: np.ndarray
    tol_q: float = 0.2
    tol_qd: float = 0.5
    edge_duration: float = 0.1
    substep: float = 0.02
    max_nodes: int = 3000
    seed: int = 0
    torque_levels: tuple = ()        # per-axis torque magnitudes; 0 always included
    gear_mode: str = "uniform"       # "uniform": same gear on all axes; "cross": all combos
    goal_bias: float = 0.1
    q_weight: float = 1.0
    qd_weight: float = 0.1
    sample_qd_range: float = 8.0
    velocity_ceiling: float = 20.0
    enforce_speed_limit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "goal_q", np.atleast_1d(np.asarray(self.goal_q, dtype=float)))
        object.__setattr__(self, "goal_qd", np.atleast_1d(np.asarray(self.goal_qd, dtype=float)))
        if self.tol_q <= 0.0 or self.tol_qd <= 0.0:
            raise ValueError("goal tolerances must be strictly positive")
        if self.edge_duration <= 0.0 or self.substep <= 0.0:
            raise ValueError("edge duration and substep must be positive")
        if self.gear_mode not in ("uniform", "cross"):
            raise ValueError("gear_mode must be 'uniform' or 'cross'")


@dataclass
class Trajectory:
    """Planner output: dense reference samples plus per-edge primitives.

    Replaying `edges` through the same forward dynamics at the same substep
    reproduces the samples bit for bit.
    """

    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    torque: np.ndarray
    gears: np.ndarray
    edges: list
    cost_to_come: float
    seed: int
    robot: str = "robot"
    metadata: dict = field(default_factory=dict)

    @property
    def n_dof(self) -> int:
        return self.q.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def initial_state(self) -> State:
        return State(self.q[0].copy(), self.qd[0].copy(), self.gears[0].copy(), float(self.times[0]))

    def to_json(self) -> str:
        doc = {
            "format": TRAJECTORY_FORMAT,
            "version": TRAJECTORY_VERSION,
            "robot": self.robot,
            "n_dof": self.n_dof,
            "seed": self.seed,
            "cost_to_come": self.cost_to_come,
            "times": self.times.tolist(),
            "q": self.q.tolist(),
            "qd": self.qd.tolist(),
            "qdd": self.qdd.tolist(),
            "torque": self.torque.tolist(),
            "gears": self.gears.tolist(),
            "edges": [{"torque": list(p.torque), "gears": list(p.gears)} for p in self.edges],
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TrajectoryFormatError(f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format") != TRAJECTORY_FORMAT:
            raise TrajectoryFormatError("not a trajectory document")
        if doc.get("version") != TRAJECTORY_VERSION:
            raise TrajectoryFormatError(
                f"unsupported trajectory version {doc.get('version')!r} "
                f"(supported: {TRAJECTORY_VERSION})")
        try:
            return cls(
                times=np.asarray(doc["times"], dtype=float),
                q=np.asarray(doc["q"], dtype=float),
                qd=np.asarray(doc["qd"], dtype=float),
                qdd=np.asarray(doc["qdd"], dtype=float),
                torque=np.asarray(doc["torque"], dtype=float),
                gears=np.asarray(doc["gears"], dtype=int),
                edges=[Primitive(tuple(e["torque"]), tuple(e["gears"])) for e in doc["edges"]],
                cost_to_come=float(doc["cost_to_come"]),
                seed=int(doc["seed"]),
                robot=doc.get("robot", "robot"),
                metadata=doc.get("metadata", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TrajectoryFormatError(f"malformed trajectory document: {exc}") from exc


def trajectory_cost(traj: Trajectory) -> tuple[float, float]:
    """(max |tau|, integral of tau^T tau dt) by trapezoidal accumulation."""
    max_abs = float(np.max(np.abs(traj.torque))) if traj.torque.size else 0.0
    power = np.einsum("ij,ij->i", traj.torque, traj.torque)
    integral = float(np.trapezoid(power, traj.times)) if traj.times.size > 1 else 0.0
    return max_abs, integral


def build_primitives(bank: ActuatorBank, torque_levels, gear_mode: str = "uniform") -> list:
    """Cross the per-axis torque levels with the gear options.

    torque_levels: scalar magnitudes; each axis gets {0, +/-level...} clipped
    to its torque limit. gear_mode "uniform" engages the same gear index on
    every axis (keeps the branching factor workable for multi-DoF chains);
    "cross" enumerates every per-axis combination.
    """
    n = bank.n_axes
    per_axis = []
    for i in range(n):
        lim = bank.axes[i].torque_limit
        levels = {0.0}
        for lvl in torque_levels:
            mag = min(abs(float(lvl)), lim)
            levels.update((mag, -mag))
        per_axis.append(sorted(levels))

    if gear_mode == "uniform":
        count = min(len(a.gears) for a in bank.axes)
        gear_combos = [(g,) * n for g in range(count)]
    else:
        gear_combos = list(product(*[range(len(a.gears)) for a in bank.axes]))

    return [Primitive(torque=taus, gears=gears)
            for gears in gear_combos
            for taus in product(*per_axis)]


def _wrap(delta: np.ndarray) -> np.ndarray:
    return (delta + np.pi) % (2.0 * np.pi) - np.pi


def _rk4_step(f, q, qd, h):
    k1q, k1v = qd, f(q, qd)
    q2, v2 = q + 0.5 * h * k1q, qd + 0.5 * h * k1v
    k2q, k2v = v2, f(q2, v2)
    q3, v3 = q + 0.5 * h * k2q, qd + 0.5 * h * k2v
    k3q, k3v = v3, f(q3, v3)
    q4, v4 = q + h * k3q, qd + h * k3v
    k4q, k4v = v4, f(q4, v4)
    return (q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
            qd + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v))


class _Tree:
    def __init__(self, capacity: int, n: int):
        self.q = np.empty((capacity, n))
        self.qd = np.empty((capacity, n))
        self.parent = np.full(capacity, -1, dtype=int)
        self.prim = np.full(capacity, -1, dtype=int)
        self.cost = np.zeros(capacity)
        self.edge_q = [None] * capacity  # substep samples of the incoming edge
        self.edge_qd = [None] * capacity
        self.count = 0

    def add(self, q, qd, parent, prim, cost, edge_q, edge_qd) -> int:
        i = self.count
        self.q[i] = q
        self.qd[i] = qd
        self.parent[i] = parent
        self.prim[i] = prim
        self.cost[i] = cost
        self.edge_q[i] = edge_q
        self.edge_qd[i] = edge_qd
        self.count += 1
        return i

    def nearest(self, q, qd, q_weight, qd_weight) -> int:
        m = self.count
        dq = _wrap(self.q[:m] - q)
        dv = self.qd[:m] - qd
        d = q_weight * np.einsum("ij,ij->i", dq, dq) + qd_weight * np.einsum("ij,ij->i", dv, dv)
        return int(np.argmin(d))


def plan_low_torque(model: RobotModel, bank: ActuatorBank, start: State,
                    params: PlannerParams) -> Trajectory:
    """Search for a low-torque trajectory from start to the goal ball.

    Raises PlanNotFoundError when the node budget is exhausted without
    reaching the goal.
    """
    n = model.n_dof
    goal_q, goal_qd = params.goal_q, params.goal_qd
    if goal_q.shape != (n,) or goal_qd.shape != (n,):
        raise ValueError("goal dimensions do not match the robot")

    def at_goal(q, qd):
        return (np.all(np.abs(_wrap(q - goal_q)) <= params.tol_q)
                and np.all(np.abs(qd - goal_qd) <= params.tol_qd))

    if at_goal(start.q, start.qd):
        return _single_sample_trajectory(model, bank, start, params)

    torque_levels = params.torque_levels or (np.min(bank.torque_limits) / 2.0,
                                             np.min(bank.torque_limits))
    primitives = build_primitives(bank, torque_levels, params.gear_mode)
    prim_tau = np.array([p.torque for p in primitives])
    prim_r = np.array([bank.ratios(np.array(p.gears)) for p in primitives])

    # group primitives by gear combo so the screening can batch its solves
    combo_slices = {}
    for p, prim in enumerate(primitives):
        combo_slices.setdefault(prim.gears, []).append(p)
    combos = [(bank.ratios(np.array(gears)), np.array(idx))
              for gears, idx in combo_slices.items()]

    substeps = max(1, int(round(params.edge_duration / params.substep)))
    h_fine = params.edge_duration / substeps
    rng = np.random.default_rng(params.seed)

    tree = _Tree(params.max_nodes + 1, n)
    tree.add(start.q.copy(), start.qd.copy(), -1, -1, 0.0, None, None)
    goal_nodes = []

    def dyn(r, tau):
        return lambda q, qd: forward_dynamics(model, bank, r, tau, qd, q)

    max_iters = 6 * params.max_nodes
    iters = 0
    while tree.count <= params.max_nodes and iters < max_iters:
        iters += 1
        if rng.uniform() < params.goal_bias:
            q_s, qd_s = goal_q, goal_qd
        else:
            q_s = rng.uniform(-np.pi, np.pi, n)
            qd_s = rng.uniform(-params.sample_qd_range, params.sample_qd_range, n)

        near = tree.nearest(q_s, qd_s, params.q_weight, params.qd_weight)
        q0, qd0 = tree.q[near], tree.qd[near]

        # Screen every primitive with a second-order Taylor step from the
        # shared state: H and the bias are evaluated once, one batched solve
        # per gear combo covers all its torque levels.
        h = params.edge_duration
        H = model.mass_matrix(q0)
        bias = model.bias_forces(q0, qd0) + model.joint_damping * qd0
        best_d, best_p = np.inf, -1
        for r, idx in combos:
            if params.enforce_speed_limit and np.any(np.abs(r * qd0) > bank.speed_limits):
                continue
            M = H + np.diag(r * r * bank.inertia)
            rhs = (prim_tau[idx] * r - (r * r * bank.damping * qd0) - bias).T
            qdd = np.linalg.solve(M, rhs).T           # (m, n)
            q1 = q0 + h * qd0 + 0.5 * h * h * qdd
            qd1 = qd0 + h * qdd
            feas = np.all(np.abs(qd1) <= params.velocity_ceiling, axis=1)
            if not np.any(feas):
                continue
            dq = _wrap(q1 - q_s)
            dv = qd1 - qd_s
            d = params.q_weight * np.einsum("ij,ij->i", dq, dq) \
                + params.qd_weight * np.einsum("ij,ij->i", dv, dv)
            d[~feas] = np.inf
            k = int(np.argmin(d))
            if d[k] < best_d:
                best_d, best_p = float(d[k]), int(idx[k])
        if best_p < 0:
            continue

        # integrate the winner at the trajectory substep
        r, tau = prim_r[best_p], prim_tau[best_p]
        f = dyn(r, tau)
        q_c, qd_c = q0.copy(), qd0.copy()
        edge_q = np.empty((substeps, n))
        edge_qd = np.empty((substeps, n))
        ok = True
        for k in range(substeps):
            q_c, qd_c = _rk4_step(f, q_c, qd_c, h_fine)
            if np.any(np.abs(qd_c) > params.velocity_ceiling):
                ok = False
                break
            edge_q[k] = q_c
            edge_qd[k] = qd_c
        if not ok:
            continue

        cost = tree.cost[near] + float(prim_tau[best_p] @ prim_tau[best_p]) * params.edge_duration
        node = tree.add(q_c, qd_c, near, best_p, cost, edge_q, edge_qd)
        if at_goal(q_c, qd_c):
            goal_nodes.append((cost, node))

    if not goal_nodes:
        raise PlanNotFoundError(
            f"no plan found within {params.max_nodes} nodes "
            f"({len(goal_nodes)} goal hits, {iters} iterations)")

    _, best_node = min(goal_nodes)
    return _assemble(model, bank, tree, best_node, primitives, params, start)


def _single_sample_trajectory(model, bank, start: State, params: PlannerParams) -> Trajectory:
    n = model.n_dof
    qdd = forward_dynamics(model, bank, bank.ratios(start.gear_indices),
                           np.zeros(n), start.qd, start.q)
    return Trajectory(
        times=np.array([0.0]),
        q=start.q[None, :].copy(),
        qd=start.qd[None, :].copy(),
        qdd=qdd[None, :],
        torque=np.zeros((1, n)),
        gears=start.gear_indices[None, :].copy(),
        edges=[],
        cost_to_come=0.0,
        seed=params.seed,
        robot=model.name,
        metadata={"note": "start already inside the goal ball"},
    )


def _assemble(model, bank, tree: _Tree, node: int, primitives, params: PlannerParams,
              start: State) -> Trajectory:
    chain = []
    i = node
    while i >= 0:
        chain.append(i)
        i = tree.parent[i]
    chain.reverse()  # chain[0] is the root

    n = tree.q.shape[1]
    substeps = tree.edge_q[chain[1]].shape[0]
    m = 1 + (len(chain) - 1) * substeps
    times = np.empty(m)
    q = np.empty((m, n))
    qd = np.empty((m, n))
    qdd = np.empty((m, n))
    torque = np.empty((m, n))
    gears = np.empty((m, n), dtype=int)
    edges = []

    q[0], qd[0] = tree.q[chain[0]], tree.qd[chain[0]]
    times[0] = 0.0
    row = 1
    h = params.edge_duration / substeps
    for depth, node_i in enumerate(chain[1:]):
        prim = primitives[tree.prim[node_i]]
        edges.append(prim)
        r = bank.ratios(np.array(prim.gears))
        tau = np.array(prim.torque)
        start_row = row - 1
        for k in range(substeps):
            times[row] = times[0] + depth * params.edge_duration + (k + 1) * h
            q[row] = tree.edge_q[node_i][k]
            qd[row] = tree.edge_qd[node_i][k]
            row += 1
        # torque, gears, and accelerations for the rows governed by this edge
        for rr in range(start_row, row - 1):
            torque[rr] = tau
            gears[rr] = prim.gears
            qdd[rr] = forward_dynamics(model, bank, r, tau, qd[rr], q[rr])

    # final row: carry the last edge's input, acceleration at the end state
    last = edges[-1]
    torque[-1] = last.torque
    gears[-1] = last.gears
    qdd[-1] = forward_dynamics(model, bank, bank.ratios(np.array(last.gears)),
                               np.array(last.torque), qd[-1], q[-1])

    traj = Trajectory(
        times=times, q=q, qd=qd, qdd=qdd, torque=torque, gears=gears,
        edges=edges, cost_to_come=float(tree.cost[node]), seed=params.seed,
        robot=model.name,
        metadata={
            "edge_duration": params.edge_duration,
            "substep": h,
            "goal_q": params.goal_q.tolist(),
            "goal_qd": params.goal_qd.tolist(),
            "tol_q": params.tol_q,
            "tol_qd": params.tol_qd,
            "nodes": int(tree.count),
        },
    )
    return traj


def replay(model: RobotModel, bank: ActuatorBank, traj: Trajectory) -> tuple:
    """Open-loop re-integration of the plan's primitives at the plan substep.

    Returns the final (q, qd); used to audit dynamic consistency.
    """
    if not traj.edges:
        return traj.q[-1].copy(), traj.qd[-1].copy()
    substep = traj.metadata.get("substep", traj.times[1] - traj.times[0])
    edge_duration = traj.metadata.get("edge_duration",
                                      substep * (len(traj.times) - 1) / len(traj.edges))
    substeps = max(1, int(round(edge_duration / substep)))
    h = edge_duration / substeps
    q, qd = traj.q[0].copy(), traj.qd[0].copy()
    for prim in traj.edges:
        r = bank.ratios(np.array(prim.gears))
        tau = np.array(prim.torque)
        f = lambda q_, qd_: forward_dynamics(model, bank, r, tau, qd_, q_)
        for _ in range(substeps):
            q, qd = _rk4_step(f, q, qd, h)
    return q, qd
