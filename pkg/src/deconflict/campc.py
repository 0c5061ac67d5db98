"""Per-vehicle collision-avoidance MPC and the two-stage resolution protocol.

The CA-MPC linear program finds a new dynamics-consistent trajectory for
one vehicle that stays inside its robustness tube while minimizing the
total slack on the commanded separation sides:

    min sum_k lambda_k
    s.t.  x'_0 = x_0,  x'_{k+1} = A x'_k + B u_k,  u in U,  x' in X,
          p'_k inside tube,
          prty * H^{d_k} (p_avoid,k - p'_k) <= g^{d_k} + lambda_k,
          lambda_k >= 0.

Zero total slack certifies that this vehicle alone creates the commanded
separation.  Among slack-optimal solutions, a second lexicographic pass
minimizes the L1 position deviation from the vehicle's own plan, which
makes outputs reproducible and keeps vehicles on their plans whenever the
slack optimum allows it.

Because the hover-linearized model is block-diagonal per axis and every
constraint involves a single axis (the side constraint at step k touches
only the axis of H^{d_k}), the program decomposes exactly into independent
per-axis LPs; axes whose plan already satisfies their rows are returned
unchanged without a solve.  This keeps one protocol event in the low
milliseconds, which is what makes the scheme usable online.  A joint
formulation covering arbitrary (coupled) linear models is retained both as
a fallback and as a cross-check oracle for the decomposition.

The two-stage protocol runs the lower-priority vehicle first against the
other's planned trajectory; on residual slack the second vehicle solves
against the first vehicle's *new* trajectory; a final geometric distance
check catches the conservative cases where slack remains positive yet the
trajectories are separated anyway.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .conflict import SIDE_NORMALS, STRICT_MARGIN, separation_satisfied
from .dynamics import LinearModel, Trajectory, rollout_array
from .lp import LpProblem, LpStatus, solve_lexicographic, solve_lp
from .milp import TUBE_MARGIN, DecisionSequence
from .stl import RobustnessTube
from .trajectory import ConflictScenario

ZERO_SLACK_TOL = 1e-7
_LEX_TOL = 1e-9


class LpInfeasible(RuntimeError):
    """The tube/dynamics constraints admit no trajectory (malformed tube)."""


@dataclass
class CampcInput:
    own_traj: Trajectory
    avoid_traj: Trajectory
    tube: RobustnessTube
    decisions: DecisionSequence
    priority: int  # -1 moves first, +1 moves second
    delta: float

    def validate(self) -> None:
        if self.priority not in (-1, 1):
            raise ValueError("priority must be -1 or +1")
        k1 = len(self.own_traj)
        if len(self.avoid_traj) != k1 or len(self.decisions) != k1:
            raise ValueError("own/avoid trajectories and decisions must share length")
        if self.tube.centerline.shape[0] != k1:
            raise ValueError("tube centerline length mismatch")


@dataclass
class CampcOutput:
    new_traj: Trajectory
    controls: np.ndarray      # (N, 3)
    slacks: np.ndarray        # (N+1,), nonnegative
    total_slack: float


def _axis_decoupled(model: LinearModel) -> bool:
    """True when A, B, C have the per-axis double-integrator block structure."""
    for i in range(6):
        for j in range(6):
            if (i % 3) != (j % 3) and model.A[i, j] != 0.0:
                return False
    for i in range(6):
        for j in range(3):
            if (i % 3) != j and model.B[i, j] != 0.0:
                return False
    return np.array_equal(model.C, np.hstack([np.eye(3), np.zeros((3, 3))]))


def _decision_axes(decisions: DecisionSequence) -> np.ndarray:
    """Axis (0, 1, 2) of each step's commanded side."""
    return (decisions.decisions - 1) // 2


def _solve_axis(inp: CampcInput, model: LinearModel, axis: int,
                sep_steps: np.ndarray):
    """Solve one axis subproblem; returns (positions, velocities, controls, slacks)."""
    k1 = len(inp.own_traj)
    n = k1 - 1
    dt = model.dt
    plan_p = inp.own_traj.positions[:, axis]
    plan_v = inp.own_traj.velocities[:, axis]
    avoid_p = inp.avoid_traj.positions[:, axis]
    center = inp.tube.centerline[:, axis]
    radius = max(inp.tube.radius - TUBE_MARGIN, 0.0)
    g_row = -inp.delta - STRICT_MARGIN
    n_sep = sep_steps.size
    h_sign = np.array([SIDE_NORMALS[inp.decisions[k] - 1][axis] for k in sep_steps])

    # Plan short-circuit: when the vehicle's own plan is dynamics-consistent
    # and satisfies every row on this axis with zero slack, it is the exact
    # lexicographic optimum.
    u_plan = (plan_v[1:] - plan_v[:-1]) / dt
    dyn_resid = np.max(np.abs(plan_p[1:] - plan_p[:-1] - dt * plan_v[:-1]
                              - 0.5 * dt * dt * u_plan), initial=0.0)
    feasible = (
        dyn_resid <= 1e-9
        and np.all(np.abs(plan_v) <= model.v_max)
        and np.all(np.abs(u_plan) <= model.a_max)
        and np.all(np.abs(plan_p - center) <= radius)
    )
    if feasible and n_sep:
        # row holds with zero slack: prty * h * (avoid - plan) <= g
        lhs = inp.priority * h_sign * (avoid_p[sep_steps] - plan_p[sep_steps])
        feasible = bool(np.all(lhs <= g_row))
    if feasible:
        return plan_p.copy(), plan_v.copy(), u_plan, np.zeros(n_sep)

    # Variable layout: [p (k1) | v (k1) | u (n) | lam (n_sep) | dev (k1)]
    ofs_v, ofs_u = k1, 2 * k1
    ofs_lam, ofs_dev = 2 * k1 + n, 2 * k1 + n + n_sep
    n_vars = 3 * k1 + n + n_sep

    bounds = np.column_stack([np.full(n_vars, -np.inf), np.full(n_vars, np.inf)])
    bounds[ofs_v: ofs_v + k1] = (-model.v_max, model.v_max)
    bounds[ofs_u: ofs_u + n] = (-model.a_max, model.a_max)
    bounds[ofs_lam: ofs_lam + n_sep, 0] = 0.0
    bounds[ofs_dev: ofs_dev + k1, 0] = 0.0

    ks = np.arange(n)
    eq_rows = np.concatenate([
        np.repeat(ks, 4),                    # position recursions
        np.repeat(n + ks, 3),                # velocity recursions
        [2 * n, 2 * n + 1],                  # initial state pins
    ])
    eq_cols = np.concatenate([
        np.stack([ks + 1, ks, ofs_v + ks, ofs_u + ks], axis=1).ravel(),
        np.stack([ofs_v + ks + 1, ofs_v + ks, ofs_u + ks], axis=1).ravel(),
        [0, ofs_v],
    ])
    eq_vals = np.concatenate([
        np.tile([1.0, -1.0, -dt, -0.5 * dt * dt], n),
        np.tile([1.0, -1.0, -dt], n),
        [1.0, 1.0],
    ])
    a_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(2 * n + 2, n_vars))
    b_eq = np.concatenate([np.zeros(2 * n), [plan_p[0], plan_v[0]]])

    all_k = np.arange(k1)
    ub_rows, ub_cols, ub_vals, ub_rhs = [], [], [], []
    r = 0
    # tube: p <= c + R ; -p <= -c + R
    ub_rows += [np.arange(r, r + k1), np.arange(r + k1, r + 2 * k1)]
    ub_cols += [all_k, all_k]
    ub_vals += [np.ones(k1), -np.ones(k1)]
    ub_rhs += [center + radius, -center + radius]
    r += 2 * k1
    # deviation lifting: p - dev <= plan ; -p - dev <= -plan
    ub_rows += [np.repeat(np.arange(r, r + k1), 2), np.repeat(np.arange(r + k1, r + 2 * k1), 2)]
    ub_cols += [np.stack([all_k, ofs_dev + all_k], axis=1).ravel(),
                np.stack([all_k, ofs_dev + all_k], axis=1).ravel()]
    ub_vals += [np.tile([1.0, -1.0], k1), np.tile([-1.0, -1.0], k1)]
    ub_rhs += [plan_p, -plan_p]
    r += 2 * k1
    # separation: -prty*h*p - lam <= g - prty*h*avoid
    if n_sep:
        ub_rows += [np.repeat(np.arange(r, r + n_sep), 2)]
        ub_cols += [np.stack([sep_steps, ofs_lam + np.arange(n_sep)], axis=1).ravel()]
        ub_vals += [np.stack([-inp.priority * h_sign, -np.ones(n_sep)], axis=1).ravel()]
        ub_rhs += [g_row - inp.priority * h_sign * avoid_p[sep_steps]]
        r += n_sep
    a_ub = sp.csr_matrix((np.concatenate(ub_vals),
                          (np.concatenate(ub_rows), np.concatenate(ub_cols))),
                         shape=(r, n_vars))
    b_ub = np.concatenate(ub_rhs)

    dev_obj = np.zeros(n_vars)
    dev_obj[ofs_dev: ofs_dev + k1] = 1.0
    if n_sep:
        slack_obj = np.zeros(n_vars)
        slack_obj[ofs_lam: ofs_lam + n_sep] = 1.0
        problem = LpProblem(slack_obj, a_ub, b_ub, a_eq, b_eq, bounds)
        primary_value, secondary = solve_lexicographic(
            problem, dev_obj, np.arange(ofs_lam, ofs_lam + n_sep), _LEX_TOL)
        if primary_value is None or secondary.status is not LpStatus.OPTIMAL:
            raise LpInfeasible(
                f"axis-{axis} CA-MPC LP is infeasible; "
                "the tube conflicts with the dynamics")
    else:
        secondary = solve_lp(LpProblem(dev_obj, a_ub, b_ub, a_eq, b_eq, bounds))
        if secondary.status is not LpStatus.OPTIMAL:
            raise LpInfeasible(
                f"axis-{axis} CA-MPC LP is {secondary.status.value}; "
                "the tube conflicts with the dynamics")
    primal = secondary.primal
    return (primal[:k1].copy(), primal[ofs_v: ofs_v + k1].copy(),
            primal[ofs_u: ofs_u + n].copy(),
            np.maximum(primal[ofs_lam: ofs_lam + n_sep], 0.0))


def _ca_mpc_axiswise(inp: CampcInput, model: LinearModel) -> CampcOutput:
    k1 = len(inp.own_traj)
    n = k1 - 1
    axes = _decision_axes(inp.decisions)
    controls = np.empty((n, 3))
    slacks = np.zeros(k1)
    states = np.empty((k1, 6))
    for axis in range(3):
        sep_steps = np.nonzero(axes == axis)[0]
        p, v, u, lam = _solve_axis(inp, model, axis, sep_steps)
        states[:, axis] = p
        states[:, 3 + axis] = v
        controls[:, axis] = u
        slacks[sep_steps] = lam
    new_traj = rollout_array(model, inp.own_traj.states[0], controls,
                             check_admissible=False)
    return CampcOutput(new_traj=new_traj, controls=controls, slacks=slacks,
                       total_slack=float(np.sum(slacks)))


def _ca_mpc_joint(inp: CampcInput, model: LinearModel) -> CampcOutput:
    """Single-LP formulation for arbitrary linear models (and cross-checking)."""
    n_steps = len(inp.own_traj) - 1
    k1 = n_steps + 1
    ofs_x, ofs_u, ofs_lam, ofs_dev = 0, 6 * k1, 6 * k1 + 3 * n_steps, 7 * k1 + 3 * n_steps
    n_vars = 10 * k1 + 3 * n_steps

    bounds = np.column_stack([np.full(n_vars, -np.inf), np.full(n_vars, np.inf)])
    for k in range(k1):
        bounds[ofs_x + 6 * k + 3: ofs_x + 6 * k + 6] = (-model.v_max, model.v_max)
    bounds[ofs_u: ofs_u + 3 * n_steps] = (-model.a_max, model.a_max)
    bounds[ofs_lam: ofs_lam + k1, 0] = 0.0
    bounds[ofs_dev: ofs_dev + 3 * k1, 0] = 0.0

    rows, cols, vals, rhs_eq = [], [], [], []
    r = 0
    x0 = inp.own_traj.states[0]
    for i in range(6):
        rows.append(r); cols.append(ofs_x + i); vals.append(1.0); rhs_eq.append(x0[i]); r += 1
    for k in range(n_steps):
        for i in range(6):
            rows.append(r); cols.append(ofs_x + 6 * (k + 1) + i); vals.append(1.0)
            for i2 in range(6):
                if model.A[i, i2] != 0.0:
                    rows.append(r); cols.append(ofs_x + 6 * k + i2); vals.append(-model.A[i, i2])
            for i2 in range(3):
                if model.B[i, i2] != 0.0:
                    rows.append(r); cols.append(ofs_u + 3 * k + i2); vals.append(-model.B[i, i2])
            rhs_eq.append(0.0); r += 1
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(r, n_vars))
    b_eq = np.asarray(rhs_eq)

    rows, cols, vals, rhs = [], [], [], []
    r = 0
    radius = max(inp.tube.radius - TUBE_MARGIN, 0.0)
    center = inp.tube.centerline
    g_row = -inp.delta - STRICT_MARGIN
    avoid = inp.avoid_traj.positions
    plan = inp.own_traj.positions
    for k in range(k1):
        for axis in range(3):
            c = ofs_x + 6 * k + axis
            rows.append(r); cols.append(c); vals.append(1.0)
            rhs.append(center[k, axis] + radius); r += 1
            rows.append(r); cols.append(c); vals.append(-1.0)
            rhs.append(-center[k, axis] + radius); r += 1
            d = ofs_dev + 3 * k + axis
            rows.append(r); cols.append(c); vals.append(1.0)
            rows.append(r); cols.append(d); vals.append(-1.0)
            rhs.append(plan[k, axis]); r += 1
            rows.append(r); cols.append(c); vals.append(-1.0)
            rows.append(r); cols.append(d); vals.append(-1.0)
            rhs.append(-plan[k, axis]); r += 1
        h = SIDE_NORMALS[inp.decisions[k] - 1]
        for axis in range(3):
            if h[axis] != 0.0:
                rows.append(r); cols.append(ofs_x + 6 * k + axis)
                vals.append(-inp.priority * h[axis])
        rows.append(r); cols.append(ofs_lam + k); vals.append(-1.0)
        rhs.append(g_row - inp.priority * float(h @ avoid[k])); r += 1
    a_ub = sp.csr_matrix((vals, (rows, cols)), shape=(r, n_vars))
    b_ub = np.asarray(rhs)

    slack_obj = np.zeros(n_vars)
    slack_obj[ofs_lam: ofs_lam + k1] = 1.0
    primary = solve_lp(LpProblem(slack_obj, a_ub, b_ub, a_eq, b_eq, bounds))
    if primary.status is not LpStatus.OPTIMAL:
        raise LpInfeasible(
            f"CA-MPC stage LP is {primary.status.value}; the tube conflicts with the dynamics")

    cap = sp.csr_matrix((np.ones(k1), ([0] * k1, range(ofs_lam, ofs_lam + k1))),
                        shape=(1, n_vars))
    a_ub2 = sp.vstack([a_ub, cap], format="csr")
    b_ub2 = np.concatenate([b_ub, [primary.objective_value + _LEX_TOL]])
    dev_obj = np.zeros(n_vars)
    dev_obj[ofs_dev: ofs_dev + 3 * k1] = 1.0
    secondary = solve_lp(LpProblem(dev_obj, a_ub2, b_ub2, a_eq, b_eq, bounds))
    if secondary.status is not LpStatus.OPTIMAL:
        raise LpInfeasible("deviation tie-break LP unexpectedly failed")

    primal = secondary.primal
    controls = primal[ofs_u: ofs_u + 3 * n_steps].reshape(n_steps, 3).copy()
    slacks = np.maximum(primal[ofs_lam: ofs_lam + k1].copy(), 0.0)
    new_traj = rollout_array(model, x0, controls, check_admissible=False)
    return CampcOutput(new_traj=new_traj, controls=controls, slacks=slacks,
                       total_slack=float(np.sum(slacks)))


def ca_mpc(inp: CampcInput, model: LinearModel, method: str = "auto") -> CampcOutput:
    """Solve the slack-minimizing LP, then the deviation-minimizing tie-break.

    method: "auto" uses the per-axis decomposition when the model allows it;
    "axis" forces it; "joint" forces the single-LP formulation.
    """
    inp.validate()
    if method == "joint":
        return _ca_mpc_joint(inp, model)
    if method == "axis" or (method == "auto" and _axis_decoupled(model)):
        return _ca_mpc_axiswise(inp, model)
    return _ca_mpc_joint(inp, model)


class L2fStatus(Enum):
    DONE_UAS1 = "done_uas1"
    DONE_UAS2 = "done_uas2"
    DONE_BOTH_RECHECK = "done_both_recheck"
    FAIL = "fail"

    @property
    def resolved(self) -> bool:
        return self is not L2fStatus.FAIL


@dataclass
class L2fOutcome:
    status: L2fStatus
    traj_a: Trajectory
    traj_b: Trajectory
    event_time: float                      # seconds of compute across stages
    slack1: float
    slack2: Optional[float]
    stage1: CampcOutput
    stage2: Optional[CampcOutput]
    t1: float
    t2: float


def l2f(scenario: ConflictScenario, decisions: DecisionSequence,
        model: LinearModel) -> L2fOutcome:
    """Run the prioritized two-stage avoidance protocol on one scenario."""
    t0 = time.perf_counter()
    stage1 = ca_mpc(CampcInput(
        own_traj=scenario.traj_a, avoid_traj=scenario.traj_b, tube=scenario.tube_a,
        decisions=decisions, priority=-1, delta=scenario.delta), model)
    t1 = time.perf_counter() - t0
    if stage1.total_slack <= ZERO_SLACK_TOL:
        return L2fOutcome(
            status=L2fStatus.DONE_UAS1,
            traj_a=stage1.new_traj, traj_b=scenario.traj_b,
            event_time=t1, slack1=stage1.total_slack, slack2=None,
            stage1=stage1, stage2=None, t1=t1, t2=0.0)

    t_mid = time.perf_counter()
    stage2 = ca_mpc(CampcInput(
        own_traj=scenario.traj_b, avoid_traj=stage1.new_traj, tube=scenario.tube_b,
        decisions=decisions, priority=+1, delta=scenario.delta), model)
    t2 = time.perf_counter() - t_mid
    if stage2.total_slack <= ZERO_SLACK_TOL:
        status = L2fStatus.DONE_UAS2
    elif separation_satisfied(stage1.new_traj, stage2.new_traj, scenario.delta):
        status = L2fStatus.DONE_BOTH_RECHECK
    else:
        status = L2fStatus.FAIL
    return L2fOutcome(
        status=status,
        traj_a=stage1.new_traj, traj_b=stage2.new_traj,
        event_time=t1 + t2, slack1=stage1.total_slack, slack2=stage2.total_slack,
        stage1=stage1, stage2=stage2, t1=t1, t2=t2)


EVENT_LOG_COLUMNS = ("seed", "status", "slack1", "slack2", "t1_ms", "t2_ms",
                     "min_sep_before", "min_sep_after")


def event_log_row(seed: int, outcome: L2fOutcome, min_sep_before: float,
                  min_sep_after: float) -> dict:
    """One fixed-schema record per protocol invocation."""
    return {
        "seed": seed,
        "status": outcome.status.value,
        "slack1": f"{outcome.slack1:.9g}",
        "slack2": "" if outcome.slack2 is None else f"{outcome.slack2:.9g}",
        "t1_ms": f"{outcome.t1 * 1e3:.3f}",
        "t2_ms": f"{outcome.t2 * 1e3:.3f}",
        "min_sep_before": f"{min_sep_before:.9g}",
        "min_sep_after": f"{min_sep_after:.9g}",
    }
