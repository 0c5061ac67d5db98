"""Centralized pairwise deconfliction via branch-and-bound over side decisions.

The underlying mixed-integer program asks for new dynamics-consistent
trajectories for both vehicles that stay inside their robustness tubes and,
at every look-ahead step, satisfy at least one of the six separation side
constraints H_i (p'_1 - p'_2) <= -delta.  Rather than a big-M encoding,
this solver branches directly on the side chosen per step:

* a search node fixes sides for a subset of steps and drops the disjunction
  everywhere else, giving a pure LP whose value is a valid lower bound;
* the search branches depth-first until every step's side is fixed,
  choosing the most violated undecided step first (ties fall back to step
  order) and trying each step's six sides in order of decreasing residual,
  so the first dive follows the most promising assignment;
* a node is pruned when its parent's bound or its own LP value cannot beat
  the incumbent leaf, and leaves update the incumbent.

The returned objective is exact (to solver tolerance) with respect to the
declared cost: L1 deviation of both position trajectories from their plans
plus 0.01 times the L1 control effort.  The solver is also the label oracle
for training the learned conflict-resolution policy: feasible results carry
one side index per step, each chosen by branching.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .conflict import SIDE_NORMALS, STRICT_MARGIN
from .dynamics import LinearModel, Trajectory
from .lp import LpProblem, LpStatus, solve_lp
from .trajectory import ConflictScenario

# Robustness tubes are shrunk by this much in LP rows so that tube
# membership survives solver tolerances with strict STL satisfaction.
TUBE_MARGIN = 1e-6

_PRUNE_TOL = 1e-9


class NotFeasible(RuntimeError):
    """Labels were requested from a result that is not Feasible."""


class MilpStatus(Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class DecisionSequence:
    """One separation side (1..6) per look-ahead step, length N+1."""

    decisions: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.decisions, dtype=int)
        if d.ndim != 1 or d.size == 0 or np.any((d < 1) | (d > 6)):
            raise ValueError("decisions must be a flat array of side indices in 1..6")
        object.__setattr__(self, "decisions", d)

    def __len__(self) -> int:
        return self.decisions.size

    def __getitem__(self, k: int) -> int:
        return int(self.decisions[k])


@dataclass
class MilpBudget:
    max_nodes: int = 20000
    max_seconds: float = 60.0


@dataclass
class MilpResult:
    status: MilpStatus
    decisions: Optional[DecisionSequence] = None
    traj_a: Optional[Trajectory] = None
    traj_b: Optional[Trajectory] = None
    objective: Optional[float] = None
    nodes_explored: int = 0
    wall_time: float = 0.0


class _PairLp:
    """Shared sparse LP skeleton for the two-vehicle deconfliction problem.

    Variable layout: [x1 | x2 | u1 | u2 | dev1 | dev2 | eff1 | eff2] with
    states (N+1)*6 per vehicle, controls N*3, position-deviation and
    control-effort lifting variables for the L1 objective.
    """

    def __init__(self, scenario: ConflictScenario, model: LinearModel):
        n_steps = scenario.num_steps
        self.n_steps = n_steps
        self.model = model
        self.scenario = scenario
        k1 = n_steps + 1

        self.ofs_x = (0, 6 * k1)
        self.ofs_u = (12 * k1, 12 * k1 + 3 * n_steps)
        self.ofs_dev = (12 * k1 + 6 * n_steps, 12 * k1 + 6 * n_steps + 3 * k1)
        self.ofs_eff = (12 * k1 + 6 * n_steps + 6 * k1,
                        12 * k1 + 6 * n_steps + 6 * k1 + 3 * n_steps)
        self.n_vars = 12 * k1 + 12 * n_steps + 6 * k1

        self.objective = np.zeros(self.n_vars)
        for j in range(2):
            self.objective[self.ofs_dev[j]:self.ofs_dev[j] + 3 * k1] = 1.0
            self.objective[self.ofs_eff[j]:self.ofs_eff[j] + 3 * n_steps] = 0.01

        self.bounds = np.column_stack([np.full(self.n_vars, -np.inf),
                                       np.full(self.n_vars, np.inf)])
        for j in range(2):
            xo = self.ofs_x[j]
            for k in range(k1):
                self.bounds[xo + 6 * k + 3: xo + 6 * k + 6, 0] = -model.v_max
                self.bounds[xo + 6 * k + 3: xo + 6 * k + 6, 1] = model.v_max
            uo = self.ofs_u[j]
            self.bounds[uo: uo + 3 * n_steps, 0] = -model.a_max
            self.bounds[uo: uo + 3 * n_steps, 1] = model.a_max
            self.bounds[self.ofs_dev[j]: self.ofs_dev[j] + 3 * k1, 0] = 0.0
            self.bounds[self.ofs_eff[j]: self.ofs_eff[j] + 3 * n_steps, 0] = 0.0

        self._build_equalities()
        self._build_inequalities()

    def _build_equalities(self):
        n, k1 = self.n_steps, self.n_steps + 1
        model, scenario = self.model, self.scenario
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        for j, traj in enumerate((scenario.traj_a, scenario.traj_b)):
            xo, uo = self.ofs_x[j], self.ofs_u[j]
            x0 = traj.states[0]
            for i in range(6):
                rows.append(r); cols.append(xo + i); vals.append(1.0); rhs.append(x0[i])
                r += 1
            for k in range(n):
                for i in range(6):
                    rows.append(r); cols.append(xo + 6 * (k + 1) + i); vals.append(1.0)
                    for i2 in range(6):
                        a = model.A[i, i2]
                        if a != 0.0:
                            rows.append(r); cols.append(xo + 6 * k + i2); vals.append(-a)
                    for i2 in range(3):
                        b = model.B[i, i2]
                        if b != 0.0:
                            rows.append(r); cols.append(uo + 3 * k + i2); vals.append(-b)
                    rhs.append(0.0)
                    r += 1
        self.a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n_vars))
        self.b_eq = np.asarray(rhs)

    def _build_inequalities(self):
        n, k1 = self.n_steps, self.n_steps + 1
        scenario = self.scenario
        rows, cols, vals, rhs = [], [], [], []
        r = 0
        tubes = (scenario.tube_a, scenario.tube_b)
        for j, traj in enumerate((scenario.traj_a, scenario.traj_b)):
            xo, uo = self.ofs_x[j], self.ofs_u[j]
            devo, effo = self.ofs_dev[j], self.ofs_eff[j]
            radius = max(tubes[j].radius - TUBE_MARGIN, 0.0)
            center = tubes[j].centerline
            plan = traj.positions
            for k in range(k1):
                for axis in range(3):
                    c = xo + 6 * k + axis
                    # tube membership: |p - center| <= radius
                    rows.append(r); cols.append(c); vals.append(1.0)
                    rhs.append(center[k, axis] + radius); r += 1
                    rows.append(r); cols.append(c); vals.append(-1.0)
                    rhs.append(-center[k, axis] + radius); r += 1
                    # deviation lifting: |p - plan| <= dev
                    d = devo + 3 * k + axis
                    rows.append(r); cols.append(c); vals.append(1.0)
                    rows.append(r); cols.append(d); vals.append(-1.0)
                    rhs.append(plan[k, axis]); r += 1
                    rows.append(r); cols.append(c); vals.append(-1.0)
                    rows.append(r); cols.append(d); vals.append(-1.0)
                    rhs.append(-plan[k, axis]); r += 1
            for k in range(n):
                for axis in range(3):
                    c = uo + 3 * k + axis
                    e = effo + 3 * k + axis
                    rows.append(r); cols.append(c); vals.append(1.0)
                    rows.append(r); cols.append(e); vals.append(-1.0)
                    rhs.append(0.0); r += 1
                    rows.append(r); cols.append(c); vals.append(-1.0)
                    rows.append(r); cols.append(e); vals.append(-1.0)
                    rhs.append(0.0); r += 1
        self.a_ub_base = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.n_vars))
        self.b_ub_base = np.asarray(rhs)
        self.g_row = -scenario.delta - STRICT_MARGIN

    def side_row(self, step: int, side: int) -> Tuple[sp.csr_matrix, float]:
        """Row H_side (p1_step - p2_step) <= g for one decided step."""
        h = SIDE_NORMALS[side - 1]
        cols, vals = [], []
        for axis in range(3):
            if h[axis] != 0.0:
                cols.append(self.ofs_x[0] + 6 * step + axis); vals.append(h[axis])
                cols.append(self.ofs_x[1] + 6 * step + axis); vals.append(-h[axis])
        row = sp.csr_matrix((vals, ([0] * len(cols), cols)), shape=(1, self.n_vars))
        return row, self.g_row

    def problem_for(self, fixed: dict) -> LpProblem:
        """LP with side rows for the fixed steps; unfixed steps are relaxed."""
        if fixed:
            blocks = [self.a_ub_base]
            extra_rhs = []
            for step in sorted(fixed):
                row, g = self.side_row(step, fixed[step])
                blocks.append(row)
                extra_rhs.append(g)
            a_ub = sp.vstack(blocks, format="csr")
            b_ub = np.concatenate([self.b_ub_base, np.asarray(extra_rhs)])
        else:
            a_ub, b_ub = self.a_ub_base, self.b_ub_base
        return LpProblem(
            objective=self.objective,
            inequality_lhs=a_ub,
            inequality_rhs=b_ub,
            equality_lhs=self.a_eq,
            equality_rhs=self.b_eq,
            variable_bounds=self.bounds,
        )

    def extract_trajectories(self, primal: np.ndarray) -> Tuple[Trajectory, Trajectory]:
        k1 = self.n_steps + 1
        out = []
        for j in range(2):
            xo = self.ofs_x[j]
            out.append(Trajectory(states=primal[xo: xo + 6 * k1].reshape(k1, 6).copy(),
                                  dt=self.model.dt))
        return out[0], out[1]

    def difference(self, primal: np.ndarray) -> np.ndarray:
        a, b = self.extract_trajectories(primal)
        return a.positions - b.positions


def _residuals(z: np.ndarray, g_row: float) -> np.ndarray:
    """Residuals g - H_i z for all steps: shape (K, 6); >= 0 means satisfied."""
    return g_row - z @ SIDE_NORMALS.T


def solve_milp(scenario: ConflictScenario, model: LinearModel,
               budget: Optional[MilpBudget] = None) -> MilpResult:
    """Exact deconfliction over per-step side choices, within the node/time budget."""
    budget = budget or MilpBudget()
    t0 = time.perf_counter()
    lp = _PairLp(scenario, model)
    k1 = lp.n_steps + 1

    best_value = np.inf
    best: Optional[Tuple[np.ndarray, np.ndarray]] = None  # (decisions, primal)
    stack: List[Tuple[dict, float]] = [({}, -np.inf)]  # (fixed sides, parent bound)
    nodes = 0
    exhausted = False

    while stack:
        if nodes >= budget.max_nodes or time.perf_counter() - t0 > budget.max_seconds:
            exhausted = True
            break
        fixed, parent_bound = stack.pop()
        if parent_bound >= best_value - _PRUNE_TOL:
            continue  # the whole subtree is dominated by the incumbent
        nodes += 1
        sol = solve_lp(lp.problem_for(fixed))
        if sol.status is not LpStatus.OPTIMAL:
            continue  # infeasible branch (unbounded cannot occur: objective >= 0)
        if sol.objective_value >= best_value - _PRUNE_TOL:
            continue
        if len(fixed) == k1:
            best_value = sol.objective_value
            decisions = np.array([fixed[k] for k in range(k1)], dtype=int)
            best = (decisions, sol.primal)
            continue
        z = lp.difference(sol.primal)
        res = _residuals(z, lp.g_row)
        undecided = [k for k in range(k1) if k not in fixed]
        best_side_res = res[undecided].max(axis=1)
        # most violated step first (the least-satisfied one once every
        # undecided step is satisfied)
        branch_step = undecided[int(np.argmin(best_side_res))]
        order = np.argsort(-res[branch_step], kind="stable")
        for side0 in order[::-1]:  # push worst first so the best pops first
            child = dict(fixed)
            child[branch_step] = int(side0) + 1
            stack.append((child, sol.objective_value))

    wall = time.perf_counter() - t0
    if exhausted:
        return MilpResult(status=MilpStatus.BUDGET_EXHAUSTED, nodes_explored=nodes,
                          wall_time=wall)
    if best is None:
        return MilpResult(status=MilpStatus.INFEASIBLE, nodes_explored=nodes, wall_time=wall)
    decisions, primal = best
    traj_a, traj_b = lp.extract_trajectories(primal)
    return MilpResult(
        status=MilpStatus.FEASIBLE,
        decisions=DecisionSequence(decisions),
        traj_a=traj_a,
        traj_b=traj_b,
        objective=float(best_value),
        nodes_explored=nodes,
        wall_time=wall,
    )


def extract_labels(result: MilpResult) -> DecisionSequence:
    """Side-per-step training labels from a feasible solve (deterministic)."""
    if result.status is not MilpStatus.FEASIBLE or result.decisions is None:
        raise NotFeasible(f"cannot extract labels from status {result.status}")
    return DecisionSequence(result.decisions.decisions.copy())


def to_label_record(scenario: ConflictScenario, decisions: DecisionSequence) -> dict:
    """JSON-lines training record: seed, flattened difference sequence, labels."""
    return {
        "seed": scenario.seed,
        "z": scenario.difference_sequence().ravel().tolist(),
        "decisions": decisions.decisions.tolist(),
    }


def from_label_record(record: dict) -> Tuple[int, np.ndarray, DecisionSequence]:
    z = np.asarray(record["z"], dtype=float).reshape(-1, 3)
    return int(record["seed"]), z, DecisionSequence(np.asarray(record["decisions"], dtype=int))
