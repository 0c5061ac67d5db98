"""Dense linear-program container and solver.

Every optimization in this package (collision-avoidance MPC, the
branch-and-bound deconflictor and its relaxations) bottoms out in
``solve_lp``.  Problems are stated in the conventional form

    minimize    c . x
    subject to  A_ub x <= b_ub
                A_eq x == b_eq
                lower <= x <= upper   (per variable, infinities allowed)

The heavy lifting is delegated to scipy's HiGHS backend, which is
deterministic for a fixed input.  Infinite bounds may be written either
as +/-inf or with the +/-1e30 sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

INF_BOUND = 1e30
FEAS_TOL = 1e-7
OPT_TOL = 1e-6


class MalformedProblem(ValueError):
    """Dimension mismatch or inconsistent bounds; a caller bug, not a solve failure."""


class LpNumericalError(RuntimeError):
    """Solver gave up without a trustworthy status."""


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _empty_matrix(n_cols: int) -> np.ndarray:
    return np.zeros((0, n_cols))


@dataclass
class LpProblem:
    """A dense LP.  Matrices may also be scipy sparse (same shapes apply).

    Fields
    ------
    objective : (n,) cost vector, minimized
    inequality_lhs : (m_ub, n) matrix for rows A x <= b
    inequality_rhs : (m_ub,) vector
    equality_lhs : (m_eq, n) matrix for rows A x == b
    equality_rhs : (m_eq,) vector
    variable_bounds : (n, 2) per-variable [lower, upper]
    """

    objective: np.ndarray
    inequality_lhs: np.ndarray
    inequality_rhs: np.ndarray
    equality_lhs: np.ndarray
    equality_rhs: np.ndarray
    variable_bounds: np.ndarray

    @classmethod
    def create(cls, objective, inequality_lhs=None, inequality_rhs=None,
               equality_lhs=None, equality_rhs=None, variable_bounds=None) -> "LpProblem":
        """Build a problem, filling in empty constraint blocks and free bounds."""
        c = np.asarray(objective, dtype=float)
        n = c.shape[0]
        if inequality_lhs is None:
            inequality_lhs = _empty_matrix(n)
            inequality_rhs = np.zeros(0)
        elif not sp.issparse(inequality_lhs):
            inequality_lhs = np.asarray(inequality_lhs, dtype=float)
        if equality_lhs is None:
            equality_lhs = _empty_matrix(n)
            equality_rhs = np.zeros(0)
        elif not sp.issparse(equality_lhs):
            equality_lhs = np.asarray(equality_lhs, dtype=float)
        if variable_bounds is None:
            variable_bounds = np.column_stack([np.full(n, -np.inf), np.full(n, np.inf)])
        prob = cls(
            objective=c,
            inequality_lhs=inequality_lhs,
            inequality_rhs=np.asarray(inequality_rhs, dtype=float),
            equality_lhs=equality_lhs,
            equality_rhs=np.asarray(equality_rhs, dtype=float),
            variable_bounds=np.asarray(variable_bounds, dtype=float),
        )
        prob.validate()
        return prob

    @property
    def num_variables(self) -> int:
        return self.objective.shape[0]

    def validate(self) -> None:
        n = self.num_variables
        if self.inequality_lhs.shape != (self.inequality_rhs.shape[0], n):
            raise MalformedProblem(
                f"inequality block {self.inequality_lhs.shape} does not match "
                f"rhs {self.inequality_rhs.shape} / {n} variables")
        if self.equality_lhs.shape != (self.equality_rhs.shape[0], n):
            raise MalformedProblem(
                f"equality block {self.equality_lhs.shape} does not match "
                f"rhs {self.equality_rhs.shape} / {n} variables")
        if self.variable_bounds.shape != (n, 2):
            raise MalformedProblem(f"variable_bounds shape {self.variable_bounds.shape}, expected ({n}, 2)")
        lo, hi = self.variable_bounds[:, 0], self.variable_bounds[:, 1]
        if np.any(lo > hi):
            raise MalformedProblem("variable lower bound exceeds upper bound")


@dataclass
class LpSolution:
    status: LpStatus
    primal: Optional[np.ndarray] = None
    objective_value: Optional[float] = None

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _clean_bounds(bounds: np.ndarray) -> np.ndarray:
    """Map the +/-1e30 sentinel onto true infinities."""
    out = bounds.copy()
    out[out[:, 0] <= -INF_BOUND, 0] = -np.inf
    out[out[:, 1] >= INF_BOUND, 1] = np.inf
    return out


# scipy ships the official HiGHS bindings as a private vendored module;
# driving them directly skips per-call argument marshalling and is ~2.5x
# faster on the small MPC problems this package solves by the thousand.
# Feature-detected so the public linprog interface remains the fallback.
try:  # pragma: no cover - trivial import guard
    from scipy.optimize._highspy import _core as _highs_core
    _HIGHS_CLS = getattr(_highs_core, "_Highs", None) or getattr(_highs_core, "Highs")
except Exception:  # pragma: no cover
    _highs_core = None
    _HIGHS_CLS = None


def _solve_direct(problem: LpProblem, bounds: np.ndarray) -> Optional[LpSolution]:
    """Solve through the vendored HiGHS bindings; None asks for the fallback."""
    solver = _build_direct(problem, bounds)
    if solver is None:
        return None
    solver.run()
    status = solver.getModelStatus()
    if status == _highs_core.HighsModelStatus.kOptimal:
        sol = solver.getSolution()
        return LpSolution(LpStatus.OPTIMAL,
                          primal=np.asarray(sol.col_value, dtype=float),
                          objective_value=float(solver.getObjectiveValue()))
    if status == _highs_core.HighsModelStatus.kInfeasible:
        return LpSolution(LpStatus.INFEASIBLE)
    if status == _highs_core.HighsModelStatus.kUnbounded:
        return LpSolution(LpStatus.UNBOUNDED)
    return None  # ambiguous (e.g. kUnboundedOrInfeasible): let linprog decide


def solve_lp(problem: LpProblem) -> LpSolution:
    """Solve the LP, returning exactly one of optimal/infeasible/unbounded.

    Raises MalformedProblem on inconsistent dimensions and LpNumericalError
    if the backend terminates without a conclusive status (never observed on
    the well-scaled problems this package generates).
    """
    problem.validate()
    bounds = _clean_bounds(problem.variable_bounds)

    if _HIGHS_CLS is not None:
        solution = _solve_direct(problem, bounds)
        if solution is not None:
            return solution

    a_ub = problem.inequality_lhs if problem.inequality_rhs.size else None
    b_ub = problem.inequality_rhs if problem.inequality_rhs.size else None
    a_eq = problem.equality_lhs if problem.equality_rhs.size else None
    b_eq = problem.equality_rhs if problem.equality_rhs.size else None

    res = linprog(
        problem.objective,
        A_ub=a_ub, b_ub=b_ub,
        A_eq=a_eq, b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if res.status == 0:
        return LpSolution(LpStatus.OPTIMAL, primal=np.asarray(res.x, dtype=float),
                          objective_value=float(res.fun))
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED)
    raise LpNumericalError(f"solver returned status {res.status}: {res.message}")


def solve_lexicographic(problem: LpProblem, tie_objective: np.ndarray,
                        cap_indices: np.ndarray,
                        cap_tolerance: float = 1e-9):
    """Two-stage lexicographic solve sharing one solver instance.

    First minimizes ``problem.objective``; then, holding the sum of the
    variables in ``cap_indices`` at its optimum (plus ``cap_tolerance``),
    minimizes ``tie_objective``.  Returns (primary_value, secondary
    LpSolution).  The fallback path simply performs two solves.
    """
    problem.validate()
    bounds = _clean_bounds(problem.variable_bounds)
    n = problem.num_variables
    cap_indices = np.asarray(cap_indices, dtype=np.int32)

    if _HIGHS_CLS is not None:
        solver = _build_direct(problem, bounds)
        if solver is not None:
            solver.run()
            status = solver.getModelStatus()
            if status == _highs_core.HighsModelStatus.kInfeasible:
                return None, LpSolution(LpStatus.INFEASIBLE)
            if status == _highs_core.HighsModelStatus.kOptimal:
                primary_value = float(solver.getObjectiveValue())
                if cap_indices.size:
                    solver.addRow(-np.inf, primary_value + cap_tolerance,
                                  cap_indices.size, cap_indices,
                                  np.ones(cap_indices.size))
                solver.changeColsCost(n, np.arange(n, dtype=np.int32),
                                      np.asarray(tie_objective, dtype=float))
                solver.run()
                if solver.getModelStatus() == _highs_core.HighsModelStatus.kOptimal:
                    sol = solver.getSolution()
                    secondary = LpSolution(
                        LpStatus.OPTIMAL,
                        primal=np.asarray(sol.col_value, dtype=float),
                        objective_value=float(solver.getObjectiveValue()))
                    return primary_value, secondary
            # ambiguous status: fall through to the two-solve path

    primary = solve_lp(problem)
    if primary.status is not LpStatus.OPTIMAL:
        return None, primary
    cap_row = np.zeros((1, n))
    cap_row[0, cap_indices] = 1.0
    ineq = problem.inequality_lhs
    if sp.issparse(ineq):
        ineq = sp.vstack([ineq, sp.csr_matrix(cap_row)], format="csr")
    else:
        ineq = np.vstack([ineq, cap_row])
    capped = LpProblem(
        objective=np.asarray(tie_objective, dtype=float),
        inequality_lhs=ineq,
        inequality_rhs=np.concatenate([problem.inequality_rhs,
                                       [primary.objective_value + cap_tolerance]]),
        equality_lhs=problem.equality_lhs,
        equality_rhs=problem.equality_rhs,
        variable_bounds=problem.variable_bounds,
    )
    return primary.objective_value, solve_lp(capped)


def _build_direct(problem: LpProblem, bounds: np.ndarray):
    """A loaded HiGHS instance for the problem, or None if unusable."""
    try:
        m_ub = problem.inequality_rhs.size
        m_eq = problem.equality_rhs.size
        blocks = []
        if m_ub:
            blocks.append(problem.inequality_lhs)
        if m_eq:
            blocks.append(problem.equality_lhs)
        if blocks:
            blocks = [b if sp.issparse(b) else sp.csr_matrix(b) for b in blocks]
            a = sp.vstack(blocks, format="csr") if len(blocks) > 1 else blocks[0].tocsr()
        else:
            a = sp.csr_matrix((0, problem.num_variables))
        lp = _highs_core.HighsLp()
        lp.num_col_ = problem.num_variables
        lp.num_row_ = m_ub + m_eq
        lp.col_cost_ = problem.objective
        lp.col_lower_ = bounds[:, 0]
        lp.col_upper_ = bounds[:, 1]
        lp.row_lower_ = np.concatenate([np.full(m_ub, -np.inf), problem.equality_rhs])
        lp.row_upper_ = np.concatenate([problem.inequality_rhs, problem.equality_rhs])
        lp.a_matrix_.num_col_ = problem.num_variables
        lp.a_matrix_.num_row_ = m_ub + m_eq
        lp.a_matrix_.format_ = _highs_core.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = a.indptr
        lp.a_matrix_.index_ = a.indices
        lp.a_matrix_.value_ = a.data
        solver = _HIGHS_CLS()
        solver.setOptionValue("output_flag", False)
        solver.passModel(lp)
        return solver
    except Exception:  # pragma: no cover - defensive; fallback handles it
        return None


def feasibility_residual(problem: LpProblem, x: np.ndarray) -> float:
    """Largest constraint/bound violation of x; <= FEAS_TOL for optimal primals."""
    resid = 0.0
    if problem.inequality_rhs.size:
        lhs = problem.inequality_lhs @ x
        resid = max(resid, float(np.max(lhs - problem.inequality_rhs, initial=0.0)))
    if problem.equality_rhs.size:
        lhs = problem.equality_lhs @ x
        resid = max(resid, float(np.max(np.abs(lhs - problem.equality_rhs), initial=0.0)))
    bounds = _clean_bounds(problem.variable_bounds)
    resid = max(resid, float(np.max(bounds[:, 0] - x, initial=0.0)))
    resid = max(resid, float(np.max(x - bounds[:, 1], initial=0.0)))
    return resid


def dump_lp_text(problem: LpProblem) -> str:
    """Plain-text rendering of a problem for debugging (not a wire format)."""
    lines = ["minimize"]
    lines.append("  " + " ".join(f"{v:.12g}" for v in problem.objective))
    lines.append("subject to (<=)")
    ineq = problem.inequality_lhs
    if sp.issparse(ineq):
        ineq = ineq.toarray()
    for row, rhs in zip(np.atleast_2d(ineq), problem.inequality_rhs):
        lines.append("  " + " ".join(f"{v:.12g}" for v in row) + f" <= {rhs:.12g}")
    eq = problem.equality_lhs
    if sp.issparse(eq):
        eq = eq.toarray()
    lines.append("subject to (==)")
    for row, rhs in zip(np.atleast_2d(eq), problem.equality_rhs):
        lines.append("  " + " ".join(f"{v:.12g}" for v in row) + f" == {rhs:.12g}")
    lines.append("bounds")
    for lo, hi in problem.variable_bounds:
        lines.append(f"  {lo:.12g} {hi:.12g}")
    return "\n".join(lines) + "\n"
