"""LP solver tests, including the brute-force vertex-enumeration oracle."""

import itertools

import numpy as np
import pytest

from deconflict.lp import (FEAS_TOL, INF_BOUND, LpProblem, LpStatus,
                           MalformedProblem, dump_lp_text, feasibility_residual,
                           solve_lp)


def test_corner_forced_by_bounds():
    prob = LpProblem.create([1.0, 1.0], variable_bounds=[[1.0, INF_BOUND], [2.0, INF_BOUND]])
    sol = solve_lp(prob)
    assert sol.status is LpStatus.OPTIMAL
    assert np.allclose(sol.primal, [1.0, 2.0])
    assert abs(sol.objective_value - 3.0) < 1e-9


def test_contradictory_rows_infeasible():
    # x <= 0 and x >= 1 stated as inequality rows
    prob = LpProblem.create([1.0], inequality_lhs=[[1.0], [-1.0]],
                            inequality_rhs=[0.0, -1.0])
    assert solve_lp(prob).status is LpStatus.INFEASIBLE


def test_unbounded():
    prob = LpProblem.create([-1.0], variable_bounds=[[0.0, INF_BOUND]])
    assert solve_lp(prob).status is LpStatus.UNBOUNDED


def test_malformed_dimensions():
    with pytest.raises(MalformedProblem):
        LpProblem.create([1.0, 2.0], inequality_lhs=[[1.0]], inequality_rhs=[1.0])
    with pytest.raises(MalformedProblem):
        LpProblem.create([1.0], variable_bounds=[[2.0, 1.0]])


def _enumerate_vertices(c, a_ub, b_ub, lo, hi):
    """Brute-force oracle: check every potential basic feasible solution.

    All constraints (rows and bounds) are collected as halfspaces; every
    n-subset with invertible equality system proposes a vertex, which is
    kept if feasible.  Returns the best objective value or None.
    """
    n = c.size
    rows = [(*a_ub[i], b_ub[i]) for i in range(a_ub.shape[0])]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((*e, hi[j]))
        rows.append((*-e, -lo[j]))
    rows = np.asarray(rows)
    best = None
    for subset in itertools.combinations(range(rows.shape[0]), n):
        a = rows[list(subset), :n]
        b = rows[list(subset), n]
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            continue
        if np.all(rows[:, :n] @ x <= rows[:, n] + 1e-9):
            value = float(c @ x)
            if best is None or value < best:
                best = value
    return best


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n, m = 5, 8
        c = rng.normal(size=n)
        a_ub = rng.normal(size=(m, n))
        b_ub = rng.uniform(0.5, 2.0, size=m)  # origin strictly feasible
        lo = np.full(n, -5.0)
        hi = np.full(n, 5.0)
        prob = LpProblem.create(c, a_ub, b_ub, variable_bounds=np.column_stack([lo, hi]))
        sol = solve_lp(prob)
        assert sol.status is LpStatus.OPTIMAL, f"trial {trial}"
        oracle = _enumerate_vertices(c, a_ub, b_ub, lo, hi)
        assert oracle is not None
        assert abs(sol.objective_value - oracle) < 1e-8, f"trial {trial}"
        assert feasibility_residual(prob, sol.primal) <= FEAS_TOL


def test_optimal_feasibility_and_local_optimality():
    rng = np.random.default_rng(7)
    for trial in range(10):
        n, m = 4, 6
        c = rng.normal(size=n)
        a_ub = rng.normal(size=(m, n))
        b_ub = rng.uniform(0.5, 2.0, size=m)
        bounds = np.column_stack([np.full(n, -4.0), np.full(n, 4.0)])
        prob = LpProblem.create(c, a_ub, b_ub, variable_bounds=bounds)
        sol = solve_lp(prob)
        assert sol.status is LpStatus.OPTIMAL
        assert feasibility_residual(prob, sol.primal) <= 1e-7
        assert abs(c @ sol.primal - sol.objective_value) < 1e-9
        # no feasible point in a small neighborhood improves by more than 1e-6
        for _ in range(200):
            cand = sol.primal + rng.uniform(-1e-4, 1e-4, size=n)
            if feasibility_residual(prob, cand) <= 0:
                assert c @ cand >= sol.objective_value - 1e-6


def test_deterministic_resolve():
    rng = np.random.default_rng(3)
    c = rng.normal(size=6)
    a_ub = rng.normal(size=(9, 6))
    b_ub = rng.uniform(1.0, 2.0, size=9)
    bounds = np.column_stack([np.full(6, -3.0), np.full(6, 3.0)])
    prob = LpProblem.create(c, a_ub, b_ub, variable_bounds=bounds)
    first = solve_lp(prob)
    for _ in range(3):
        again = solve_lp(prob)
        assert again.status is first.status
        assert again.objective_value == first.objective_value  # bit-identical


def test_status_trichotomy_on_constructed_problems():
    # feasible bounded, infeasible, unbounded: exactly one status each
    feasible = LpProblem.create([1.0, -1.0], inequality_lhs=[[1.0, 1.0]],
                                inequality_rhs=[1.0],
                                variable_bounds=[[0, 1], [0, 1]])
    infeasible = LpProblem.create([1.0], equality_lhs=[[1.0], [1.0]],
                                  equality_rhs=[0.0, 1.0])
    unbounded = LpProblem.create([0.0, -1.0], inequality_lhs=[[1.0, 0.0]],
                                 inequality_rhs=[1.0])
    assert solve_lp(feasible).status is LpStatus.OPTIMAL
    assert solve_lp(infeasible).status is LpStatus.INFEASIBLE
    assert solve_lp(unbounded).status is LpStatus.UNBOUNDED


def test_sentinel_bounds_treated_as_infinite():
    prob = LpProblem.create([1.0], variable_bounds=[[-INF_BOUND, INF_BOUND]],
                            inequality_lhs=[[-1.0]], inequality_rhs=[-2.0])
    sol = solve_lp(prob)
    assert sol.status is LpStatus.OPTIMAL
    assert abs(sol.primal[0] - 2.0) < 1e-9


def test_lp_text_dump_roundtrips_values():
    prob = LpProblem.create([1.0, 2.0], inequality_lhs=[[1.0, 1.0]], inequality_rhs=[3.0],
                            variable_bounds=[[0.0, 5.0], [0.0, 5.0]])
    text = dump_lp_text(prob)
    assert "minimize" in text and "bounds" in text
    assert "1 1 <= 3" in text
