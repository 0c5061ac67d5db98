"""Conflict detection and separation-side geometry tests."""

import numpy as np
import pytest

from deconflict.conflict import (LengthMismatch, SIDE_NORMALS, detect,
                                 pairwise_separation, separation_satisfied, sides)
from deconflict.dynamics import Trajectory


def _const_traj(p, k=10, dt=0.1):
    states = np.zeros((k, 6))
    states[:, :3] = p
    return Trajectory(states, dt)


def test_identical_trajectories_conflict_everywhere():
    t = _const_traj([1.0, 2.0, 3.0])
    report = detect(t, _const_traj([1.0, 2.0, 3.0]), 0.1)
    assert report.conflicting_steps == list(range(10))
    assert report.min_separation == 0.0
    assert report.first_conflict_step == 0


def test_offset_parallel_no_conflict():
    a = _const_traj([0.0, 0.0, 0.0])
    b = _const_traj([0.2, 0.0, 0.0])
    report = detect(a, b, 0.1)
    assert report.conflicting_steps == []
    assert report.first_conflict_step is None
    assert abs(report.min_separation - 0.2) < 1e-12
    assert separation_satisfied(a, b, 0.1)


def test_generated_scenario_first_conflict_near_midpoint(model):
    from tests.conftest import make_scenarios
    for s in make_scenarios(25, 0.55, model):
        report = detect(s.traj_a, s.traj_b, s.delta)
        n_half = (len(s.traj_a) - 1) // 2
        assert report.first_conflict_step is not None
        assert abs(report.first_conflict_step - n_half) <= 3


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        detect(_const_traj([0, 0, 0], k=5), _const_traj([0, 0, 0], k=6), 0.1)
    with pytest.raises(LengthMismatch):
        separation_satisfied(_const_traj([0, 0, 0], k=5), _const_traj([0, 0, 0], k=6), 0.1)


def test_sides_structure():
    family = sides(0.1)
    assert len(family) == 6
    normals = np.stack([s.normal for s in family])
    assert np.array_equal(normals, SIDE_NORMALS)
    assert all(s.offset == -0.1 for s in family)
    assert [s.index for s in family] == [1, 2, 3, 4, 5, 6]
    # each normal is a negated unit cube normal
    assert np.array_equal(np.abs(normals).sum(axis=1), np.ones(6))


def test_side_example_vertical():
    # z = (0, 0, 0.15): side with H = (0,0,-1) certifies separation
    family = sides(0.1)
    z = np.array([0.0, 0.0, 0.15])
    side = next(s for s in family if np.array_equal(s.normal, [0, 0, -1]))
    assert side.normal @ z < side.offset
    assert np.max(np.abs(z)) >= 0.1
    # z = 0 satisfies no side
    assert all(s.normal @ np.zeros(3) >= s.offset for s in family)


def test_side_soundness_exhaustive_grid():
    """(exists i: H_i z < g_i) <=> ||z||_inf >= delta, away from boundary ties."""
    delta = 0.1
    family = sides(delta)
    axis = np.arange(-0.3, 0.3001, 0.05)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    normals = np.stack([s.normal for s in family])
    lhs = grid @ normals.T  # (points, 6)
    some_side = np.any(lhs < -delta - 1e-12, axis=1)
    separated = np.max(np.abs(grid), axis=1) >= delta
    boundary = np.abs(np.max(np.abs(grid), axis=1) - delta) < 1e-9
    mask = ~boundary
    assert np.array_equal(some_side[mask], separated[mask])


def test_detect_consistent_with_separation_satisfied(model):
    from tests.conftest import make_scenarios
    for s in make_scenarios(10, 0.55, model, seed0=40):
        report = detect(s.traj_a, s.traj_b, s.delta)
        assert separation_satisfied(s.traj_a, s.traj_b, s.delta) == \
            (len(report.conflicting_steps) == 0)


def test_zero_delta_always_separated():
    a = _const_traj([0, 0, 0])
    assert separation_satisfied(a, a, 0.0)


def test_distance_exactly_delta_counts_as_separated():
    a = _const_traj([0.0, 0.0, 0.0])
    b = _const_traj([0.1, 0.0, 0.0])
    assert separation_satisfied(a, b, 0.1)
    assert detect(a, b, 0.1).conflicting_steps == []
