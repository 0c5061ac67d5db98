"""Spline, waypoint-map and scenario-generator tests."""

import numpy as np
import pytest

from deconflict.conflict import detect
from deconflict.dynamics import LinearModel
from deconflict.trajectory import (ConflictScenario, DegenerateDuration,
                                   RetryExhausted, ScenarioConfig, Waypoint,
                                   generate_conflict_pair, jerk_integral,
                                   kinematic_feasible, min_jerk_segment,
                                   project_to_model, read_scenarios,
                                   scenario_from_record, scenario_to_record,
                                   waypoints_to_trajectory, write_scenarios)


def _wp(p, v, t):
    return Waypoint(np.asarray(p, float), np.asarray(v, float), t)


def test_constant_segment():
    seg = min_jerk_segment(_wp([1, 2, 3], [0, 0, 0], 0.0), _wp([1, 2, 3], [0, 0, 0], 1.0), 0.1)
    assert len(seg) == 11
    assert np.allclose(seg.positions, [1, 2, 3])
    assert np.allclose(seg.velocities, 0.0)


def test_unit_move_quintic_profile():
    # 0 -> 1 m in 1 s with zero boundary velocities: x(t) = 10t^3 - 15t^4 + 6t^5
    seg = min_jerk_segment(_wp([0, 0, 0], [0, 0, 0], 0.0), _wp([1, 0, 0], [0, 0, 0], 1.0), 0.1)
    t = np.arange(11) * 0.1
    expected = 10 * t**3 - 15 * t**4 + 6 * t**5
    assert np.max(np.abs(seg.positions[:, 0] - expected)) < 1e-12
    assert abs(seg.positions[5, 0] - 0.5) < 1e-12


def test_degenerate_duration():
    with pytest.raises(DegenerateDuration):
        min_jerk_segment(_wp([0, 0, 0], [0, 0, 0], 0.0), _wp([1, 0, 0], [0, 0, 0], 0.05), 0.1)


def test_boundary_conditions_met():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = _wp(rng.normal(size=3), rng.normal(size=3), 0.0)
        b = _wp(rng.normal(size=3), rng.normal(size=3), 1.0 + rng.integers(0, 3) * 0.5)
        seg = min_jerk_segment(a, b, 0.1)
        assert np.max(np.abs(seg.positions[0] - a.position)) < 1e-10
        assert np.max(np.abs(seg.velocities[0] - a.velocity)) < 1e-10
        assert np.max(np.abs(seg.positions[-1] - b.position)) < 1e-10
        assert np.max(np.abs(seg.velocities[-1] - b.velocity)) < 1e-10


def test_jerk_optimality_against_perturbed_polynomials():
    """The zero-endpoint-acceleration quintic minimizes the squared-jerk
    integral among smooth curves matching all six boundary conditions.

    Perturbations q(t) = t^3 (T-t)^3 (a + b t + c t^2) vanish with first and
    second derivatives at both ends, so quintic + q matches the boundary
    conditions; its jerk integral must not be smaller.
    """
    rng = np.random.default_rng(1)
    t_end = 1.5
    a = _wp([0, 0, 0], [0.3, -0.2, 0.1], 0.0)
    b = _wp([1.0, 0.5, -0.4], [0.0, 0.2, 0.0], t_end)
    base = jerk_integral(a, b)

    ts = np.linspace(0, t_end, 3001)
    dt = ts[1] - ts[0]
    from deconflict.trajectory import _quintic_coefficients
    coeff = _quintic_coefficients(a.position, a.velocity, b.position, b.velocity, t_end)

    def jerk_sq_integral(extra_coeffs):
        # evaluate third derivative of quintic + perturbation numerically
        powers = ts[:, None] ** np.arange(6)[None, :]
        x = powers @ coeff
        q = (ts**3 * (t_end - ts)**3)[:, None] * (
            extra_coeffs[0][None, :] + ts[:, None] * extra_coeffs[1][None, :]
            + (ts**2)[:, None] * extra_coeffs[2][None, :])
        total = x + q
        jerk = np.gradient(np.gradient(np.gradient(total, dt, axis=0), dt, axis=0), dt, axis=0)
        interior = slice(5, -5)  # edge effects of numerical differentiation
        return np.sum(jerk[interior] ** 2) * dt

    base_numeric = jerk_sq_integral([np.zeros(3)] * 3)
    assert abs(base_numeric - base) / base < 0.02
    for _ in range(50):
        extra = [rng.normal(scale=2.0, size=3) for _ in range(3)]
        assert jerk_sq_integral(extra) >= base_numeric - 1e-9


def test_waypoint_map_linearity():
    rng = np.random.default_rng(2)
    times = [0.0, 1.2, 2.5, 4.0]
    for _ in range(10):
        w1 = [_wp(rng.normal(size=3), rng.normal(size=3), t) for t in times]
        w2 = [_wp(rng.normal(size=3), rng.normal(size=3), t) for t in times]
        alpha, beta = rng.normal(), rng.normal()
        combo = [_wp(alpha * a.position + beta * b.position,
                     alpha * a.velocity + beta * b.velocity, t)
                 for a, b, t in zip(w1, w2, times)]
        lhs = waypoints_to_trajectory(combo, 0.1).states
        rhs = alpha * waypoints_to_trajectory(w1, 0.1).states \
            + beta * waypoints_to_trajectory(w2, 0.1).states
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_zero_waypoints_zero_trajectory():
    wps = [_wp([0, 0, 0], [0, 0, 0], t) for t in (0.0, 2.0, 4.0)]
    traj = waypoints_to_trajectory(wps, 0.1)
    assert np.max(np.abs(traj.states)) == 0.0


def test_sample_count():
    wps = [_wp([0, 0, 0], [0, 0, 0], 0.0), _wp([1, 0, 0], [0, 0, 0], 2.0),
           _wp([2, 0, 0], [0, 0, 0], 4.0)]
    assert len(waypoints_to_trajectory(wps, 0.1)) == 41


def test_kinematic_feasible_bounds(model):
    wps = [_wp([0, 0, 0], [0, 0, 0], 0.0), _wp([0.1, 0, 0], [0, 0, 0], 4.0)]
    assert kinematic_feasible(waypoints_to_trajectory(wps, 0.1), model)
    # 1 m in 0.3 s from rest demands far more than a_max
    hard = min_jerk_segment(_wp([0, 0, 0], [0, 0, 0], 0.0), _wp([1, 0, 0], [0, 0, 0], 0.3), 0.1)
    assert not kinematic_feasible(hard, model)


def test_rollout_trajectories_are_feasible(model):
    from deconflict.dynamics import ControlInput, VehicleState, rollout
    rng = np.random.default_rng(4)
    controls = [ControlInput(rng.uniform(-model.a_max, model.a_max, size=3) * 0.2)
                for _ in range(30)]
    traj = rollout(model, VehicleState(np.zeros(3), np.zeros(3)), controls)
    assert kinematic_feasible(traj, model)


def test_generator_determinism(model):
    a = generate_conflict_pair(11, ScenarioConfig(), model)
    b = generate_conflict_pair(11, ScenarioConfig(), model)
    assert np.array_equal(a.traj_a.states, b.traj_a.states)
    assert np.array_equal(a.traj_b.states, b.traj_b.states)
    assert a.tube_a.radius == b.tube_a.radius


def test_generator_produces_conflicts_and_model_consistency(model):
    from deconflict.dynamics import recover_controls, rollout_array
    cfg = ScenarioConfig()
    for seed in range(30):
        s = generate_conflict_pair(seed, cfg, model)
        assert len(s.traj_a) == 41
        report = detect(s.traj_a, s.traj_b, s.delta)
        assert report.has_conflict
        assert kinematic_feasible(s.traj_a, model)
        assert kinematic_feasible(s.traj_b, model)
        # stored trajectories reproduce exactly through the model
        rebuilt = rollout_array(model, s.traj_a.states[0],
                                recover_controls(model, s.traj_a))
        assert np.max(np.abs(rebuilt.states - s.traj_a.states)) < 1e-12


def test_generator_conflict_step_coverage(model):
    """Across many seeds the conflicting steps span at least [N/2-3, N/2+3]."""
    cfg = ScenarioConfig()
    seen = set()
    for seed in range(300):
        s = generate_conflict_pair(seed, cfg, model)
        seen.update(detect(s.traj_a, s.traj_b, s.delta).conflicting_steps)
        if {17, 18, 19, 20, 21, 22, 23} <= seen:
            break
    assert {17, 18, 19, 20, 21, 22, 23} <= seen, sorted(seen)


def test_symmetric_construction_conflicts_at_midpoint(model):
    """Mirrored endpoints with the crossing at the origin conflict at N/2."""
    cfg = ScenarioConfig(cube_half_width=1e-9,
                         midpoint_jitter=np.zeros(3),
                         midpoint_time_offsets=(0.0,),
                         crossing_speed_range=(1.0, 1.0))
    s = generate_conflict_pair(0, cfg, model)
    n_half = (len(s.traj_a) - 1) // 2
    report = detect(s.traj_a, s.traj_b, s.delta)
    assert n_half in report.conflicting_steps


def test_retry_exhausted_on_bad_geometry(model):
    cfg = ScenarioConfig(
        start_center_a=np.array([-1.6, -1.6, 0.0]),
        start_center_b=np.array([-1.6, 1.6, 5.0]),  # crossing altitudes 5 m apart
        use_midpoint=False, max_retries=20)
    with pytest.raises(RetryExhausted):
        generate_conflict_pair(0, cfg, model)


def test_scenario_record_roundtrip(model, tmp_path):
    s = generate_conflict_pair(5, ScenarioConfig(), model)
    record = scenario_to_record(s)
    back = scenario_from_record(record)
    assert np.array_equal(back.traj_a.states, s.traj_a.states)
    assert back.delta == s.delta and back.seed == s.seed
    path = tmp_path / "scenarios.jsonl"
    write_scenarios(path, [s])
    loaded = read_scenarios(path)
    assert len(loaded) == 1
    assert np.array_equal(loaded[0].traj_b.states, s.traj_b.states)


def test_project_to_model_velocity_exact(model):
    wps = [_wp([0, 0, 0], [0, 0, 0], 0.0), _wp([1.5, 0.5, 0.2], [0, 0, 0], 4.0)]
    spline = waypoints_to_trajectory(wps, 0.1)
    projected = project_to_model(spline, model)
    assert np.max(np.abs(projected.velocities - spline.velocities)) < 1e-12
    assert np.max(np.abs(projected.positions - spline.positions)) < 5e-3
