import numpy as np
import pytest

from deconflict import LinearModel
from deconflict.trajectory import ScenarioConfig, generate_conflict_pair


@pytest.fixture(scope="session")
def model():
    return LinearModel.double_integrator()


@pytest.fixture(scope="session")
def scenario(model):
    return generate_conflict_pair(3, ScenarioConfig(), model)


def make_scenarios(count, rho_over_delta, model, seed0=0, **kwargs):
    cfg = ScenarioConfig(rho_over_delta=rho_over_delta, **kwargs)
    return [generate_conflict_pair(seed0 + i, cfg, model) for i in range(count)]


def make_miniature_scenario(seed, model, rho_over_delta=0.8):
    """A 4-state (N=3) head-on scenario built from single min-jerk segments."""
    from deconflict.stl import RobustnessTube
    from deconflict.trajectory import (ConflictScenario, Waypoint,
                                       project_to_model, waypoints_to_trajectory)

    rng = np.random.default_rng(seed)
    delta = 0.1
    span = 0.45 + rng.uniform(0, 0.1)
    offset = rng.uniform(-0.03, 0.03, size=3)
    start_a = np.array([-span, 0.0, 0.0]) + rng.uniform(-0.05, 0.05, size=3)
    start_b = np.array([span, 0.0, 0.0]) + offset + rng.uniform(-0.05, 0.05, size=3)
    wps_a = [Waypoint(start_a, np.zeros(3), 0.0), Waypoint(start_b, np.zeros(3), 0.3)]
    wps_b = [Waypoint(start_b, np.zeros(3), 0.0), Waypoint(start_a, np.zeros(3), 0.3)]
    traj_a = project_to_model(waypoints_to_trajectory(wps_a, 0.1), model)
    traj_b = project_to_model(waypoints_to_trajectory(wps_b, 0.1), model)
    rho = rho_over_delta * delta
    return ConflictScenario(
        traj_a=traj_a, traj_b=traj_b,
        tube_a=RobustnessTube(centerline=traj_a.positions.copy(), radius=rho),
        tube_b=RobustnessTube(centerline=traj_b.positions.copy(), radius=rho),
        delta=delta, seed=seed)
