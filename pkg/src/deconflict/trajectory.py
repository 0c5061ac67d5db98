"""Minimum-jerk segments, the linear waypoint-to-trajectory map, and the
random conflicting-pair generator used by the benchmark harness.

Each segment between consecutive waypoints is the quintic polynomial (per
axis) matching the boundary positions and velocities with accelerations
pinned to zero at both ends; that quintic is the unique minimizer of the
integral of squared jerk under those six boundary conditions.  Because the
quintic coefficients are linear in the boundary values, the sampled
trajectory is an exactly linear function of the waypoint coordinates.

Generated conflict scenarios are post-processed to be dynamics-consistent:
accelerations are recovered from the sampled velocities and the state
sequence is rebuilt through the vehicle model, so downstream optimizers can
reproduce the stored trajectories exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import conflict as conflict_mod
from .dynamics import LinearModel, Trajectory, recover_controls, rollout_array
from .stl import RobustnessTube


class DegenerateDuration(ValueError):
    """Segment shorter than one sample period."""


class RetryExhausted(RuntimeError):
    """Scenario resampling failed repeatedly; the cube geometry is off."""


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray  # (3,)
    velocity: np.ndarray  # (3,)
    time: float           # seconds

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))


def _quintic_coefficients(p0, v0, p1, v1, duration: float) -> np.ndarray:
    """Coefficient rows (6, 3): x(t) = sum_i coeff[i] * t**i per axis.

    Boundary conditions: positions and velocities as given, accelerations
    zero at both endpoints.
    """
    t = duration
    rows = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, t, t**2, t**3, t**4, t**5],
        [0, 1, 2 * t, 3 * t**2, 4 * t**3, 5 * t**4],
        [0, 0, 2, 6 * t, 12 * t**2, 20 * t**3],
    ])
    rhs = np.stack([p0, v0, np.zeros(3), p1, v1, np.zeros(3)])
    return np.linalg.solve(rows, rhs)


def min_jerk_segment(start: Waypoint, end: Waypoint, dt: float) -> Trajectory:
    """Sample the jerk-minimizing quintic between two waypoints every dt.

    The duration must be (close to) an integer number of samples so
    consecutive segments concatenate onto one uniform grid.
    """
    duration = end.time - start.time
    if duration < dt - 1e-12:
        raise DegenerateDuration(f"segment duration {duration:.6g} < dt {dt:.6g}")
    n = round(duration / dt)
    if abs(n * dt - duration) > 1e-6:
        raise ValueError(f"segment duration {duration!r} is not a multiple of dt {dt!r}")
    coeff = _quintic_coefficients(start.position, start.velocity,
                                  end.position, end.velocity, duration)
    dcoeff = coeff[1:] * np.arange(1, 6)[:, None]
    t = np.arange(n + 1) * dt
    powers = t[:, None] ** np.arange(6)[None, :]
    positions = powers @ coeff
    velocities = powers[:, :5] @ dcoeff
    return Trajectory(states=np.hstack([positions, velocities]), dt=dt)


def waypoints_to_trajectory(waypoints: Sequence[Waypoint], dt: float) -> Trajectory:
    """Concatenate min-jerk segments; linear in the waypoint coordinates."""
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    times = [w.time for w in waypoints]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("waypoint times must be strictly increasing")
    pieces = []
    for a, b in zip(waypoints, waypoints[1:]):
        seg = min_jerk_segment(a, b, dt)
        pieces.append(seg.states if not pieces else seg.states[1:])
    return Trajectory(states=np.vstack(pieces), dt=dt)


def jerk_integral(waypoint_a: Waypoint, waypoint_b: Waypoint) -> float:
    """Integral of squared jerk of the connecting quintic, summed over axes."""
    duration = waypoint_b.time - waypoint_a.time
    coeff = _quintic_coefficients(waypoint_a.position, waypoint_a.velocity,
                                  waypoint_b.position, waypoint_b.velocity, duration)
    # jerk(t) = 6 a3 + 24 a4 t + 60 a5 t^2
    a3, a4, a5 = coeff[3], coeff[4], coeff[5]
    t = duration
    total = (36 * a3**2 * t + 288 * a3 * a4 * t**2 / 2
             + (576 * a4**2 + 720 * a3 * a5) * t**3 / 3
             + 2880 * a4 * a5 * t**4 / 4 + 3600 * a5**2 * t**5 / 5)
    return float(np.sum(total))


def kinematic_feasible(trajectory: Trajectory, model: LinearModel, tol: float = 1e-9) -> bool:
    """True iff sampled velocities and implied accelerations fit the admissible sets."""
    if np.any(np.abs(trajectory.velocities) > model.v_max + tol):
        return False
    accel = recover_controls(model, trajectory)
    return bool(np.all(np.abs(accel) <= model.a_max + tol))


def project_to_model(trajectory: Trajectory, model: LinearModel) -> Trajectory:
    """Rebuild the trajectory through the vehicle model.

    Accelerations are recovered from sampled velocities and re-integrated
    from the initial state, making the result exactly reproducible by
    ``rollout``; positions shift by the (small) spline-vs-model quadrature
    difference.
    """
    commands = recover_controls(model, trajectory)
    return rollout_array(model, trajectory.states[0], commands, check_admissible=False)


@dataclass
class ConflictScenario:
    """A seeded pair of crossing trajectories with their robustness tubes."""

    traj_a: Trajectory
    traj_b: Trajectory
    tube_a: RobustnessTube
    tube_b: RobustnessTube
    delta: float
    seed: int

    @property
    def num_steps(self) -> int:
        """Look-ahead N; trajectories carry N+1 states."""
        return len(self.traj_a) - 1

    def difference_sequence(self) -> np.ndarray:
        """z_k = p_a,k - p_b,k, shape (N+1, 3)."""
        return self.traj_a.positions - self.traj_b.positions


@dataclass
class ScenarioConfig:
    """Geometry and sampling knobs for the conflicting-pair generator.

    The default geometry sends two vehicles through a common collision
    point at mid-horizon from mirrored start/end cubes.  Cube centers are
    chosen so the min-jerk speeds stay inside the default admissible sets.
    """

    duration: float = 4.0
    dt: float = 0.1
    delta: float = 0.1
    rho_over_delta: float = 0.55
    collision_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cube_half_width: float = 0.5
    start_center_a: np.ndarray = field(default_factory=lambda: np.array([-1.6, -1.6, 0.0]))
    start_center_b: np.ndarray = field(default_factory=lambda: np.array([-1.6, 1.6, 0.0]))
    # Per-axis jitter of each vehicle's crossing-point passage; the vertical
    # spread controls how often purely vertical escapes are range-limited.
    midpoint_jitter: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.11]))
    # Each vehicle's crossing time is T/2 plus one of these grid-aligned
    # offsets; combined with slow crossings this spreads the conflict window.
    midpoint_time_offsets: tuple = (-0.2, -0.1, 0.0, 0.1, 0.2)
    crossing_speed_range: tuple = (0.2, 1.2)
    use_midpoint: bool = True
    max_retries: int = 100

    @property
    def rho(self) -> float:
        return self.rho_over_delta * self.delta


def _sample_cube(rng: np.random.Generator, center: np.ndarray, half_width: float) -> np.ndarray:
    return center + rng.uniform(-half_width, half_width, size=3)


def _build_crossing(rng: np.random.Generator, config: ScenarioConfig,
                    start_center: np.ndarray, model: LinearModel) -> Trajectory:
    start = _sample_cube(rng, np.asarray(start_center, float), config.cube_half_width)
    end = _sample_cube(rng, -np.asarray(start_center, float), config.cube_half_width)
    t_total = config.duration
    waypoints = [Waypoint(position=start, velocity=np.zeros(3), time=0.0)]
    if config.use_midpoint:
        jitter = np.asarray(config.midpoint_jitter, float)
        mid_pos = np.asarray(config.collision_point, float) + \
            rng.uniform(-jitter, jitter, size=3)
        speed_scale = rng.uniform(*config.crossing_speed_range)
        mid_vel = speed_scale * (end - start) / t_total
        offsets = config.midpoint_time_offsets
        mid_time = t_total / 2 + offsets[rng.integers(0, len(offsets))]
        waypoints.append(Waypoint(position=mid_pos, velocity=mid_vel, time=mid_time))
    waypoints.append(Waypoint(position=end, velocity=np.zeros(3), time=t_total))
    spline = waypoints_to_trajectory(waypoints, config.dt)
    return project_to_model(spline, model)


def generate_conflict_pair(seed: int, config: Optional[ScenarioConfig] = None,
                           model: Optional[LinearModel] = None) -> ConflictScenario:
    """Draw a seeded scenario whose trajectories conflict (inf-norm < delta).

    Resamples on kinematically infeasible or conflict-free draws; raises
    RetryExhausted after config.max_retries attempts.
    """
    config = config or ScenarioConfig()
    model = model or LinearModel.double_integrator(dt=config.dt)
    if model.dt != config.dt:
        raise ValueError("model.dt must match config.dt")
    rng = np.random.default_rng(seed)
    for _ in range(config.max_retries):
        traj_a = _build_crossing(rng, config, config.start_center_a, model)
        traj_b = _build_crossing(rng, config, config.start_center_b, model)
        if not (kinematic_feasible(traj_a, model) and kinematic_feasible(traj_b, model)):
            continue
        report = conflict_mod.detect(traj_a, traj_b, config.delta)
        if not report.has_conflict:
            continue
        rho = config.rho
        return ConflictScenario(
            traj_a=traj_a,
            traj_b=traj_b,
            tube_a=RobustnessTube(centerline=traj_a.positions.copy(), radius=rho),
            tube_b=RobustnessTube(centerline=traj_b.positions.copy(), radius=rho),
            delta=config.delta,
            seed=seed,
        )
    raise RetryExhausted(
        f"no conflicting kinematically-feasible pair after {config.max_retries} draws (seed {seed})")


# --- scenario file format (JSON lines) ---------------------------------------

def scenario_to_record(scenario: ConflictScenario) -> dict:
    return {
        "seed": scenario.seed,
        "dt": scenario.traj_a.dt,
        "delta": scenario.delta,
        "rho_a": scenario.tube_a.radius,
        "rho_b": scenario.tube_b.radius,
        "states_a": scenario.traj_a.states.ravel().tolist(),
        "states_b": scenario.traj_b.states.ravel().tolist(),
    }


def scenario_from_record(record: dict) -> ConflictScenario:
    dt = float(record["dt"])
    states_a = np.asarray(record["states_a"], dtype=float).reshape(-1, 6)
    states_b = np.asarray(record["states_b"], dtype=float).reshape(-1, 6)
    traj_a = Trajectory(states=states_a, dt=dt)
    traj_b = Trajectory(states=states_b, dt=dt)
    return ConflictScenario(
        traj_a=traj_a,
        traj_b=traj_b,
        tube_a=RobustnessTube(centerline=traj_a.positions.copy(), radius=float(record["rho_a"])),
        tube_b=RobustnessTube(centerline=traj_b.positions.copy(), radius=float(record["rho_b"])),
        delta=float(record["delta"]),
        seed=int(record["seed"]),
    )


def write_scenarios(path, scenarios: Sequence[ConflictScenario]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenarios:
            fh.write(json.dumps(scenario_to_record(s)) + "\n")


def read_scenarios(path) -> List[ConflictScenario]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(scenario_from_record(json.loads(line)))
    return out
