"""Deconfliction toolkit: STL-constrained planning for linear-dynamics
vehicles plus two-stage pairwise collision resolution (discrete side
decisions followed by cooperative slack-minimizing MPC), with a benchmark
harness for separation-rate experiments."""

from .dynamics import (
    AdmissibilityViolation,
    ControlInput,
    LinearModel,
    Trajectory,
    VehicleState,
    rollout,
    step,
)
from .stl import (
    Always,
    And,
    BoxRegion,
    Eventually,
    InRegion,
    Not,
    Or,
    RobustnessTube,
    Separation,
    parse_formula,
    robustness,
    satisfies,
    smooth_robustness,
    tube,
)
from .trajectory import (
    ConflictScenario,
    ScenarioConfig,
    Waypoint,
    generate_conflict_pair,
    kinematic_feasible,
    min_jerk_segment,
    waypoints_to_trajectory,
)
from .conflict import ConflictReport, SeparationSide, detect, separation_satisfied, sides
from .lp import LpProblem, LpSolution, LpStatus, solve_lp

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
