"""Conflict-resolution policies: one separation side per look-ahead step.

Four interchangeable deciders produce the decision sequence consumed by the
cooperative MPC stage:

* RandomPolicy   -- i.i.d. uniform sides, the weakest baseline;
* GreedyPolicy   -- per step, the side with the largest residual
                    r_i = g_i - H_i z (most room), falling back to a preset
                    maneuver at steps where every residual is negative
                    (i.e. inside the conflict);
* MilpOraclePolicy -- side labels extracted from the exact solver;
* LearnedPolicy  -- per-step argmax of a recurrent net run on the
                    difference sequence z (see lstm.py).

Residual convention: g_i = -delta, so r_i >= 0 exactly when the vehicles
are already separated along side i.  Ties take the lowest side index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import lstm as lstm_mod
from .conflict import SIDE_NORMALS
from .dynamics import LinearModel
from .milp import DecisionSequence, MilpBudget, MilpStatus, extract_labels, solve_milp
from .trajectory import ConflictScenario


class OracleInfeasible(RuntimeError):
    """The exact solver found no deconflicting decision sequence."""

    def __init__(self, status: MilpStatus):
        super().__init__(f"oracle status: {status.value}")
        self.status = status


def greedy_residuals(z: np.ndarray, delta: float) -> np.ndarray:
    """The six side residuals r_i = g_i - H_i z for one position difference."""
    return -delta - SIDE_NORMALS @ np.asarray(z, dtype=float)


def greedy_decisions(z_sequence: np.ndarray, delta: float, preset: int = 5) -> np.ndarray:
    """Per-step argmax-residual side, preset maneuver inside the conflict."""
    if not 1 <= preset <= 6:
        raise ValueError("preset side must be in 1..6")
    residuals = -delta - np.asarray(z_sequence, dtype=float) @ SIDE_NORMALS.T  # (K, 6)
    choice = np.argmax(residuals, axis=1) + 1
    blocked = residuals.max(axis=1) < 0.0
    choice[blocked] = preset
    return choice


@dataclass(frozen=True)
class RandomPolicy:
    seed: int = 0


@dataclass(frozen=True)
class GreedyPolicy:
    preset: int = 5  # +z side: climb over unless some side is already open

    def __post_init__(self):
        if not 1 <= self.preset <= 6:
            raise ValueError("preset side must be in 1..6")


@dataclass(frozen=True)
class MilpOraclePolicy:
    budget: MilpBudget = field(default_factory=MilpBudget)


@dataclass(frozen=True)
class LearnedPolicy:
    weights: "lstm_mod.NetWeights"


PolicyKind = Union[RandomPolicy, GreedyPolicy, MilpOraclePolicy, LearnedPolicy]


def resolve(policy: PolicyKind, scenario: ConflictScenario,
            model: Optional[LinearModel] = None) -> DecisionSequence:
    """Produce the length-(N+1) decision sequence for one scenario."""
    z = scenario.difference_sequence()
    if isinstance(policy, RandomPolicy):
        # Mix the policy seed with the scenario seed so evaluation runs are
        # reproducible yet scenarios stay independent.
        rng = np.random.default_rng((policy.seed, scenario.seed))
        return DecisionSequence(rng.integers(1, 7, size=z.shape[0]))
    if isinstance(policy, GreedyPolicy):
        return DecisionSequence(greedy_decisions(z, scenario.delta, policy.preset))
    if isinstance(policy, MilpOraclePolicy):
        model = model or LinearModel.double_integrator(dt=scenario.traj_a.dt)
        result = solve_milp(scenario, model, policy.budget)
        if result.status is not MilpStatus.FEASIBLE:
            raise OracleInfeasible(result.status)
        return extract_labels(result)
    if isinstance(policy, LearnedPolicy):
        return lstm_mod.infer(policy.weights, z)
    raise TypeError(f"unknown policy {policy!r}")


def policy_name(policy: PolicyKind) -> str:
    return {RandomPolicy: "random", GreedyPolicy: "greedy",
            MilpOraclePolicy: "milp", LearnedPolicy: "learned"}[type(policy)]
