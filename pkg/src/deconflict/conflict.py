"""Pairwise conflict detection and the six separation half-spaces.

Two vehicles are in conflict at step k when the inf-norm distance between
their positions is below the minimum separation delta.  Escaping the
delta-cube is certified by any one of six linear side constraints

    H_i z <= g_i      (z = p_1 - p_2,  g_i = -delta)

where H_i runs over the negated cube normals.  Satisfying a side with
strict inequality places z outside the cube, i.e. the vehicles are
separated along that axis and sign.

Side indexing (1-based, fixed everywhere in this package):
    1: +x   2: -x   3: +y   4: -y   5: +z   6: -z
meaning "vehicle 1 minus vehicle 2 exceeds delta along that axis/sign";
side 1 has H = (-1, 0, 0), side 2 has H = (+1, 0, 0), and so on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .dynamics import Trajectory

# Row i-1 is the normal H_i of side i.
SIDE_NORMALS = np.array([
    [-1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, 0.0, 1.0],
])

SIDE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")

# Margin subtracted from g in LP rows so the strict inequality of the
# conflict definition survives solver feasibility tolerances (~1e-7).
STRICT_MARGIN = 1e-6


class LengthMismatch(ValueError):
    """Trajectories compared for conflict must share length and dt."""


@dataclass(frozen=True)
class SeparationSide:
    index: int          # 1..6
    normal: np.ndarray  # H_i, one of +/- e_axis
    offset: float       # g_i = -delta

    @property
    def name(self) -> str:
        return SIDE_NAMES[self.index - 1]


@dataclass
class ConflictReport:
    conflicting_steps: List[int]
    min_separation: float
    first_conflict_step: Optional[int]

    @property
    def has_conflict(self) -> bool:
        return self.first_conflict_step is not None


def sides(delta: float) -> List[SeparationSide]:
    """The six (H_i, g_i) separation sides for a given delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return [SeparationSide(index=i + 1, normal=SIDE_NORMALS[i].copy(), offset=-delta)
            for i in range(6)]


def pairwise_separation(traj_a: Trajectory, traj_b: Trajectory) -> np.ndarray:
    """Per-step inf-norm distance between the two position trajectories."""
    if len(traj_a) != len(traj_b) or traj_a.dt != traj_b.dt:
        raise LengthMismatch(
            f"lengths {len(traj_a)}/{len(traj_b)}, dt {traj_a.dt}/{traj_b.dt}")
    return np.max(np.abs(traj_a.positions - traj_b.positions), axis=1)


def detect(traj_a: Trajectory, traj_b: Trajectory, delta: float) -> ConflictReport:
    """List all steps where the vehicles are closer than delta (strict)."""
    sep = pairwise_separation(traj_a, traj_b)
    conflicting = np.nonzero(sep < delta)[0]
    return ConflictReport(
        conflicting_steps=[int(k) for k in conflicting],
        min_separation=float(np.min(sep)),
        first_conflict_step=int(conflicting[0]) if conflicting.size else None,
    )


def separation_satisfied(traj_a: Trajectory, traj_b: Trajectory, delta: float) -> bool:
    """True iff every step keeps inf-norm distance >= delta (distance == delta counts as separated)."""
    if delta <= 0:
        return True
    return bool(np.all(pairwise_separation(traj_a, traj_b) >= delta))
