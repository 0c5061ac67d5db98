"""Discrete-time linear vehicle model.

The model is a per-axis double integrator obtained from the standard
near-hover linearization: position and velocity per axis, acceleration
command as input.

    x_{k+1} = A x_k + B u_k,   p_k = C x_k

with, per axis, A = [[1, dt], [0, 1]] and B = [dt^2/2, dt].  Admissible
sets are boxes: |v| <= v_max componentwise (state set X) and
|u| <= a_max componentwise (input set U).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class AdmissibilityViolation(RuntimeError):
    """A rollout left the admissible state set."""


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray  # (3,) meters
    velocity: np.ndarray  # (3,) m/s

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_vector(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(position=x[:3].copy(), velocity=x[3:6].copy())


@dataclass(frozen=True)
class ControlInput:
    command: np.ndarray  # (3,) m/s^2 per-axis acceleration


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray  # (6, 6)
    B: np.ndarray  # (6, 3)
    C: np.ndarray  # (3, 6) position observation
    dt: float
    v_max: float
    a_max: float

    @classmethod
    def double_integrator(cls, dt: float = 0.1, v_max: float = 3.0, a_max: float = 5.0) -> "LinearModel":
        eye = np.eye(3)
        a = np.block([[eye, dt * eye], [np.zeros((3, 3)), eye]])
        b = np.vstack([0.5 * dt * dt * eye, dt * eye])
        c = np.hstack([eye, np.zeros((3, 3))])
        return cls(A=a, B=b, C=c, dt=dt, v_max=v_max, a_max=a_max)

    def state_admissible(self, x: VehicleState, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(x.velocity) <= self.v_max + tol))

    def input_admissible(self, u: ControlInput, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(u.command) <= self.a_max + tol))


@dataclass
class Trajectory:
    """Uniformly sampled state sequence; the common currency between modules."""

    states: np.ndarray  # (K, 6): position columns 0..2, velocity columns 3..5
    dt: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 6 or self.states.shape[0] < 1:
            raise ValueError(f"expected (K, 6) state array, got {self.states.shape}")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :3]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 3:]

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def state_at(self, k: int) -> VehicleState:
        return VehicleState.from_vector(self.states[k])

    def copy(self) -> "Trajectory":
        return Trajectory(states=self.states.copy(), dt=self.dt)


def step(model: LinearModel, x: VehicleState, u: ControlInput) -> VehicleState:
    """One transition x_{k+1} = A x_k + B u_k."""
    nxt = model.A @ x.as_vector() + model.B @ np.asarray(u.command, dtype=float)
    return VehicleState.from_vector(nxt)


def rollout(model: LinearModel, x0: VehicleState, controls: Sequence[ControlInput]) -> Trajectory:
    """Integrate a control sequence; raises AdmissibilityViolation if a state leaves X."""
    states = np.empty((len(controls) + 1, 6))
    states[0] = x0.as_vector()
    for k, u in enumerate(controls):
        states[k + 1] = model.A @ states[k] + model.B @ np.asarray(u.command, dtype=float)
        if np.any(np.abs(states[k + 1, 3:]) > model.v_max + 1e-9):
            raise AdmissibilityViolation(f"velocity bound exceeded at step {k + 1}")
    return Trajectory(states=states, dt=model.dt)


def rollout_array(model: LinearModel, x0: np.ndarray, commands: np.ndarray,
                  check_admissible: bool = True) -> Trajectory:
    """Vectorized rollout from a (6,) state and an (N, 3) command array."""
    commands = np.asarray(commands, dtype=float)
    states = np.empty((commands.shape[0] + 1, 6))
    states[0] = np.asarray(x0, dtype=float)
    for k in range(commands.shape[0]):
        states[k + 1] = model.A @ states[k] + model.B @ commands[k]
    if check_admissible and np.any(np.abs(states[1:, 3:]) > model.v_max + 1e-9):
        bad = int(np.argmax(np.any(np.abs(states[1:, 3:]) > model.v_max + 1e-9, axis=1))) + 1
        raise AdmissibilityViolation(f"velocity bound exceeded at step {bad}")
    return Trajectory(states=states, dt=model.dt)


def recover_controls(model: LinearModel, trajectory: Trajectory) -> np.ndarray:
    """Invert B on each step's velocity residual: (K-1, 3) command array.

    Exact (to rounding) when the trajectory was produced by a rollout of
    this model.
    """
    v = trajectory.velocities
    return (v[1:] - v[:-1]) / model.dt
