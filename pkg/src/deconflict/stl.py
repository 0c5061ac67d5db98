"""Signal temporal logic over sampled position trajectories.

Formulas are expression trees over two kinds of position atoms (box
membership and pairwise separation) combined with Not/And/Or and the
bounded temporal operators Always and Eventually.  Robustness follows the
usual quantitative semantics with inf-norm predicate distances: a positive
value certifies satisfaction, a negative value certifies violation, zero is
inconclusive.

Three evaluation paths are kept deliberately separate so they can
cross-check each other in tests:

* ``robustness``        exact semantics (hard min/max),
* ``satisfies``         an independent boolean evaluator,
* ``smooth_robustness`` a differentiable surrogate where every logical and
  temporal min/max is replaced by a temperature-controlled log-sum-exp.
  Atoms are evaluated exactly in both paths, so a bare predicate has zero
  smoothing error; every smoothed node contributes at most ln(m)/T error
  for m operands.

Evaluation accepts a single trajectory or a list of trajectories (for
multi-vehicle formulas); atoms name the vehicle they constrain.

Time intervals are given in seconds and converted to step indices with
floor for the interval start and ceil for the end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dynamics import Trajectory


class HorizonExceeded(ValueError):
    """Trajectory too short for the formula's time horizon."""


class NonPositiveRobustness(ValueError):
    """A robustness tube requires strictly positive robustness."""


class FormulaSyntaxError(ValueError):
    """Malformed formula text."""


GOAL = "goal"
UNSAFE = "unsafe"


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box with a polarity tag (goal to reach / unsafe to avoid)."""

    center: np.ndarray       # (3,)
    half_widths: np.ndarray  # (3,), > 0
    polarity: str = GOAL

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_widths", np.asarray(self.half_widths, dtype=float))
        if np.any(self.half_widths <= 0):
            raise ValueError("half_widths must be positive")

    def membership_margin(self, points: np.ndarray) -> np.ndarray:
        """Signed inf-norm margin of points (..., 3) to the box boundary."""
        d = self.half_widths - np.abs(points - self.center)
        return np.min(d, axis=-1)


@dataclass(frozen=True)
class RobustnessTube:
    """Per-step inf-norm box of a fixed radius around a position centerline."""

    centerline: np.ndarray  # (K, 3)
    radius: float

    def contains(self, positions: np.ndarray, tol: float = 0.0) -> bool:
        dev = np.max(np.abs(np.asarray(positions) - self.centerline))
        return bool(dev <= self.radius + tol)


# --- formula nodes ---------------------------------------------------------

@dataclass(frozen=True)
class InRegion:
    region: BoxRegion
    vehicle: int = 0


@dataclass(frozen=True)
class Separation:
    """Inf-norm distance between two vehicles stays >= margin."""

    vehicle_a: int
    vehicle_b: int
    margin: float


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: Tuple["Formula", ...]

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (tuple, list)):
            children = tuple(children[0])
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Or:
    children: Tuple["Formula", ...]

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (tuple, list)):
            children = tuple(children[0])
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Always:
    lo: float
    hi: float
    child: "Formula"


@dataclass(frozen=True)
class Eventually:
    lo: float
    hi: float
    child: "Formula"


Formula = Union[InRegion, Separation, Not, And, Or, Always, Eventually]

_EPS = 1e-9


def _steps(t: float, dt: float, mode: str) -> int:
    x = t / dt
    return int(np.floor(x + _EPS)) if mode == "floor" else int(np.ceil(x - _EPS))


def _interval_steps(node, dt: float) -> Tuple[int, int]:
    if node.lo < 0 or node.hi < node.lo:
        raise ValueError(f"bad interval [{node.lo}, {node.hi}]")
    lo = _steps(node.lo, dt, "floor")
    hi = _steps(node.hi, dt, "ceil")
    return lo, hi


def horizon(formula: Formula, dt: float) -> int:
    """Formula horizon in steps: evaluating at step k needs samples up to k + horizon."""
    if isinstance(formula, (InRegion, Separation)):
        return 0
    if isinstance(formula, Not):
        return horizon(formula.child, dt)
    if isinstance(formula, (And, Or)):
        return max(horizon(c, dt) for c in formula.children)
    if isinstance(formula, (Always, Eventually)):
        _, hi = _interval_steps(formula, dt)
        return hi + horizon(formula.child, dt)
    raise TypeError(f"not a formula node: {formula!r}")


def horizon_seconds(formula: Formula, dt: float) -> float:
    return horizon(formula, dt) * dt


def _positions(signal) -> Tuple[np.ndarray, float]:
    """Normalize a trajectory / list of trajectories to a (V, K, 3) array."""
    if isinstance(signal, Trajectory):
        return signal.positions[None, :, :], signal.dt
    if isinstance(signal, (list, tuple)):
        if not signal or not isinstance(signal[0], Trajectory):
            raise TypeError("expected Trajectory or a non-empty sequence of them")
        dt = signal[0].dt
        k = len(signal[0])
        if any(len(t) != k or t.dt != dt for t in signal):
            raise ValueError("all trajectories must share length and dt")
        return np.stack([t.positions for t in signal]), dt
    raise TypeError(f"cannot evaluate formulas on {type(signal)!r}")


def _atom_values(node, p: np.ndarray) -> np.ndarray:
    """Per-step robustness of an atom over positions (V, K, 3) -> (K,)."""
    if isinstance(node, InRegion):
        if node.vehicle >= p.shape[0]:
            raise ValueError(f"formula names vehicle {node.vehicle}, signal has {p.shape[0]}")
        return node.region.membership_margin(p[node.vehicle])
    if isinstance(node, Separation):
        if max(node.vehicle_a, node.vehicle_b) >= p.shape[0]:
            raise ValueError("separation atom names a vehicle the signal lacks")
        diff = p[node.vehicle_a] - p[node.vehicle_b]
        return np.max(np.abs(diff), axis=-1) - node.margin
    raise TypeError(f"not an atom: {node!r}")


def _rob(node: Formula, p: np.ndarray, dt: float) -> np.ndarray:
    """Exact robustness array; entry k is the robustness evaluated at step k."""
    if isinstance(node, (InRegion, Separation)):
        return _atom_values(node, p)
    if isinstance(node, Not):
        return -_rob(node.child, p, dt)
    if isinstance(node, (And, Or)):
        arrays = [_rob(c, p, dt) for c in node.children]
        n = min(a.shape[0] for a in arrays)
        stacked = np.stack([a[:n] for a in arrays])
        return np.min(stacked, axis=0) if isinstance(node, And) else np.max(stacked, axis=0)
    if isinstance(node, (Always, Eventually)):
        lo, hi = _interval_steps(node, dt)
        child = _rob(node.child, p, dt)
        if child.shape[0] <= hi:
            raise HorizonExceeded(
                f"need {hi + 1} child samples for interval [{node.lo}, {node.hi}], have {child.shape[0]}")
        windows = sliding_window_view(child[lo:], hi - lo + 1)
        reducer = np.min if isinstance(node, Always) else np.max
        return reducer(windows, axis=1)
    raise TypeError(f"not a formula node: {node!r}")


def robustness(formula: Formula, signal) -> float:
    """Exact discrete-time robustness of the signal at step 0."""
    p, dt = _positions(signal)
    h = horizon(formula, dt)
    if p.shape[1] <= h:
        raise HorizonExceeded(
            f"trajectory has {p.shape[1]} samples, formula horizon needs {h + 1}")
    return float(_rob(formula, p, dt)[0])


# --- independent boolean path ----------------------------------------------

def _sat(node: Formula, p: np.ndarray, dt: float) -> np.ndarray:
    if isinstance(node, (InRegion, Separation)):
        return _atom_values(node, p) >= 0.0
    if isinstance(node, Not):
        return ~_sat(node.child, p, dt)
    if isinstance(node, (And, Or)):
        arrays = [_sat(c, p, dt) for c in node.children]
        n = min(a.shape[0] for a in arrays)
        stacked = np.stack([a[:n] for a in arrays])
        return np.all(stacked, axis=0) if isinstance(node, And) else np.any(stacked, axis=0)
    if isinstance(node, (Always, Eventually)):
        lo, hi = _interval_steps(node, dt)
        child = _sat(node.child, p, dt)
        if child.shape[0] <= hi:
            raise HorizonExceeded("trajectory too short for boolean evaluation")
        windows = sliding_window_view(child[lo:], hi - lo + 1)
        return np.all(windows, axis=1) if isinstance(node, Always) else np.any(windows, axis=1)
    raise TypeError(f"not a formula node: {node!r}")


def satisfies(formula: Formula, signal) -> bool:
    """Boolean satisfaction; a code path independent of robustness()."""
    p, dt = _positions(signal)
    h = horizon(formula, dt)
    if p.shape[1] <= h:
        raise HorizonExceeded("trajectory too short")
    return bool(_sat(formula, p, dt)[0])


# --- smooth path ------------------------------------------------------------

def _softmin(stacked: np.ndarray, temperature: float, axis: int) -> np.ndarray:
    return -_softmax_raw(-stacked, temperature, axis)


def _softmax_raw(stacked: np.ndarray, temperature: float, axis: int) -> np.ndarray:
    scaled = temperature * stacked
    peak = np.max(scaled, axis=axis, keepdims=True)
    out = (peak.squeeze(axis) + np.log(np.sum(np.exp(scaled - peak), axis=axis))) / temperature
    return out


def _lse_weights(stacked: np.ndarray, temperature: float, axis: int, mode: str) -> np.ndarray:
    scaled = temperature * stacked if mode == "max" else -temperature * stacked
    scaled = scaled - np.max(scaled, axis=axis, keepdims=True)
    w = np.exp(scaled)
    return w / np.sum(w, axis=axis, keepdims=True)


def _smooth(node: Formula, p: np.ndarray, dt: float, temperature: float,
            grad_sink=None) -> Tuple[np.ndarray, Callable]:
    """Smooth robustness array plus an adjoint-push closure for gradients.

    The returned ``push(adjoint)`` accumulates d(adjoint . values)/d positions
    into ``grad_sink`` (a (V, K, 3) array) when one is supplied.
    """
    if isinstance(node, (InRegion, Separation)):
        values = _atom_values(node, p)

        def push_atom(adj):
            if grad_sink is None:
                return
            if isinstance(node, InRegion):
                d = p[node.vehicle] - node.region.center        # (K, 3)
                margins = node.region.half_widths - np.abs(d)   # (K, 3)
                axis = np.argmin(margins, axis=1)
                k_idx = np.arange(p.shape[1])
                sign = -np.sign(d[k_idx, axis])
                sign[sign == 0.0] = -1.0
                np.add.at(grad_sink[node.vehicle], (k_idx[:len(adj)], axis[:len(adj)]),
                          adj * sign[:len(adj)])
            else:
                diff = p[node.vehicle_a] - p[node.vehicle_b]
                axis = np.argmax(np.abs(diff), axis=1)
                k_idx = np.arange(p.shape[1])
                sign = np.sign(diff[k_idx, axis])
                sign[sign == 0.0] = 1.0
                np.add.at(grad_sink[node.vehicle_a], (k_idx[:len(adj)], axis[:len(adj)]),
                          adj * sign[:len(adj)])
                np.add.at(grad_sink[node.vehicle_b], (k_idx[:len(adj)], axis[:len(adj)]),
                          -adj * sign[:len(adj)])

        return values, push_atom

    if isinstance(node, Not):
        child_vals, child_push = _smooth(node.child, p, dt, temperature, grad_sink)
        return -child_vals, (lambda adj: child_push(-adj))

    if isinstance(node, (And, Or)):
        mode = "min" if isinstance(node, And) else "max"
        results = [_smooth(c, p, dt, temperature, grad_sink) for c in node.children]
        n = min(v.shape[0] for v, _ in results)
        stacked = np.stack([v[:n] for v, _ in results])
        if stacked.shape[0] == 1:
            return stacked[0], results[0][1]
        values = _softmin(stacked, temperature, 0) if mode == "min" else \
            _softmax_raw(stacked, temperature, 0)
        weights = _lse_weights(stacked, temperature, 0, mode)

        def push_logic(adj):
            for i, (_, child_push) in enumerate(results):
                child_push(adj * weights[i][:len(adj)])

        return values, push_logic

    if isinstance(node, (Always, Eventually)):
        lo, hi = _interval_steps(node, dt)
        mode = "min" if isinstance(node, Always) else "max"
        child_vals, child_push = _smooth(node.child, p, dt, temperature, grad_sink)
        if child_vals.shape[0] <= hi:
            raise HorizonExceeded("trajectory too short for smooth evaluation")
        width = hi - lo + 1
        windows = sliding_window_view(child_vals[lo:], width)  # (L, width)
        if width == 1:
            values = windows[:, 0]
            weights = np.ones_like(windows)
        else:
            values = _softmin(windows, temperature, 1) if mode == "min" else \
                _softmax_raw(windows, temperature, 1)
            weights = _lse_weights(windows, temperature, 1, mode)

        def push_temporal(adj):
            child_adj = np.zeros_like(child_vals)
            contrib = adj[:, None] * weights[:len(adj)]
            idx = lo + np.arange(len(adj))[:, None] + np.arange(width)[None, :]
            np.add.at(child_adj, idx.ravel(), contrib.ravel())
            child_push(child_adj)

        return values, push_temporal

    raise TypeError(f"not a formula node: {node!r}")


def smooth_robustness(formula: Formula, signal, temperature: float) -> float:
    """Log-sum-exp surrogate; converges to robustness() as temperature grows."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p, dt = _positions(signal)
    h = horizon(formula, dt)
    if p.shape[1] <= h:
        raise HorizonExceeded("trajectory too short")
    values, _ = _smooth(formula, p, dt, temperature)
    return float(values[0])


def smooth_robustness_grad(formula: Formula, signal, temperature: float):
    """Smooth robustness at step 0 and its gradient w.r.t. every position.

    Returns (value, grad) with grad shaped (V, K, 3) matching the signal.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p, dt = _positions(signal)
    h = horizon(formula, dt)
    if p.shape[1] <= h:
        raise HorizonExceeded("trajectory too short")
    grad = np.zeros_like(p)
    values, push = _smooth(formula, p, dt, temperature, grad_sink=grad)
    adj = np.zeros(values.shape[0])
    adj[0] = 1.0
    push(adj)
    return float(values[0]), grad


def lse_error_bound(formula: Formula, dt: float, temperature: float) -> float:
    """Bound on |smooth - exact|: (number of smoothed levels) * ln(max fan-in) / T."""
    depth, fan = _smoothing_profile(formula, dt)
    if fan < 2:
        return 0.0
    return depth * np.log(fan) / temperature


def _smoothing_profile(node: Formula, dt: float) -> Tuple[int, int]:
    """(max count of smoothed nodes on a root-to-leaf path, max fan-in)."""
    if isinstance(node, (InRegion, Separation)):
        return 0, 1
    if isinstance(node, Not):
        return _smoothing_profile(node.child, dt)
    if isinstance(node, (And, Or)):
        profiles = [_smoothing_profile(c, dt) for c in node.children]
        mine = 1 if len(node.children) >= 2 else 0
        return mine + max(d for d, _ in profiles), max([len(node.children)] + [f for _, f in profiles])
    if isinstance(node, (Always, Eventually)):
        lo, hi = _interval_steps(node, dt)
        width = hi - lo + 1
        d, f = _smoothing_profile(node.child, dt)
        return (1 if width >= 2 else 0) + d, max(width, f)
    raise TypeError(f"not a formula node: {node!r}")


def tube(formula: Formula, trajectory: Trajectory) -> RobustnessTube:
    """Robustness tube around a satisfying trajectory (radius = robustness)."""
    rho = robustness(formula, trajectory)
    if rho <= 0:
        raise NonPositiveRobustness(f"robustness {rho:.6g} is not positive")
    return RobustnessTube(centerline=trajectory.positions.copy(), radius=rho)


# --- text format -------------------------------------------------------------

def parse_formula(text: str, regions: Dict[str, BoxRegion]) -> Formula:
    """Parse prefix notation, e.g. ``(and (ev 0 6 (in goal1)) (alw 0 6 (not (in wall))))``.

    Atoms: ``(in NAME [VEHICLE])`` box membership, ``(sep A B DELTA)``
    pairwise separation.  Operators: and, or, not, alw, ev (the temporal
    ones take interval bounds in seconds).
    """
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    if not tokens:
        raise FormulaSyntaxError("empty formula")
    expr, rest = _read_sexpr(tokens)
    if rest:
        raise FormulaSyntaxError(f"trailing tokens: {' '.join(rest)}")
    return _build_formula(expr, regions)


def _read_sexpr(tokens: List[str]):
    tok, rest = tokens[0], tokens[1:]
    if tok == "(":
        items = []
        while rest and rest[0] != ")":
            item, rest = _read_sexpr(rest)
            items.append(item)
        if not rest:
            raise FormulaSyntaxError("unbalanced parentheses")
        return items, rest[1:]
    if tok == ")":
        raise FormulaSyntaxError("unexpected ')'")
    return tok, rest


def _build_formula(expr, regions: Dict[str, BoxRegion]) -> Formula:
    if not isinstance(expr, list) or not expr:
        raise FormulaSyntaxError(f"expected an operator list, got {expr!r}")
    op, args = expr[0], expr[1:]
    if op == "in":
        if len(args) not in (1, 2):
            raise FormulaSyntaxError("(in NAME [VEHICLE])")
        name = args[0]
        if name not in regions:
            raise FormulaSyntaxError(f"unknown region {name!r}")
        vehicle = int(args[1]) if len(args) == 2 else 0
        return InRegion(regions[name], vehicle=vehicle)
    if op == "sep":
        if len(args) != 3:
            raise FormulaSyntaxError("(sep VEHICLE_A VEHICLE_B DELTA)")
        return Separation(int(args[0]), int(args[1]), float(args[2]))
    if op == "not":
        if len(args) != 1:
            raise FormulaSyntaxError("(not PHI)")
        return Not(_build_formula(args[0], regions))
    if op in ("and", "or"):
        if not args:
            raise FormulaSyntaxError(f"({op} PHI ...) needs operands")
        children = tuple(_build_formula(a, regions) for a in args)
        return And(children) if op == "and" else Or(children)
    if op in ("alw", "ev"):
        if len(args) != 3:
            raise FormulaSyntaxError(f"({op} LO HI PHI)")
        lo, hi = float(args[0]), float(args[1])
        child = _build_formula(args[2], regions)
        return Always(lo, hi, child) if op == "alw" else Eventually(lo, hi, child)
    raise FormulaSyntaxError(f"unknown operator {op!r}")


def find_goal_regions(formula: Formula) -> List[BoxRegion]:
    """Goal-polarity boxes referenced by the formula, in discovery order."""
    found: List[BoxRegion] = []

    def walk(node):
        if isinstance(node, InRegion):
            if node.region.polarity == GOAL:
                found.append(node.region)
        elif isinstance(node, Not):
            walk(node.child)
        elif isinstance(node, (And, Or)):
            for c in node.children:
                walk(c)
        elif isinstance(node, (Always, Eventually)):
            walk(node.child)

    walk(formula)
    return found
