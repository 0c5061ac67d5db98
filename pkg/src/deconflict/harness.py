"""Benchmark harness: dataset generation, policy evaluation, tube-radius
sweep, the four-vehicle case study, and per-scenario trajectory dumps.

Everything is driven by one declarative JSON config (see DEFAULT_CONFIG for
the schema and desk-scale defaults).  Evaluation runs every configured
policy over a seeded scenario set at each tube-to-separation ratio,
recording per-event outcomes, slack totals, verification flags (separation
and tube membership of the certificate-bearing outcomes), and timing.
Separation rates and outcome histograms are exact integer ratios and land
in a deterministic rates.csv; wall-clock numbers go to the JSON report and
the per-event log only, so repeated runs with one config produce
byte-identical rate tables.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import lstm as lstm_mod
from .campc import EVENT_LOG_COLUMNS, L2fStatus, event_log_row, l2f
from .conflict import detect, pairwise_separation, separation_satisfied
from .dynamics import LinearModel, Trajectory
from .milp import (DecisionSequence, MilpBudget, MilpStatus, solve_milp,
                   to_label_record)
from .planner import NoFeasiblePlan, PlanningProblem, plan
from .policies import (GreedyPolicy, LearnedPolicy, MilpOraclePolicy,
                       OracleInfeasible, PolicyKind, RandomPolicy, policy_name,
                       resolve)
from .stl import (Always, And, BoxRegion, Eventually, InRegion, Not,
                  RobustnessTube, Separation, robustness)
from .trajectory import (ConflictScenario, ScenarioConfig,
                         generate_conflict_pair, scenario_to_record,
                         write_scenarios)


class ConfigError(ValueError):
    """Bad or inconsistent harness configuration."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "model": {"dt": 0.1, "v_max": 3.0, "a_max": 5.0},
    "scenario": {
        "duration": 4.0,
        "delta": 0.1,
        "rho_over_delta": 0.55,
    },
    "gen": {
        "count": 1500,
        "seed0": 10000,
        "milp_max_nodes": 20000,
        "milp_max_seconds": 60.0,
    },
    "train": {
        "epochs": 150,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "hidden_size": 32,
        "layer_count": 1,
        "seed": 0,
        "val_fraction": 0.1,
    },
    "eval": {
        "count": 300,
        "seed0": 0,
        "rho_over_delta": [0.5, 0.75, 0.95, 1.15],
        "policies": ["random", "greedy", "learned", "milp"],
        "random_seed": 99,
        "greedy_preset": 5,
        "milp_max_nodes": 20000,
        "milp_max_seconds": 60.0,
    },
    "casestudy": {
        "seeds": 100,
        "horizon": 4.0,
        "delta": 0.1,
        "start_jitter": 0.25,
        "goal_half_width": 0.35,
        "starts": [[-2.2, -1.3, 1.0], [-2.2, 1.3, 1.0],
                   [2.2, -1.3, 1.0], [2.2, 1.3, 1.0]],
        "goals": [[2.2, 1.3, 1.0], [2.2, -1.3, 1.0],
                  [-2.2, 1.3, 1.0], [-2.2, -1.3, 1.0]],
        "wall_center": [0.0, 0.0, 0.75],
        "wall_half_widths": [0.12, 1.0, 0.75],
        "waypoint_count": 5,
        "restarts": 9,
        "iterations": 80,
        "target_robustness": 0.15,
        "policy": "greedy",
        "max_passes": 3,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a mapping")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, overlaid with an optional JSON file and explicit overrides."""
    config = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = _merge(config, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        config = _merge(config, overrides)
    return config


def build_model(config: dict) -> LinearModel:
    m = config["model"]
    return LinearModel.double_integrator(dt=m["dt"], v_max=m["v_max"], a_max=m["a_max"])


def build_scenario_config(config: dict, rho_over_delta: Optional[float] = None) -> ScenarioConfig:
    s = config["scenario"]
    return ScenarioConfig(
        duration=s["duration"],
        dt=config["model"]["dt"],
        delta=s["delta"],
        rho_over_delta=rho_over_delta if rho_over_delta is not None else s["rho_over_delta"],
    )


def _budget(section: dict) -> MilpBudget:
    return MilpBudget(max_nodes=int(section["milp_max_nodes"]),
                      max_seconds=float(section["milp_max_seconds"]))


# --- dataset generation -------------------------------------------------------

def gen_data(config: dict, out_dir) -> dict:
    """Write scenarios.jsonl and labels.jsonl; labels only for solvable scenarios."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    scen_cfg = build_scenario_config(config)
    budget = _budget(config["gen"])
    count, seed0 = int(config["gen"]["count"]), int(config["gen"]["seed0"])

    scenarios, labeled, infeasible, exhausted = [], 0, 0, 0
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for i in range(count):
            scenario = generate_conflict_pair(seed0 + i, scen_cfg, model)
            scenarios.append(scenario)
            result = solve_milp(scenario, model, budget)
            if result.status is MilpStatus.FEASIBLE:
                fh.write(json.dumps(to_label_record(scenario, result.decisions)) + "\n")
                labeled += 1
            elif result.status is MilpStatus.INFEASIBLE:
                infeasible += 1
            else:
                exhausted += 1
    write_scenarios(out / "scenarios.jsonl", scenarios)
    summary = {"count": count, "labeled": labeled, "infeasible": infeasible,
               "budget_exhausted": exhausted}
    with open(out / "gen_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def train_policy(config: dict, out_dir, labels_path=None) -> Tuple[lstm_mod.NetWeights, lstm_mod.TrainReport]:
    """Train the recurrent policy from a labels.jsonl file and save the weights."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels_path = Path(labels_path) if labels_path else out / "labels.jsonl"
    z_list, y_list = [], []
    with open(labels_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            z_list.append(np.asarray(record["z"], dtype=float).reshape(-1, 3))
            y_list.append(np.asarray(record["decisions"], dtype=int))
    if not z_list:
        raise ConfigError(f"no training records in {labels_path}")
    z = np.stack(z_list)
    y = np.stack(y_list)
    t = config["train"]
    train_cfg = lstm_mod.TrainConfig(
        epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
        learning_rate=float(t["learning_rate"]), hidden_size=int(t["hidden_size"]),
        layer_count=int(t["layer_count"]), seed=int(t["seed"]),
        val_fraction=float(t["val_fraction"]))
    weights, report = lstm_mod.train(z, y, train_cfg,
                                     input_scale=1.0 / config["scenario"]["delta"])
    lstm_mod.save_weights(out / "weights.json", weights)
    with open(out / "train_report.json", "w", encoding="utf-8") as fh:
        json.dump({"epoch_losses": report.epoch_losses,
                   "train_accuracy": report.train_accuracy,
                   "val_accuracy": report.val_accuracy,
                   "config": asdict(train_cfg)}, fh, indent=2, sort_keys=True)
    return weights, report


# --- evaluation ----------------------------------------------------------------

@dataclass
class EventRecord:
    """Everything the acceptance checks need about one protocol invocation."""

    seed: int
    status: str                  # l2f status, or oracle_infeasible / budget_exhausted
    resolved: bool
    zero_slack: bool
    certificate_ok: bool         # zero-slack outcomes: separation + tube membership
    separated: bool
    min_sep_before: float
    min_sep_after: float
    slack1: float
    slack2: Optional[float]
    resolve_seconds: float
    stage_seconds: float
    footnote3_violations: int    # far-tube steps with stage-2 slack AND a violation
    separated_despite_slack: bool


@dataclass
class PolicyCellReport:
    policy: str
    rho_over_delta: float
    total: int
    resolved: int
    histogram: Dict[str, int]
    feasible_total: int          # scenarios the oracle solved (milp policy only)
    events: List[EventRecord] = field(repr=False, default_factory=list)

    @property
    def separation_rate(self) -> float:
        return self.resolved / self.total if self.total else 0.0

    @property
    def feasible_set_rate(self) -> float:
        if not self.feasible_total:
            return float("nan")
        resolved_feasible = sum(1 for e in self.events
                                if e.resolved and e.status not in
                                ("oracle_infeasible", "budget_exhausted"))
        return resolved_feasible / self.feasible_total

    def mean_std_event_seconds(self) -> Tuple[float, float]:
        times = [e.resolve_seconds + e.stage_seconds for e in self.events]
        return (float(np.mean(times)), float(np.std(times))) if times else (0.0, 0.0)


@dataclass
class EvalReport:
    cells: List[PolicyCellReport]
    scenario_count: int
    rho_over_delta: List[float]
    policies: List[str]

    def cell(self, policy: str, rho: float) -> PolicyCellReport:
        for c in self.cells:
            if c.policy == policy and abs(c.rho_over_delta - rho) < 1e-12:
                return c
        raise KeyError((policy, rho))


def _tube_membership_ok(outcome, scenario: ConflictScenario) -> bool:
    tol = 1e-6
    return (scenario.tube_a.contains(outcome.traj_a.positions, tol=tol)
            and scenario.tube_b.contains(outcome.traj_b.positions, tol=tol))


def _footnote3_violations(outcome, scenario: ConflictScenario) -> int:
    """Steps whose tubes sit far apart must not pair stage-2 slack with a violation."""
    if outcome.stage2 is None:
        return 0
    center_gap = np.max(np.abs(scenario.tube_a.centerline - scenario.tube_b.centerline), axis=1)
    far = center_gap >= scenario.delta + scenario.tube_a.radius + scenario.tube_b.radius
    sep = pairwise_separation(outcome.traj_a, outcome.traj_b)
    bad = far & (outcome.stage2.slacks > 1e-9) & (sep < scenario.delta)
    return int(np.sum(bad))


def run_policy_on_scenario(policy: PolicyKind, scenario: ConflictScenario,
                           model: LinearModel) -> EventRecord:
    """Resolve decisions, run the two-stage protocol, verify the outcome."""
    sep_before = float(np.min(pairwise_separation(scenario.traj_a, scenario.traj_b)))
    t0 = time.perf_counter()
    try:
        decisions = resolve(policy, scenario, model)
    except OracleInfeasible as exc:
        t_resolve = time.perf_counter() - t0
        status = ("budget_exhausted"
                  if exc.status is MilpStatus.BUDGET_EXHAUSTED else "oracle_infeasible")
        return EventRecord(
            seed=scenario.seed, status=status, resolved=False, zero_slack=False,
            certificate_ok=True, separated=False, min_sep_before=sep_before,
            min_sep_after=sep_before, slack1=float("nan"), slack2=None,
            resolve_seconds=t_resolve, stage_seconds=0.0,
            footnote3_violations=0, separated_despite_slack=False)
    t_resolve = time.perf_counter() - t0

    outcome = l2f(scenario, decisions, model)
    separated = separation_satisfied(outcome.traj_a, outcome.traj_b, scenario.delta)
    zero_slack = outcome.status in (L2fStatus.DONE_UAS1, L2fStatus.DONE_UAS2)
    certificate_ok = True
    if zero_slack:
        certificate_ok = separated and _tube_membership_ok(outcome, scenario)
    return EventRecord(
        seed=scenario.seed,
        status=outcome.status.value,
        resolved=separated,
        zero_slack=zero_slack,
        certificate_ok=certificate_ok,
        separated=separated,
        min_sep_before=sep_before,
        min_sep_after=float(np.min(pairwise_separation(outcome.traj_a, outcome.traj_b))),
        slack1=outcome.slack1,
        slack2=outcome.slack2,
        resolve_seconds=t_resolve,
        stage_seconds=outcome.event_time,
        footnote3_violations=_footnote3_violations(outcome, scenario),
        separated_despite_slack=(outcome.status is L2fStatus.DONE_BOTH_RECHECK
                                 and (outcome.slack2 or 0.0) > 1e-9),
    )


def _build_policy(name: str, config: dict,
                  weights: Optional[lstm_mod.NetWeights]) -> PolicyKind:
    section = config["eval"]
    if name == "random":
        return RandomPolicy(seed=int(section["random_seed"]))
    if name == "greedy":
        return GreedyPolicy(preset=int(section["greedy_preset"]))
    if name == "milp":
        return MilpOraclePolicy(budget=_budget(section))
    if name == "learned":
        if weights is None:
            raise ConfigError("the learned policy needs a weights file (run train first)")
        return LearnedPolicy(weights)
    raise ConfigError(f"unknown policy {name!r}")


class MissingWeights(ConfigError):
    pass


def evaluate(config: dict, out_dir, weights_path=None) -> EvalReport:
    """Run every configured policy over the seeded scenario grid and report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    section = config["eval"]
    policies = list(section["policies"])
    weights = None
    if "learned" in policies:
        path = Path(weights_path) if weights_path else out / "weights.json"
        if not path.exists():
            raise MissingWeights(f"weights file not found: {path}")
        weights = lstm_mod.load_weights(path)

    cells: List[PolicyCellReport] = []
    event_rows = []
    for rho in section["rho_over_delta"]:
        scen_cfg = build_scenario_config(config, rho_over_delta=float(rho))
        scenarios = [generate_conflict_pair(int(section["seed0"]) + i, scen_cfg, model)
                     for i in range(int(section["count"]))]
        for name in policies:
            policy = _build_policy(name, config, weights)
            events = [run_policy_on_scenario(policy, s, model) for s in scenarios]
            histogram: Dict[str, int] = {}
            for e in events:
                histogram[e.status] = histogram.get(e.status, 0) + 1
            feasible_total = len(events)
            if name == "milp":
                feasible_total = sum(1 for e in events if e.status not in
                                     ("oracle_infeasible", "budget_exhausted"))
            cells.append(PolicyCellReport(
                policy=name, rho_over_delta=float(rho), total=len(events),
                resolved=sum(e.resolved for e in events), histogram=histogram,
                feasible_total=feasible_total, events=events))
            for e in events:
                event_rows.append({"policy": name, "rho_over_delta": rho,
                                   "seed": e.seed, "status": e.status,
                                   "slack1": "" if math.isnan(e.slack1) else f"{e.slack1:.9g}",
                                   "slack2": "" if e.slack2 is None else f"{e.slack2:.9g}",
                                   "t_resolve_ms": f"{e.resolve_seconds * 1e3:.3f}",
                                   "t_stages_ms": f"{e.stage_seconds * 1e3:.3f}",
                                   "min_sep_before": f"{e.min_sep_before:.9g}",
                                   "min_sep_after": f"{e.min_sep_after:.9g}"})

    report = EvalReport(cells=cells, scenario_count=int(section["count"]),
                        rho_over_delta=[float(r) for r in section["rho_over_delta"]],
                        policies=policies)
    write_rates_csv(out / "rates.csv", report)
    with open(out / "events.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["policy", "rho_over_delta", "seed",
                                                "status", "slack1", "slack2",
                                                "t_resolve_ms", "t_stages_ms",
                                                "min_sep_before", "min_sep_after"])
        writer.writeheader()
        writer.writerows(event_rows)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
    return report


_STATUS_ORDER = ("done_uas1", "done_uas2", "done_both_recheck", "fail",
                 "oracle_infeasible", "budget_exhausted")


def write_rates_csv(path, report: EvalReport) -> None:
    """Deterministic rate table: counts and exact ratios only, no timings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "rho_over_delta", "total", "resolved",
                         "separation_rate", "feasible_total", "feasible_set_rate",
                         *_STATUS_ORDER, "footnote3_events", "footnote3_violations"])
        for cell in report.cells:
            fs_rate = cell.feasible_set_rate
            writer.writerow([
                cell.policy, f"{cell.rho_over_delta:g}", cell.total, cell.resolved,
                f"{cell.separation_rate:.6f}", cell.feasible_total,
                "" if math.isnan(fs_rate) else f"{fs_rate:.6f}",
                *[cell.histogram.get(s, 0) for s in _STATUS_ORDER],
                sum(e.separated_despite_slack for e in cell.events),
                sum(e.footnote3_violations for e in cell.events),
            ])


def report_to_dict(report: EvalReport) -> dict:
    cells = []
    for cell in report.cells:
        mean_s, std_s = cell.mean_std_event_seconds()
        fs_rate = cell.feasible_set_rate
        cells.append({
            "policy": cell.policy,
            "rho_over_delta": cell.rho_over_delta,
            "total": cell.total,
            "resolved": cell.resolved,
            "separation_rate": cell.separation_rate,
            "feasible_total": cell.feasible_total,
            "feasible_set_rate": None if math.isnan(fs_rate) else fs_rate,
            "histogram": cell.histogram,
            "mean_event_ms": mean_s * 1e3,
            "std_event_ms": std_s * 1e3,
            "zero_slack_events": sum(e.zero_slack for e in cell.events),
            "certificate_violations": sum(not e.certificate_ok for e in cell.events),
            "footnote3_events": sum(e.separated_despite_slack for e in cell.events),
            "footnote3_violations": sum(e.footnote3_violations for e in cell.events),
        })
    return {"scenario_count": report.scenario_count,
            "rho_over_delta": report.rho_over_delta,
            "policies": report.policies,
            "cells": cells}


def check_gates(report: EvalReport, anchors: Optional[dict] = None) -> List[str]:
    """Desk-scale acceptance gates on an evaluation report; returns failures."""
    anchors = anchors or {
        "random": {0.5: 0.311, 0.95: 0.609, 1.15: 0.661},
        "greedy": {0.5: 0.529, 0.95: 0.836, 1.15: 0.994},
    }
    failures = []
    rhos = report.rho_over_delta

    def rate(policy, rho):
        return report.cell(policy, rho).separation_rate

    for policy, by_rho in anchors.items():
        if policy not in report.policies:
            continue
        for rho, anchor in by_rho.items():
            if rho in rhos and abs(rate(policy, rho) - anchor) > 0.15:
                failures.append(f"{policy}@{rho}: rate {rate(policy, rho):.3f} "
                                f"outside anchor {anchor}+-0.15")
    for rho in rhos:
        if {"greedy", "random"} <= set(report.policies):
            if rate("greedy", rho) < rate("random", rho) + 0.05:
                failures.append(f"greedy@{rho} not above random by 0.05")
        if {"learned", "greedy"} <= set(report.policies):
            margin = 0.0 if rho >= 1.15 else 0.05
            if rate("learned", rho) < rate("greedy", rho) + margin - 1e-12:
                failures.append(f"learned@{rho} not above greedy by {margin}")
    if "milp" in report.policies:
        for rho in rhos:
            cell = report.cell("milp", rho)
            if cell.feasible_total and cell.feasible_set_rate < 1.0:
                failures.append(f"milp@{rho}: feasible-set rate {cell.feasible_set_rate:.4f} < 1")
    for policy in report.policies:
        rates = [rate(policy, rho) for rho in sorted(rhos)]
        for lo, hi in zip(rates, rates[1:]):
            if hi < lo - 0.02:
                failures.append(f"{policy}: rate not non-decreasing across sweep")
                break
    return failures


# --- single-scenario dump -------------------------------------------------------

def simulate(config: dict, out_dir, scenario_seed: int,
             policy_name_str: str = "greedy", rho_over_delta: Optional[float] = None,
             weights_path=None) -> Path:
    """Dump before/after trajectories, tube bounds and separation per step."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    scen_cfg = build_scenario_config(config, rho_over_delta)
    scenario = generate_conflict_pair(scenario_seed, scen_cfg, model)
    weights = None
    if policy_name_str == "learned":
        path = Path(weights_path) if weights_path else out / "weights.json"
        if not path.exists():
            raise MissingWeights(f"weights file not found: {path}")
        weights = lstm_mod.load_weights(path)
    policy = _build_policy(policy_name_str, config, weights)
    decisions = resolve(policy, scenario, model)
    outcome = l2f(scenario, decisions, model)

    sep_before = pairwise_separation(scenario.traj_a, scenario.traj_b)
    sep_after = pairwise_separation(outcome.traj_a, outcome.traj_b)
    path = out / f"simulate_seed{scenario_seed}.csv"
    header = ["k", "t"]
    header += [f"p1{a}" for a in "xyz"] + [f"p2{a}" for a in "xyz"]
    header += [f"q1{a}" for a in "xyz"] + [f"q2{a}" for a in "xyz"]
    header += ["sep_before", "sep_after"]
    for tube in (1, 2):
        for a in "xyz":
            header += [f"tube{tube}_lo_{a}", f"tube{tube}_hi_{a}"]
    header += ["status"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        k1 = len(scenario.traj_a)
        for k in range(k1):
            row = [k, f"{k * model.dt:.3f}"]
            row += [f"{v:.9g}" for v in scenario.traj_a.positions[k]]
            row += [f"{v:.9g}" for v in scenario.traj_b.positions[k]]
            row += [f"{v:.9g}" for v in outcome.traj_a.positions[k]]
            row += [f"{v:.9g}" for v in outcome.traj_b.positions[k]]
            row += [f"{sep_before[k]:.9g}", f"{sep_after[k]:.9g}"]
            for tube in (scenario.tube_a, scenario.tube_b):
                for axis in range(3):
                    row += [f"{tube.centerline[k, axis] - tube.radius:.9g}",
                            f"{tube.centerline[k, axis] + tube.radius:.9g}"]
            row += [outcome.status.value]
            writer.writerow(row)
    return path


# --- four-vehicle case study ------------------------------------------------------

@dataclass
class CaseStudyRun:
    seed: int
    plans_ok: bool
    assumption_ok: bool
    events: int
    all_resolved: bool
    joint_robustness: Optional[float]
    plan_seconds: List[float]
    robustness_values: List[float]


@dataclass
class CaseStudyReport:
    runs: List[CaseStudyRun]
    sequential_seconds: float
    parallel_seconds: float

    @property
    def speedup(self) -> float:
        return self.sequential_seconds / self.parallel_seconds \
            if self.parallel_seconds else float("nan")

    @property
    def success_rate(self) -> float:
        complete = [r for r in self.runs if r.plans_ok and r.all_resolved]
        if not self.runs:
            return 0.0
        return len([r for r in complete if (r.joint_robustness or 0) > 0]) / len(self.runs)


def _casestudy_formulas(section: dict):
    wall = BoxRegion(center=np.asarray(section["wall_center"], float),
                     half_widths=np.asarray(section["wall_half_widths"], float),
                     polarity="unsafe")
    hw = float(section["goal_half_width"])
    horizon = float(section["horizon"])
    formulas = []
    for goal_center in section["goals"]:
        goal = BoxRegion(center=np.asarray(goal_center, float),
                         half_widths=np.full(3, hw), polarity="goal")
        formulas.append(And(Eventually(0.0, horizon, InRegion(goal)),
                            Always(0.0, horizon, Not(InRegion(wall)))))
    return formulas, wall


def joint_mission_formula(section: dict) -> tuple:
    """The whole-mission formula over the 4-vehicle product signal."""
    wall = BoxRegion(center=np.asarray(section["wall_center"], float),
                     half_widths=np.asarray(section["wall_half_widths"], float),
                     polarity="unsafe")
    hw = float(section["goal_half_width"])
    horizon = float(section["horizon"])
    delta = float(section["delta"])
    parts = []
    for j, goal_center in enumerate(section["goals"]):
        goal = BoxRegion(center=np.asarray(goal_center, float),
                         half_widths=np.full(3, hw), polarity="goal")
        parts.append(Eventually(0.0, horizon, InRegion(goal, vehicle=j)))
        parts.append(Always(0.0, horizon, Not(InRegion(wall, vehicle=j))))
    n = len(section["goals"])
    for i in range(n):
        for j in range(i + 1, n):
            parts.append(Always(0.0, horizon, Separation(i, j, delta)))
    return And(tuple(parts))


def casestudy(config: dict, out_dir) -> CaseStudyReport:
    """Plan four vehicles independently, deconflict pairwise, verify jointly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    section = config["casestudy"]
    formulas, _ = _casestudy_formulas(section)
    joint = joint_mission_formula(section)
    delta = float(section["delta"])
    starts = [np.asarray(s, float) for s in section["starts"]]
    policy = GreedyPolicy(preset=int(config["eval"]["greedy_preset"])) \
        if section["policy"] == "greedy" else \
        _build_policy(section["policy"], config, None)

    runs: List[CaseStudyRun] = []
    for seed in range(int(section["seeds"])):
        rng = np.random.default_rng((config["seed"], seed))
        jitter = float(section["start_jitter"])
        plan_times, plans, rhos = [], [], []
        plans_ok = True
        for j, formula in enumerate(formulas):
            start = starts[j] + rng.uniform(-jitter, jitter, size=3)
            t0 = time.perf_counter()
            try:
                result = plan(PlanningProblem(
                    formula=formula, initial_position=start,
                    initial_velocity=np.zeros(3),
                    waypoint_count=int(section["waypoint_count"]),
                    horizon=float(section["horizon"]), model=model),
                    restarts=int(section["restarts"]),
                    iterations=int(section["iterations"]),
                    seed=seed * 4 + j,
                    target_robustness=section["target_robustness"])
            except NoFeasiblePlan:
                plan_times.append(time.perf_counter() - t0)
                plans_ok = False
                break
            plan_times.append(time.perf_counter() - t0)
            plans.append(result)
            rhos.append(result.robustness)

        if not plans_ok:
            runs.append(CaseStudyRun(seed=seed, plans_ok=False, assumption_ok=False,
                                     events=0, all_resolved=False, joint_robustness=None,
                                     plan_seconds=plan_times, robustness_values=rhos))
            continue

        assumption_ok = all(r >= delta / 2 for r in rhos)
        trajectories = [p.trajectory.copy() for p in plans]
        tubes = [RobustnessTube(centerline=p.trajectory.positions.copy(), radius=p.robustness)
                 for p in plans]
        events = 0
        all_resolved = True
        for _ in range(int(section["max_passes"])):
            conflict_found = False
            for i in range(4):
                for j in range(i + 1, 4):
                    report = detect(trajectories[i], trajectories[j], delta)
                    if not report.has_conflict:
                        continue
                    conflict_found = True
                    events += 1
                    scenario = ConflictScenario(
                        traj_a=trajectories[i], traj_b=trajectories[j],
                        tube_a=tubes[i], tube_b=tubes[j], delta=delta,
                        seed=seed)
                    outcome = l2f(scenario, resolve(policy, scenario, model), model)
                    if not separation_satisfied(outcome.traj_a, outcome.traj_b, delta):
                        all_resolved = False
                    trajectories[i] = outcome.traj_a
                    trajectories[j] = outcome.traj_b
            if not conflict_found:
                break
        for i in range(4):
            for j in range(i + 1, 4):
                if not separation_satisfied(trajectories[i], trajectories[j], delta):
                    all_resolved = False
        joint_rho = robustness(joint, trajectories) if all_resolved else None
        runs.append(CaseStudyRun(seed=seed, plans_ok=True, assumption_ok=assumption_ok,
                                 events=events, all_resolved=all_resolved,
                                 joint_robustness=joint_rho, plan_seconds=plan_times,
                                 robustness_values=rhos))

    per_vehicle = [t for r in runs for t in r.plan_seconds]
    sequential = float(np.sum(per_vehicle))
    # One CPU: parallel wall time is modeled as the slowest vehicle per run
    # (the plans are computed independently and could run concurrently).
    parallel = float(np.sum([max(r.plan_seconds) for r in runs if r.plan_seconds]))
    report = CaseStudyReport(runs=runs, sequential_seconds=sequential,
                             parallel_seconds=parallel)
    with open(out / "casestudy.json", "w", encoding="utf-8") as fh:
        json.dump({
            "seeds": len(runs),
            "plan_success": sum(r.plans_ok for r in runs),
            "assumption_ok": sum(r.assumption_ok for r in runs),
            "all_resolved": sum(r.all_resolved for r in runs),
            "joint_satisfied": sum(1 for r in runs
                                   if r.joint_robustness is not None and r.joint_robustness > 0),
            "success_rate": report.success_rate,
            "sequential_seconds": sequential,
            "parallel_seconds": parallel,
            "speedup": report.speedup,
            "events_total": sum(r.events for r in runs),
            "runs": [{"seed": r.seed, "plans_ok": r.plans_ok,
                      "events": r.events, "all_resolved": r.all_resolved,
                      "joint_robustness": r.joint_robustness,
                      "plan_seconds": r.plan_seconds,
                      "robustness": r.robustness_values} for r in runs],
        }, fh, indent=2, sort_keys=True)
    return report
