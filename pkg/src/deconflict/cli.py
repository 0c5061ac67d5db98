"""Command-line entry points for the benchmark harness.

Subcommands: gen-data, train, evaluate, simulate, casestudy.  All accept a
single JSON config file (--config) overlaying the built-in desk-scale
defaults.  Exit codes: 0 success, 2 configuration error, 3 gate failure
(evaluate --gate only).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .harness import ConfigError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file overlaying the defaults")
    parser.add_argument("--out-dir", default="out", help="output directory")
    parser.add_argument("--seed", type=int, help="override the top-level seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deconflict",
        description="STL planning and pairwise deconfliction benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate scenario and label datasets")
    _add_common(p)

    p = sub.add_parser("train", help="train the learned conflict-resolution policy")
    _add_common(p)
    p.add_argument("--labels", help="labels.jsonl path (default: <out-dir>/labels.jsonl)")

    p = sub.add_parser("evaluate", help="run the policy evaluation sweep")
    _add_common(p)
    p.add_argument("--weights", help="weights file for the learned policy")
    p.add_argument("--policy", action="append",
                   help="restrict to this policy (repeatable)")
    p.add_argument("--rho-over-delta", type=float, action="append",
                   help="restrict the sweep to this ratio (repeatable)")
    p.add_argument("--gate", action="store_true",
                   help="exit 3 unless the desk-scale acceptance gates pass")

    p = sub.add_parser("simulate", help="dump one scenario before/after resolution")
    _add_common(p)
    p.add_argument("--scenario-seed", type=int, required=True)
    p.add_argument("--policy", default="greedy")
    p.add_argument("--rho-over-delta", type=float)
    p.add_argument("--weights")

    p = sub.add_parser("casestudy", help="four-vehicle independent-planning study")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        config = harness.load_config(args.config, overrides)

        if args.command == "gen-data":
            summary = harness.gen_data(config, args.out_dir)
            print(json.dumps(summary, indent=2, sort_keys=True))
            return 0

        if args.command == "train":
            _, report = harness.train_policy(config, args.out_dir, labels_path=args.labels)
            print(f"train accuracy {report.train_accuracy:.4f}  "
                  f"val accuracy {report.val_accuracy:.4f}  "
                  f"final loss {report.epoch_losses[-1]:.4f}")
            return 0

        if args.command == "evaluate":
            if args.policy:
                config = harness.load_config(args.config, {
                    "seed": config["seed"], "eval": {"policies": args.policy}})
            if args.rho_over_delta:
                config["eval"]["rho_over_delta"] = args.rho_over_delta
            report = harness.evaluate(config, args.out_dir, weights_path=args.weights)
            for cell in report.cells:
                mean_ms, std_ms = cell.mean_std_event_seconds()
                print(f"{cell.policy:8s} rho/delta={cell.rho_over_delta:-5g} "
                      f"rate={cell.separation_rate:.3f} "
                      f"events={cell.total} mean={mean_ms * 1e3:8.2f}ms std={std_ms * 1e3:.2f}ms")
            if args.gate:
                failures = harness.check_gates(report)
                if failures:
                    for f in failures:
                        print("GATE FAIL:", f, file=sys.stderr)
                    return 3
                print("all gates passed")
            return 0

        if args.command == "simulate":
            path = harness.simulate(config, args.out_dir, args.scenario_seed,
                                    policy_name_str=args.policy,
                                    rho_over_delta=args.rho_over_delta,
                                    weights_path=args.weights)
            print(path)
            return 0

        if args.command == "casestudy":
            report = harness.casestudy(config, args.out_dir)
            print(f"runs={len(report.runs)} success_rate={report.success_rate:.3f} "
                  f"speedup={report.speedup:.2f}x")
            return 0

        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
