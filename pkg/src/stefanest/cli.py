"""Command-line entry point.

Subcommands:
  simulate      run a plant-only scenario
  observe       run an estimation scenario (observer / filter modes)
  compare       paired metric report for two finished run directories
  list-presets  show the shipped scenario presets

Exit codes: 0 success, 1 usage/config error, 2 validity halt (strict mode),
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import runner


def _add_scenario_flags(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", help="YAML scenario file")
    g.add_argument("--preset", help="named preset (see list-presets)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the noise seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--strict-validity", action="store_true",
                   help="treat model-validity violations as a halting error")


def _load(args) -> runner.ScenarioConfig:
    if args.config:
        cfg = runner.load_config(args.config)
    else:
        cfg = runner.preset_config(args.preset)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, noise=dataclasses.replace(cfg.noise, seed=args.seed))
    if args.strict_validity:
        cfg = dataclasses.replace(cfg, strict_validity=True)
    return cfg


def _execute(args, want_observe: bool) -> int:
    try:
        cfg = _load(args)
    except (runner.ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    is_observe = cfg.mode != "simulate"
    if is_observe != want_observe:
        expected = "an estimation" if want_observe else "a plant-only"
        print(f"error: mode {cfg.mode!r} is not {expected} scenario", file=sys.stderr)
        return 1
    code, summary = runner.run(cfg, out_dir=args.out)
    out = args.out if args.out is not None else cfg.out_dir
    status = "halted" if summary.get("halted") else "ok"
    print(f"{status}: model={cfg.model} mode={cfg.mode} out={out}")
    for key in ("t10", "t50", "decay_rate", "overshoot", "halt_reason"):
        if key in summary and summary[key] not in ("", None):
            print(f"  {key} = {summary[key]}")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stefanest",
        description="moving-boundary estimation scenarios: simulate, observe, compare")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a plant-only scenario")
    _add_scenario_flags(p_sim)

    p_obs = sub.add_parser("observe", help="run an estimation scenario")
    _add_scenario_flags(p_obs)

    p_cmp = sub.add_parser("compare", help="compare two finished runs")
    p_cmp.add_argument("run_a", help="first run directory")
    p_cmp.add_argument("run_b", help="second run directory")
    p_cmp.add_argument("--out", default=None,
                       help="write the comparison JSON here (default: stdout)")

    sub.add_parser("list-presets", help="list shipped scenario presets")

    args = parser.parse_args(argv)

    if args.command == "list-presets":
        for name in sorted(runner.PRESETS):
            p = runner.PRESETS[name]
            print(f"{name:32s} model={p['model']:8s} mode={p['mode']}")
        return 0

    if args.command == "compare":
        try:
            report = runner.compare(args.run_a, args.run_b)
        except (ValueError, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
            print(f"wrote {args.out}")
        else:
            print(text)
        return 0

    return _execute(args, want_observe=(args.command == "observe"))


if __name__ == "__main__":
    sys.exit(main())
