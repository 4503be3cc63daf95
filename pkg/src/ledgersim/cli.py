"""Command-line surface.

Subcommands: ``run`` one scenario, ``sweep`` a parameter grid,
``advise`` over a finished run directory, ``list-scenarios``,
``validate`` a scenario file, and ``calibrate`` a cost profile against
measured phase means. Exit codes: 0 success, 1 usage or validation
error, 2 runtime error (including simulated-time cap overruns and
calibration failures).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .advisor import AdvisorError, advise_run_dir
from .calibration import calibrate, load_targets
from .engine import SimulationError
from .harness import (load_any_scenario, load_sweep, resolve_profile,
                      run_scenario, run_sweep)
from .metrics import fmt_ms
from .scenario import ScenarioError, bundled_scenarios, load_bundled, load_scenario


def _cmd_run(args) -> int:
    scenario = load_any_scenario(args.scenario)
    profile = resolve_profile(args.profile) if args.profile else None
    result = run_scenario(scenario, profile, seed=args.seed)
    if args.out:
        result.write_artifacts(args.out)
    m = result.metrics
    _, bfr = m.block_fill_stats()
    print(f"{result.scenario_name} seed={result.seed}: {m.responded} responded"
          f", {result.throughput_tps:.1f} tps"
          f", mean latency {fmt_ms(result.mean_latency_us)} ms"
          f", {len(m.blocks)} blocks, fill {bfr / 1000:.2f}")
    if args.out:
        print(f"artifacts in {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    sweep = load_sweep(args.spec)
    base = load_any_scenario(sweep["scenario"])
    profile = resolve_profile(base["profile"])
    summary = run_sweep(sweep, base, profile, out_dir=args.out, jobs=args.jobs)
    print(f"{len(summary) - 1} runs -> {Path(args.out) / 'summary.csv'}")
    return 0


def _cmd_advise(args) -> int:
    report = advise_run_dir(args.run)
    report.write(args.run)
    sys.stdout.write(report.report_markdown_text())
    return 0


def _cmd_list_scenarios(_args) -> int:
    for name in bundled_scenarios():
        doc = load_bundled(name)
        print(f"{name:32s} {doc.get('description', '')}")
    return 0


def _cmd_validate(args) -> int:
    try:
        load_scenario(args.scenario)
    except ScenarioError as exc:
        for line in str(exc).split("; "):
            print(f"invalid: {line}")
        return 1
    print("ok")
    return 0


def _cmd_calibrate(args) -> int:
    profile = resolve_profile(args.profile)
    targets = load_targets(args.targets)
    report = calibrate(targets, profile, rounds=args.rounds)
    for fit in report.fits:
        tag = "anchored" if fit.anchored else "free"
        print(f"{fit.scenario:24s} {fit.phase:20s}"
              f" target {fit.target_us / 1000:9.1f} ms"
              f" measured {fit.measured_us / 1000:9.1f} ms"
              f" residual {fit.residual:6.1%} [{tag}]")
    if args.out:
        report.profile.save(args.out)
        print(f"fitted profile -> {args.out}")
    if not report.ok:
        worst = report.worst()
        print(f"fit failed: {worst.scenario}/{worst.phase} residual "
              f"{worst.residual:.1%}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ledgersim",
        description="Discrete-event simulator of a permissioned-ledger "
                    "application stack, with a tuning advisor.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--scenario", required=True,
                   help="bundled scenario name or JSON file path")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario's seed")
    p.add_argument("--out", default=None,
                   help="directory for metrics.csv / blocks.csv / run.json")
    p.add_argument("--profile", default=None,
                   help="override the scenario's calibration profile")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("--spec", required=True, help="sweep spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel runs (default 1)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("advise", help="analyze a finished run directory")
    p.add_argument("--run", required=True,
                   help="directory holding run.json and metrics.csv")
    p.set_defaults(func=_cmd_advise)

    p = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p.set_defaults(func=_cmd_list_scenarios)

    p = sub.add_parser("validate", help="validate a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("calibrate",
                       help="fit a profile's free constants to measured "
                            "phase means")
    p.add_argument("--profile", required=True,
                   help="bundled profile name or JSON file path")
    p.add_argument("--targets", required=True,
                   help="CSV with columns scenario,phase,mean_ms")
    p.add_argument("--rounds", type=int, default=6)
    p.add_argument("--out", default=None,
                   help="write the fitted profile here")
    p.set_defaults(func=_cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except SimulationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except (ScenarioError, AdvisorError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
