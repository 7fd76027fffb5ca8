#!/usr/bin/env python3
"""
Command-line front end of the fair data exchange simulator.

Subcommands:
    run          Run a scenario, write its transcript, exit with the outcome code
    diff         Check a transcript against the ideal functionality
    fuzz         Run a scenario under many adversary seeds and check fairness
    replay       Re-run a scenario under the actions of a transcript
    ls-policies  List the adversary policies

Exit codes: 0 settled / PASS, 1 usage or input error, 2 no progress,
3 stuck escrow, 4 divergence / FAIL, 5 step budget exhausted.
"""

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from fairex.config import SimulatorConfig
from fairex.errors import FairexError, ScenarioParseError, ScenarioValidationError
from fairex.harness.runner import (
    EXIT_CODES,
    EXIT_USAGE,
    Outcome,
    diff_real_ideal,
    fuzz,
    replay,
    run_scenario,
)
from fairex.harness.scenario import Scenario, load_scenario
from fairex.harness.transcript import Transcript
from fairex.policies import policy_summaries
from scripts.utils import (
    default_transcript_path,
    get_config,
    print_msg,
    print_section,
    print_validation_error,
    setup_logging,
)

logger = logging.getLogger(__name__)


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Returns:
        argparse.Namespace: Parsed arguments
    """
    parser = argparse.ArgumentParser(
        prog="fairex",
        description="Simulate a fair data exchange under an adversarial network",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  fairex run scenarios/honest.yaml --seed 7
  fairex diff transcripts/honest-seed7.jsonl
  fairex fuzz scenarios/honest.yaml --policies random --count 1000 --jobs 4
  fairex ls-policies
        """,
    )
    parser.add_argument("--config", help="Config file (default: config.yaml)")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Override the configured log level",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario")
    run.add_argument("scenario", help="Scenario YAML file")
    run.add_argument("--seed", type=int, help="Run seed (default: the scenario's)")
    run.add_argument("--out", help="Transcript path (default: under transcript_dir)")
    run.add_argument(
        "--no-write", action="store_true", help="Do not write the transcript"
    )

    diff = sub.add_parser("diff", help="Check a transcript against the ideal run")
    diff.add_argument("transcript", help="Transcript JSON-lines file")

    fz = sub.add_parser("fuzz", help="Fuzz a scenario over many seeds")
    fz.add_argument("scenario", help="Scenario YAML file")
    fz.add_argument(
        "--policies",
        default="random",
        help="Comma-separated policy names to cycle through (default: random)",
    )
    fz.add_argument("--count", type=int, default=100, help="Number of runs")
    fz.add_argument("--seed", type=int, default=0, help="First seed")
    fz.add_argument("--jobs", type=int, default=1, help="Worker processes")

    rp = sub.add_parser("replay", help="Replay a transcript's actions")
    rp.add_argument("scenario", help="Scenario YAML file the transcript came from")
    rp.add_argument("transcript", help="Transcript JSON-lines file")

    sub.add_parser("ls-policies", help="List adversary policies")

    return parser.parse_args(argv)


def _load(path: str, config: SimulatorConfig) -> Optional[Scenario]:
    try:
        return load_scenario(path, config)
    except FileNotFoundError:
        print_msg(f"Scenario file not found: {path}", "error")
    except ScenarioParseError as e:
        where = f" (line {e.line})" if e.line is not None else ""
        print_msg(f"{e}{where}", "error")
    except ScenarioValidationError as e:
        print_validation_error(e, path)
    return None


def _load_transcript(path: str) -> Optional[Transcript]:
    try:
        return Transcript.load(path)
    except FileNotFoundError:
        print_msg(f"Transcript file not found: {path}", "error")
    except ValueError as e:
        print_msg(f"{path}: {e}", "error")
    return None


def cmd_run(args: argparse.Namespace, config: SimulatorConfig) -> int:
    scenario = _load(args.scenario, config)
    if scenario is None:
        return EXIT_USAGE
    seed = scenario.seed if args.seed is None else args.seed
    out = None
    if not args.no_write:
        out = args.out or default_transcript_path(config, scenario.name, seed)

    result = run_scenario(scenario, seed, config=config, out=out)
    level = "success" if result.outcome is Outcome.SETTLED else "info"
    print_msg(f"{scenario.name} (seed {seed}): {result.outcome.value}", level)
    if not result.diff.ok:
        print(json.dumps(result.diff.to_json(), sort_keys=True))
    if result.path is not None:
        print(f"  Transcript: {result.path}")
    return result.exit_code


def cmd_diff(args: argparse.Namespace, config: SimulatorConfig) -> int:
    transcript = _load_transcript(args.transcript)
    if transcript is None:
        return EXIT_USAGE
    try:
        report = diff_real_ideal(transcript)
    except (KeyError, ValueError) as e:
        print_msg(f"{args.transcript}: not a simulator transcript: {e}", "error")
        return EXIT_USAGE
    if report.ok:
        print_msg("PASS", "success")
        return 0
    print_msg("FAIL", "error")
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_CODES[Outcome.DIVERGENCE]


def cmd_fuzz(args: argparse.Namespace, config: SimulatorConfig) -> int:
    scenario = _load(args.scenario, config)
    if scenario is None:
        return EXIT_USAGE
    policies = [name.strip() for name in args.policies.split(",") if name.strip()]
    try:
        cases = fuzz(
            scenario, args.seed, args.count, policies, jobs=args.jobs, config=config
        )
    except ValueError as e:
        print_msg(str(e), "error")
        return EXIT_USAGE

    print_section(f"Fuzzing {scenario.name}: {len(cases)} runs")
    tally: dict[str, int] = {}
    for case in cases:
        tally[case.outcome.value] = tally.get(case.outcome.value, 0) + 1
    for outcome, count in sorted(tally.items()):
        print(f"  {outcome}: {count}")

    failed = [case for case in cases if not case.passed]
    if not failed:
        print_msg("Fairness, conservation and equivalence held on every run", "success")
        return 0
    for case in failed[:10]:
        print_msg(
            f"seed {case.seed} ({case.policy}): fair={case.fair} "
            f"conserved={case.conserved} sound={case.sound} "
            f"first violation at step {case.first_violation}",
            "error",
        )
        if not case.diff.ok:
            print(json.dumps(case.diff.to_json(), sort_keys=True))
    return EXIT_CODES[Outcome.DIVERGENCE]


def cmd_replay(args: argparse.Namespace, config: SimulatorConfig) -> int:
    scenario = _load(args.scenario, config)
    transcript = _load_transcript(args.transcript)
    if scenario is None or transcript is None:
        return EXIT_USAGE
    try:
        replayed = replay(scenario, transcript)
    except ValueError as e:
        print_msg(str(e), "error")
        return EXIT_USAGE
    if replayed.dumps() == transcript.without_harness_records().dumps():
        print_msg("Replay reproduced the transcript", "success")
        return 0
    print_msg("Replay differs from the transcript", "error")
    return EXIT_CODES[Outcome.DIVERGENCE]


def cmd_ls_policies(args: argparse.Namespace, config: SimulatorConfig) -> int:
    for name, summary in policy_summaries().items():
        print(f"{name:14} {summary}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "diff": cmd_diff,
    "fuzz": cmd_fuzz,
    "replay": cmd_replay,
    "ls-policies": cmd_ls_policies,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    args = parse_arguments(argv)
    config = get_config(args.config)
    setup_logging(args.log_level or config.log_level)
    try:
        return COMMANDS[args.command](args, config)
    except FairexError as e:
        logger.error("%s failed: %s", args.command, e)
        print_msg(str(e), "error")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
