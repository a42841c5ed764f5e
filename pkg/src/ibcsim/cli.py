"""Command-line entry point: ``ibcsim run`` and ``ibcsim verify``.

Exit status is 0 when every requested check passes, 1 when any check fails and
2 for invalid input (bad scenario, malformed trace, unknown check name).
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .checks import CHECK_FUNCS, Verdict, verify_trace
from .errors import MalformedTrace, ScenarioInvalid
from .harness import read_trace, run_scenario, write_trace
from .scenario import load_scenario

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _check_names(text: str) -> list[str]:
    names = [n.strip() for n in text.split(",") if n.strip()]
    if names == ["all"]:
        return list(CHECK_FUNCS)
    unknown = [n for n in names if n not in CHECK_FUNCS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(
            f"unknown checks {unknown}; choose from {', '.join(CHECK_FUNCS)} or 'all'")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibcsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario and check its invariants")
    run.add_argument("--scenario", required=True, help="scenario file (YAML or JSON)")
    run.add_argument("--seed", type=_u64, help="u64 seed; defaults to the scenario's seed")
    run.add_argument("--trace", help="write the JSON-lines trace here")
    run.add_argument("--max-steps", type=_positive, help="override the scenario's maxSteps")

    verify = sub.add_parser("verify", help="re-check invariants from a saved trace")
    verify.add_argument("--trace", required=True)
    verify.add_argument("--checks", type=_check_names, default=list(CHECK_FUNCS),
                        help="comma-separated check names, or 'all' (default)")
    return parser


def _report(verdicts: dict[str, Verdict]) -> int:
    width = max(map(len, verdicts), default=0)
    for name, verdict in verdicts.items():
        print(f"{name:<{width}}  {verdict}")
    return EXIT_OK if all(v.ok for v in verdicts.values()) else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            scenario = load_scenario(args.scenario)
            result = run_scenario(scenario, args.seed, args.max_steps)
            if args.trace:
                write_trace(result.trace, args.trace)
            return _report(result.verdicts)
        return _report(verify_trace(read_trace(args.trace), args.checks))
    except ScenarioInvalid as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
    except MalformedTrace as e:
        print(f"malformed trace: {e}", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
