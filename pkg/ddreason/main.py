"""
DDReason Main Entry Point
Command-line front end for the RPN stack-reasoning experiments.

Commands:
  • gen      seeded RPN dataset generation
  • train    DDRstack / LSTM baseline training with checkpoints and metric CSVs
  • params   parameter counts of a model configuration
  • eval     overall and per-subproblem L1 of a checkpoint
  • report   curve CSVs across runs
  • exec     symbolic fork/stack program execution on a scene

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort.
"""

import argparse
import logging
import os
import sys

# Ensure the ddreason package directory is on the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from logger import log, set_console_level
from dispatch import COMMAND_DEFINITIONS, dispatch_command, get_commands_help


# ── Banner ──────────────────────────────────────────────────────────────────

BANNER = r"""
╔═══════════════════════════════════════════════╗
║   D D R E A S O N                             ║
║   stack reasoning on RPN · fork/stack exec    ║
╚═══════════════════════════════════════════════╝
"""

_TYPES = {"string": str, "integer": int, "number": float}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddreason",
        description="Stack-driven reasoning experiments.",
        epilog=get_commands_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--quiet", action="store_true", help="No banner; only warnings and errors on the console.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for definition in COMMAND_DEFINITIONS:
        sub = subparsers.add_parser(definition["name"], help=definition["description"],
                                    description=definition["description"])
        for name, param in definition.get("parameters", {}).items():
            flag = "--" + name.replace("_", "-")
            if param["type"] == "boolean":
                sub.add_argument(flag, dest=name, action="store_true", help=param["description"])
                continue
            sub.add_argument(
                flag,
                dest=name,
                type=_TYPES[param["type"]],
                default=None,
                required=bool(param.get("required")),
                help=param["description"] + (f" (default: {param['default']})" if "default" in param else ""),
            )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.quiet:
        set_console_level(logging.WARNING)
    else:
        print(BANNER, file=sys.stderr)

    parameters = {k: v for k, v in vars(args).items() if k not in ("command", "quiet")}
    log.info(f"Running '{args.command}'...")
    result = dispatch_command(args.command, parameters)
    if result.stdout:
        print(result.stdout)
    if result.stderr:
        print(result.stderr, file=sys.stderr)
    if not result.success:
        log.error(f"'{args.command}' failed with exit code {result.return_code}.")
    return result.return_code


if __name__ == "__main__":
    sys.exit(main())
