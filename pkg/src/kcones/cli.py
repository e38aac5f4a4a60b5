"""Command-line entry point.

Exit codes: 0 when every requested verdict passes, 1 when one fails, 2 for
usage or configuration errors and 3 when a requested analysis does not
converge numerically.
"""

import argparse
import sys

from .config import apply_overrides, parse_config, parse_overrides
from .errors import ConfigParseError, ConfigValidationError
from .report import EXIT_USAGE, emit_report, run_scenario

COMMANDS = {
    "spectrum": ["spectrum"],
    "split": ["extract_splitting"],
    "cones": ["build_cones"],
    "verify": None,  # the config's check: entries, or every condition
    "roundtrip": ["roundtrip"],
    "probe": ["theoremC"],
    "run": None,  # everything the config lists
}
ALL_CHECKS = "check:C1,C2,C3,C4,C3',D1,D2,D3,D3'"


class _Parser(argparse.ArgumentParser):
    # usage errors exit with the configuration-error code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="kcones", description="Cones, dominated splittings and Lyapunov "
                                           "exponents for matrix cocycles.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="scenario JSON file")
        s.add_argument("--seed", type=int, help="override the scenario seed")
        s.add_argument("--orbit-length", type=int, help="override the number of forward steps")
        s.add_argument("--output", default="kcones_output", help="report directory")
        s.add_argument("--format", choices=("json", "csv"), help="report format")
        s.add_argument("--tolerance-overrides", default="", metavar="K=V,...",
                       help="override named tolerances")
    return p


def _analyses(command, config):
    if command == "run":
        return list(config.analyses)
    if command == "verify":
        checks = [a for a in config.analyses if a.startswith("check:")]
        return checks or [ALL_CHECKS]
    return COMMANDS[command]


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        config = apply_overrides(config, seed=args.seed, orbit_length=args.orbit_length,
                                 fmt=args.format,
                                 tolerances=parse_overrides(args.tolerance_overrides))
    except (ConfigParseError, ConfigValidationError, OSError) as exc:
        print(f"kcones: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = run_scenario(config, _analyses(args.command, config))
    paths = emit_report(report, config.format, args.output)
    for a in report.analyses:
        state = "error" if a.error else ("pass" if a.passed else "fail")
        line = f"{a.name}: {state}"
        if a.error:
            line += f" ({a.error[0]}: {a.error[1]})"
        print(line)
    print("wrote " + ", ".join(paths))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
