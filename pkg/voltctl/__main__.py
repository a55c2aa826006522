#!/usr/bin/env python3
import argparse
import json
import logging
import signal
import sys

from .config import Config
from .controller import Controller
from .errors import VoltctlError
from .powerflow import VoltageLimits
from .scenario import PLACEMENT_KINDS


def signal_handler(sig, frame):
    """Handle Ctrl+C gracefully."""
    print("\n\nInterrupted by user. Cleaning up...")
    sys.exit(0)


def _limits(text: str) -> VoltageLimits:
    try:
        return VoltageLimits.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _months(text: str):
    return [int(m) for m in text.split(",") if m]


def _placements(text: str):
    kinds = [k for k in text.split(",") if k]
    unknown = [k for k in kinds if k not in PLACEMENT_KINDS]
    if unknown or not kinds:
        raise argparse.ArgumentTypeError(f"placements must be among {','.join(PLACEMENT_KINDS)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voltctl",
        description="Coordinated PV inverter VAr dispatch and hosting-capacity sweeps",
    )
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--out-dir", help="directory for CSV/JSON outputs")
    parser.add_argument("--max-iterations", type=int, help="dispatch iteration cap")
    parser.add_argument("--limits", type=_limits,
                        help="th_min,th_max[,pu_min,pu_max] voltage limits in p.u.")
    parser.add_argument("--json-errors", action="store_true",
                        help="also write errors as JSON on stderr")
    parser.add_argument("-v", "--verbose", action="count", default=0)

    commands = parser.add_subparsers(dest="command", metavar="<command>")
    p = commands.add_parser("validate", help="check a feeder file")
    p.add_argument("feeder")
    p = commands.add_parser("solve", help="one power flow, voltage CSV")
    p.add_argument("scenario")
    p = commands.add_parser("baseline", help="tune regulator taps and capacitors per month")
    p.add_argument("feeder")
    p.add_argument("profiles")
    p = commands.add_parser("sensitivity", help="sensitivity matrix CSV")
    p.add_argument("scenario")
    p = commands.add_parser("coordinate", help="coordinated dispatch, trace and dispatch CSV")
    p.add_argument("scenario")
    p = commands.add_parser("zoned", help="per-phase dispatch with validation flow")
    p.add_argument("scenario")
    p = commands.add_parser("hc-sweep", help="hosting-capacity sweep")
    p.add_argument("scenario")
    p.add_argument("--modes", help="comma-separated modes, e.g. upf,vv,coordinated")
    p = commands.add_parser("hc-table", help="month x placement x mode hosting-capacity table")
    p.add_argument("scenario")
    p.add_argument("--modes", help="comma-separated modes, e.g. upf,vv,coordinated")
    p.add_argument("--placements", type=_placements, help="comma-separated subset of All,Near,Far")
    p = commands.add_parser("profiles", help="generate synthetic month profiles")
    p.add_argument("--months", type=_months, default=[5, 6, 7, 8, 9, 10])
    p.add_argument("--count-load", type=int, default=5)
    p.add_argument("--count-pv", type=int, default=6)
    p.add_argument("--resolution", choices=["hourly", "minutely"], default="hourly")
    p = commands.add_parser("compare", help="hourly UPF / VV / coordinated comparison")
    p.add_argument("scenario")
    p = commands.add_parser("worst-case", help="worst hour per month")
    p.add_argument("scenario")
    p.add_argument("--mode", default="upf")
    commands.add_parser("init-config", help="write the default configuration file")
    return parser


def _report(error: Exception, code: int, as_json: bool):
    print(f"\nError: {error}", file=sys.stderr)
    if as_json:
        print(json.dumps({"error": type(error).__name__, "message": str(error),
                          "exit_code": code}), file=sys.stderr)


def main(argv=None):
    """Main entry point."""
    # Set up signal handler for Ctrl+C
    signal.signal(signal.SIGINT, signal_handler)

    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return

    level = {0: None, 1: "INFO"}.get(args.verbose, "DEBUG") or Config.get_log_level()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    controller = Controller(args.out_dir, args.seed, args.max_iterations, args.limits)

    try:
        command = args.command
        if command == "validate":
            code = controller.validate(args.feeder)
        elif command == "solve":
            code = controller.solve(args.scenario)
        elif command == "baseline":
            code = controller.baseline(args.feeder, args.profiles)
        elif command == "sensitivity":
            code = controller.sensitivity(args.scenario)
        elif command == "coordinate":
            code = controller.coordinate(args.scenario)
        elif command == "zoned":
            code = controller.zoned(args.scenario)
        elif command == "hc-sweep":
            modes = args.modes.split(",") if args.modes else None
            code = controller.hc_sweep(args.scenario, modes)
        elif command == "hc-table":
            modes = args.modes.split(",") if args.modes else None
            code = controller.hc_table(args.scenario, modes, args.placements)
        elif command == "profiles":
            code = controller.profiles(args.seed or 0, args.months, args.count_load,
                                       args.count_pv, args.resolution)
        elif command == "compare":
            code = controller.compare(args.scenario)
        elif command == "worst-case":
            code = controller.worst_case(args.scenario, args.mode)
        elif command == "init-config":
            code = controller.init_config()
        else:
            print(f"Unknown command: {command}")
            code = 1

    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user.")
        sys.exit(0)
    except VoltctlError as e:
        _report(e, e.exit_code, args.json_errors)
        sys.exit(e.exit_code)
    except Exception as e:
        _report(e, 1, args.json_errors)
        sys.exit(1)

    sys.exit(code)


if __name__ == "__main__":
    main()
