import argparse
import json
import logging
import sys
from typing import List, Optional

from super.manipulator import DefaultManipulator
from utils.interface_adapter import InterfaceAdapter
from utils.logging_setup import logger, set_console_level

COMMANDS = ("generate-data", "train", "push", "eval", "explain", "ablate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoasnet", description="Prototype-based video classifier with abstention")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_path", default=None, help="RunConfig JSON (default: settings.json)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration value; may be repeated")
    common.add_argument("--run-name", dest="run_name", default="default", help="outputs go to runs/<run-name>/")
    common.add_argument("--deterministic", action="store_true", help="force deterministic kernels")
    common.add_argument("--verbose", action="store_true", help="log INFO messages to the console")

    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        cmd = sub.add_parser(command, parents=[common])
        if command in ("push", "eval", "explain"):
            cmd.add_argument("--checkpoint", default=None, help="default: runs/<run-name>/final.pt")
        if command in ("eval", "explain"):
            cmd.add_argument("--split", default=None, choices=("train", "val", "test"))
        if command == "eval":
            cmd.add_argument("--oracle", action="store_true", help="evaluate the perfect stub predictor")
            cmd.add_argument("--export-csv", dest="export_csv", action="store_true",
                             help="also write predictions_<split>.csv")
        if command == "explain":
            cmd.add_argument("--out-dir", dest="out_dir", default=None)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    # stderr is reserved for the one-line JSON error
    set_console_level(logging.INFO if args.verbose else logging.CRITICAL + 1)
    try:
        attributes = InterfaceAdapter().convert(args.command, args)
        result = DefaultManipulator().process_request(args.command, attributes)
    except Exception as e:
        logger.error(f"Command '{args.command}' failed: {type(e).__name__}: {e}")
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1
    sys.stdout.write(json.dumps(result, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(run())
