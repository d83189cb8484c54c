"""Command-line entry point: ``jsibell <command> [config.json] [--key value ...]``.

Flags mirror :class:`RunConfig` keys (``--total-coincidences 1e8``); flags
override the config file.  Exit codes: 0 success, 2 invalid input or config,
3 computation failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import fields

from .config import ConfigError, RunConfig, from_dict, load_config
from .io import FormatError
from .workflows import COMMANDS, StageError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_COMPUTATION = 3
EXIT_IO = 4


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _state(text: str):
    if text in ("max", "optimal"):
        return text
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("state is 'max', 'optimal' or comma-separated coefficients") from None


def _optional_int(text: str):
    return None if text.lower() in ("none", "null", "auto") else int(text)


def _converter(name: str, annotation):
    special = {"state": _state, "periods_covered": _optional_int, "input": str}
    if name in special:
        return special[name]
    return {"int": int, "float": float, "bool": _bool, "str": str}[str(annotation)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jsibell", description="High-dimensional frequency-bin Bell tests from joint spectra.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=COMMANDS[cmd].__doc__.splitlines()[0] if COMMANDS[cmd].__doc__ else cmd)
        p.add_argument("config", nargs="?", help="JSON run configuration")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, type=_converter(f.name, f.type), default=argparse.SUPPRESS, metavar=f.name.upper())
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = load_config(args.config).to_dict() if args.config else {}
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)}
    return from_dict({**base, **overrides})


def _summary(report: dict) -> str:
    keep = {k: v for k, v in report.items() if k not in ("config",)}
    return json.dumps(keep, indent=2, sort_keys=True)


def main(argv: typing.Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        config = resolve_config(args)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, TypeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = COMMANDS[args.command](config)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, (FileNotFoundError, PermissionError)):
            return EXIT_IO
        if isinstance(cause, FormatError) or (exc.stage == "ingest" and isinstance(cause, ValueError)):
            return EXIT_VALIDATION
        return EXIT_COMPUTATION
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    print(_summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
