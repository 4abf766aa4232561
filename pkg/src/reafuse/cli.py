"""Command-line front-end: ``reafuse verify|oracle|gradcheck|demo``.

Every subcommand takes ``--config <path>`` (JSON, schema in
``harness.HarnessConfig``; a commented sample lives in the README) and
optionally ``--seed <u64>`` to override the config seed and ``--json <path>``
to write the full report.  ``demo`` additionally requires ``--out <dir>``.

Exit codes: 0 pass, 1 definite failure, 2 invalid config or unusable paths,
3 non-finite values encountered, 4 breakage demonstration inconclusive.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    Report,
    load_config,
    run_demo,
    run_gradcheck,
    run_oracle,
    run_verify,
)

__all__ = ["build_parser", "entrypoint", "main"]

_COMMANDS = {
    "verify": "equivariance matrix over all pyramid variants",
    "oracle": "fast implementations against straight-line references",
    "gradcheck": "recorded gradients against central finite differences",
    "demo": "build one pyramid and serialize its levels",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reafuse",
        description="verification harness for rotation-equivariant attentional fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, metavar="<path>",
                         help="JSON config file")
        cmd.add_argument("--out", metavar="<dir>",
                         help="output directory (required for demo)")
        cmd.add_argument("--seed", type=int, metavar="<u64>",
                         help="override the config seed")
        cmd.add_argument("--json", metavar="<path>",
                         help="write the full JSON report here")
    return parser


def entrypoint(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed {args.seed} does not fit in u64")
            config = dataclasses.replace(config, seed=args.seed)
        if args.command == "demo":
            if not args.out:
                raise ConfigError("demo requires --out <dir>")
            report = run_demo(config, args.out)
        elif args.command == "verify":
            report = run_verify(config)
        elif args.command == "oracle":
            report = run_oracle(config)
        else:
            report = run_gradcheck(config)
        _emit(report, args.json)
        return report.exit_code
    except ConfigError as exc:
        print(f"reafuse: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"reafuse: error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"reafuse: error: non-finite values: {exc}", file=sys.stderr)
        return 3


def _emit(report: Report, json_path) -> None:
    for line in report.summary_lines():
        print(line)
    if json_path:
        Path(json_path).write_text(report.to_json(), encoding="utf-8")
        print(f"report written to {json_path}")


def main() -> None:
    sys.exit(entrypoint())


if __name__ == "__main__":
    main()
