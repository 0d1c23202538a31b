"""Command-line front end: ``nvlock [--config PATH] [--seed N] [--out DIR] [--quiet] CMD``.

Exit codes: 0 pass, 1 usage or configuration error, 2 property failure,
3 lock loss.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import SCENARIOS, ConfigError, load_config
from .io import MANIFEST_NAME, verify_manifest
from .scenarios import UnstableLoopError, run_scenario

EXIT_OK, EXIT_USAGE, EXIT_PROPERTY, EXIT_LOCK_LOST = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _globals(suppress):
    p = argparse.ArgumentParser(add_help=False)
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=d, help="YAML scenario config")
    p.add_argument("--seed", metavar="N", type=int, default=d, help="override the config seed")
    p.add_argument("--out", metavar="DIR", default=d, help="output directory")
    p.add_argument("--quiet", action="store_true", default=d, help="only report errors")
    return p


def build_parser():
    parser = _Parser(prog="nvlock", parents=[_globals(False)],
                     description="Frequency-locked NV magnetometer scenarios.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "step": "step response at several laser-power (contrast) levels",
        "range": "closed-loop dynamic range against the open-loop readout",
        "vector": "sequential four-class locking and vector reconstruction",
        "sensitivity": "Allan deviation and noise-equivalent field",
        "spectrum": "swept lock-in spectrum of all resonances",
    }
    for name in SCENARIOS:
        sp = sub.add_parser(name, parents=[_globals(True)], help=helps[name])
        sp.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    vp = sub.add_parser("verify", parents=[_globals(True)],
                        help="check a run manifest against its artifacts")
    vp.add_argument("manifest", nargs="?", help=f"manifest file or run directory "
                                                f"(default: DIR/{MANIFEST_NAME} from --out)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    quiet = bool(args.quiet)

    def say(msg):
        if not quiet:
            print(msg)

    if args.command == "verify":
        target = args.manifest or args.out
        if target is None:
            print("nvlock verify: give a manifest path or --out DIR", file=sys.stderr)
            return EXIT_USAGE
        problems = verify_manifest(Path(target))
        for p in problems:
            print(f"verify: {p}", file=sys.stderr)
        say("verify: ok" if not problems else f"verify: {len(problems)} problem(s)")
        return EXIT_OK if not problems else EXIT_PROPERTY

    try:
        cfg = load_config(args.config, args.command, args.seed)
    except ConfigError as exc:
        print(f"nvlock {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or f"nvlock-{args.command}")
    try:
        result = run_scenario(cfg, out, gnuplot=args.gnuplot)
    except UnstableLoopError as exc:
        print(f"nvlock {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"nvlock {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for line in result.lines():
        say(line)
    say(f"artifacts: {out}")
    if result.lock_lost:
        print(f"nvlock {args.command}: lock lost; see {out}/summary.txt", file=sys.stderr)
        return EXIT_LOCK_LOST
    if not result.passed:
        print(f"nvlock {args.command}: property check failed", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
