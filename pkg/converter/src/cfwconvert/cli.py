"""Command-line surface: ``convert`` (checkpoint -> CFW1 via a name map)
and ``verify`` (compare engine output on converted weights against golden
flow fields)."""

from __future__ import annotations

import argparse
import sys

from .convert import convert
from .verify import verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfwconvert",
        description="Convert training checkpoints to CFW1 and verify them",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="checkpoint -> CFW1")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--map", required=True, dest="map_path")
    p.add_argument("--variant", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="compare against golden outputs")
    p.add_argument("--weights", required=True)
    p.add_argument("--golden-dir", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convert":
            summary = convert(args.checkpoint, args.map_path, args.variant, args.out)
            print(summary.render())
            return 0
        report = verify(args.weights, args.golden_dir, args.tol)
        print(report.render())
        return 0 if report.passed else 2
    except (RuntimeError, ValueError, OSError) as e:
        msg = str(e) or e.__class__.__name__
        print(f"error: {msg.splitlines()[0]}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
