"""Command-line entry point for rendering qg2rom CSV outputs."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, PlotError, PlotJob, render, render_all


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qg2rom-plots",
        description="Render qg2rom CSV outputs as PNG figures.")
    sub = parser.add_subparsers(dest="command", required=True)

    one = sub.add_parser("render", help="render a single figure")
    one.add_argument("--kind", required=True, choices=KINDS)
    one.add_argument("--input", action="append", required=True,
                     metavar="CSV", help="input CSV (repeatable)")
    one.add_argument("--output", required=True, metavar="PNG")
    one.add_argument("--title", default="")

    every = sub.add_parser(
        "render-all",
        help="render every recognized CSV in a pipeline output directory")
    every.add_argument("artifact_dir")
    every.add_argument("out_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "render":
            path = render(PlotJob.make(args.kind, args.input, args.output,
                                       args.title))
            print(f"wrote {path}")
        else:
            written = render_all(args.artifact_dir, args.out_dir)
            print(f"wrote {len(written)} figures under {args.out_dir}")
        return 0
    except (PlotError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
