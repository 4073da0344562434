"""Command-line entry point: ``camfp {simulate,calibrate,align,reconstruct,report}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import commands
from .config import MODES, load_config


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="camfp", description="Camera-scanning Fourier ptychography with pose correction.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic scan (dataset and blind copies)")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)

    c = sub.add_parser("calibrate", help="extract pixel offsets from checkerboard correspondences")
    c.add_argument("dataset")
    c.add_argument("--out")

    a = sub.add_parser("align", help="write an aligned copy of a dataset")
    a.add_argument("dataset")
    a.add_argument("--mode", choices=MODES, default="homography_only")
    a.add_argument("--out", required=True)

    r = sub.add_parser("reconstruct", help="correct and reconstruct one dataset")
    r.add_argument("dataset")
    r.add_argument("--config")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)

    p = sub.add_parser("report", help="compare reconstruction runs")
    p.add_argument("runs", nargs="*")
    p.add_argument("--out", required=True)
    return ap


def run(args) -> None:
    if args.command == "simulate":
        commands.cmd_simulate(load_config(args.config, seed=args.seed), args.out)
    elif args.command == "calibrate":
        commands.cmd_calibrate(args.dataset, args.out)
    elif args.command == "align":
        commands.cmd_align(args.dataset, args.out, args.mode)
    elif args.command == "reconstruct":
        cfg = load_config(args.config, seed=args.seed, mode=args.mode)
        commands.cmd_reconstruct(args.dataset, cfg, args.out)
    elif args.command == "report":
        commands.cmd_report(args.runs, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ValueError, RuntimeError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"camfp {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
