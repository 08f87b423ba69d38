"""Command-line entry points: `transcribe` and `synthesize`."""
from __future__ import annotations

import argparse
import sys

from .engine import InitFailedError, SessionConfig, run_session
from .frames import SourceSpec
from .synth import CameraScript, save_sequence, script_session


def _parse_usm(s: str) -> tuple[float, float]:
    try:
        sigma, amount = (float(v) for v in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            "unsharp filter must be SIGMA,AMOUNT (e.g. 1.5,0.7)")
    return sigma, amount


def _parse_serve(s: str) -> tuple[str, int]:
    host, _, port = s.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(
            "serve address must be HOST:PORT (e.g. 127.0.0.1:7777)")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gobanscribe",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transcribe",
                       help="transcribe a frame stream into an SGF record")
    t.add_argument("--source", required=True,
                   help="frame directory or raw video file")
    t.add_argument("--kind", choices=("image-sequence", "raw-video"),
                   default="image-sequence")
    t.add_argument("--size", type=int, choices=(9, 13, 19), default=19)
    t.add_argument("--out", required=True, help="output SGF path "
                   "(a .log move log is written beside it)")
    t.add_argument("--stride", type=int, default=1,
                   help="process every K-th frame")
    t.add_argument("--usm", type=_parse_usm, default=None,
                   metavar="SIGMA,AMOUNT", help="unsharp-mask prefilter")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--serve", type=_parse_serve, default=None,
                   metavar="HOST:PORT", help="operator NDJSON endpoint")
    t.add_argument("--report", default=None, metavar="PATH",
                   help="session report JSON; figures are written beside it")
    t.add_argument("--config", default=None,
                   help="JSON config file (flags override it)")

    s = sub.add_parser("synthesize",
                       help="render a scripted game as a PNG sequence")
    s.add_argument("--sgf", required=True, help="game record to realize")
    s.add_argument("--script", default=None,
                   help="camera script JSON (shifts, occlusions, lighting)")
    s.add_argument("--out", required=True, help="output frame directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", dest="resolution", default="640x480",
                   metavar="WxH", help="frame resolution")
    return p


def _cmd_transcribe(args) -> int:
    overrides = dict(
        source=SourceSpec(args.source, args.kind, args.stride),
        size=args.size, out=args.out, usm=args.usm, seed=args.seed,
        serve=args.serve, report=args.report)
    if args.config:
        cfg = SessionConfig.from_file(args.config, **overrides)
    else:
        cfg = SessionConfig(**overrides)
    try:
        report = run_session(cfg)
    except InitFailedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"{report.frames} frames, {report.moves} moves, "
          f"{len(report.warnings)} warnings -> {args.out}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _cmd_synthesize(args) -> int:
    with open(args.sgf) as fh:
        sgf_text = fh.read()
    script = None
    if args.script:
        with open(args.script) as fh:
            script = CameraScript.from_json(fh.read())
    try:
        w, h = (int(v) for v in args.resolution.lower().split("x"))
    except ValueError:
        print(f"error: bad resolution {args.resolution!r}", file=sys.stderr)
        return 1
    frames, truth = script_session(sgf_text, script, seed=args.seed,
                                   width=w, height=h)
    count = save_sequence(frames, args.out, truth_log=truth)
    print(f"{count} frames -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "transcribe":
        return _cmd_transcribe(args)
    return _cmd_synthesize(args)


if __name__ == "__main__":
    sys.exit(main())
