"""Command-line entry point: ``mpal <subcommand> [options]``.

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
or diagnostic error.  ``MPAL_LOG`` sets the log level (e.g. DEBUG, INFO).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import load_config
from .emit import json_text
from .errors import ConfigError, DiagnosticError, UsageError
from .experiments import RUNNERS, replay_emsa
from .geometry import (
    Cube,
    boundary,
    make_cover,
    rearrange,
)

log = logging.getLogger("mpal")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIAGNOSTIC = 0, 1, 2, 3


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="mpal", description="Multi-particle localization experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("localize", "wegner", "emsa", "schedule"):
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=name != "emsa", help="experiment JSON")
        p.add_argument("--seed", type=_u64, help="override run.base_seed")
        p.add_argument("--trials", type=_positive, help="override run.trials")
        p.add_argument("--out", help="override run.out")
        p.add_argument("--workers", type=_positive, help="override run.workers")
        p.add_argument("--cap", type=_positive, help="override the dense size cap")
        if name == "emsa":
            p.add_argument("--replay", help="recompute one per-seed JSON report and compare")
    g = sub.add_parser("geometry", help="print a cube, its cover and boundary sets")
    g.add_argument("--center", required=True, help="coordinates, e.g. '4 1'")
    g.add_argument("--L", type=float, required=True)
    g.add_argument("--l", type=float, help="cover scale (default: no cover)")
    return ap


def _setup_logging():
    level = os.environ.get("MPAL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fmt(x):
    return " ".join(str(c) for c in x)


def cmd_geometry(args, out):
    try:
        center = tuple(int(c) for c in args.center.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad --center: {args.center!r}") from exc
    if not center:
        raise ConfigError("--center needs at least one coordinate")
    cube = Cube(center, args.L)
    members = cube.members
    print(f"# cube center={_fmt(rearrange(center))} L={args.L} size={len(members)}", file=out)
    for x in members.elements:
        print(_fmt(x), file=out)
    if args.l is not None:
        cover = make_cover(center, args.L, args.l)
        print(f"# cover l={args.l} centers={len(cover.centers)}", file=out)
        for a in cover.centers:
            print(_fmt(a), file=out)
        inner = Cube(center, args.l).members
        b = boundary(inner, members)
        print(f"# exterior boundary of the l-cube in the L-cube size={len(b.exterior)}", file=out)
        for x in b.exterior.elements:
            print(_fmt(x), file=out)
        print(f"# interior boundary of the l-cube in the L-cube size={len(b.interior)}", file=out)
        for x in b.interior.elements:
            print(_fmt(x), file=out)


def cmd_replay(path, out):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    fresh = replay_emsa(json.loads(text))
    same = fresh == text
    print("replay identical" if same else "replay differs", file=out)
    return EXIT_OK if same else EXIT_DIAGNOSTIC


def main(argv=None, out=None):
    out = out or sys.stdout
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "geometry":
            cmd_geometry(args, out)
            return EXIT_OK
        if args.command == "emsa" and args.replay:
            return cmd_replay(args.replay, out)
        if not args.config:
            raise ConfigError("--config is required")
        cfg = load_config(args.config)
        if cfg.experiment != args.command:
            raise ConfigError(f"config is for '{cfg.experiment}', not '{args.command}'")
        cfg = cfg.replace_run(base_seed=args.seed, trials=args.trials, out=args.out,
                              workers=args.workers, cap=args.cap)
        RUNNERS[args.command](cfg)
        print(f"wrote {args.command} outputs to {cfg.run.out}", file=out)
        return EXIT_OK
    except (ConfigError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiagnosticError as exc:
        print(f"diagnostic error: {exc}", file=sys.stderr)
        if exc.context:
            print(json_text({k: str(v) for k, v in exc.context.items()}), file=sys.stderr, end="")
        return EXIT_DIAGNOSTIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
