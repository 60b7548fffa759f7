"""Command line: ``crwrap run|replay|acceptance|enumerate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .crsim import TooLarge
from .experiment import SAFETY, SpecError, default_jobs, enumerate_spec, load_spec, replay, run_experiment
from .model import TraceFormatError


def _run(args) -> int:
    spec = load_spec(args.spec)
    status, verdict = run_experiment(spec, args.out, args.jobs)
    print(json.dumps({k: verdict[k] for k in ("runs", "violations", "certificate_failures", "decided_fraction")}))
    return status


def _replay(args) -> int:
    checks = tuple(args.checks) if args.checks else SAFETY
    verdict = replay(args.trace, checks)
    print(json.dumps(verdict, indent=2))
    return 1 if verdict["violations"] else 0


def _enumerate(args) -> int:
    spec = load_spec(args.spec)
    status, report = enumerate_spec(spec, args.out, args.depth)
    print(json.dumps({k: report[k] for k in ("configs", "max_normalization_error")}))
    return status


def _acceptance(args) -> int:
    from .acceptance import run_all

    results = run_all(only=args.only, workdir=args.workdir, jobs=args.jobs)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crwrap", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run a seeded sweep from a spec file")
    p.add_argument("spec")
    p.add_argument("--out", help="output directory (default: spec, or $CRWRAP_OUT)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: $CRWRAP_JOBS or 1)")
    p.set_defaults(func=_run)

    p = sub.add_parser("replay", help="re-check a stored trace")
    p.add_argument("trace")
    p.add_argument("--checks", nargs="+", choices=SAFETY)
    p.set_defaults(func=_replay)

    p = sub.add_parser("acceptance", help="run the bundled acceptance suite")
    p.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    p.add_argument("--workdir", help="where experiment outputs go (default: a temporary directory)")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_acceptance)

    p = sub.add_parser("enumerate", help="exact transition probabilities for N <= 2")
    p.add_argument("spec")
    p.add_argument("--out")
    p.add_argument("--depth", type=int, default=3)
    p.set_defaults(func=_enumerate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", None) is None and hasattr(args, "jobs"):
        args.jobs = default_jobs()
    try:
        return args.func(args)
    except (SpecError, TraceFormatError, TooLarge) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
