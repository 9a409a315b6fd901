"""Command-line front end: ``kvnsim {run,check,resources,scaling} --config PATH``."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from .config import config_hash, parse_scenario, resolved_dict
from .errors import KvnError
from .runner import EXIT_CONFIG, EXIT_STAGE, resources_for, run_scenario

log = logging.getLogger("kvnsim")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kvnsim", description="Koopman-von Neumann simulation scenarios")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "execute a scenario and write its outputs"),
        ("check", "validate a scenario without running it"),
        ("resources", "print the quantum/classical resource estimate"),
        ("scaling", "run only the sampling scaling study"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path, help="scenario JSON file")
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=_seed, default=None, help="random seed (overrides the config)")
        sp.add_argument("--quiet", action="store_true", help="only print errors")
    return p


def _thread_limit():
    """Cap BLAS/OpenMP pools when KVNSIM_THREADS is set."""
    raw = os.environ.get("KVNSIM_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise KvnError(f"KVNSIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise KvnError("KVNSIM_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _emit(obj, quiet=False):
    if not quiet:
        print(json.dumps(obj, indent=2, sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        scen = parse_scenario(args.config)
        if args.seed is not None:
            scen = scen.model_copy(update={"seed": args.seed})
        limit = _thread_limit()
    except KvnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "check":
        if not args.quiet:
            print("OK")
        _emit({"config_sha256": config_hash(scen), "scenario": resolved_dict(scen)}, args.quiet)
        return 0

    try:
        with limit:
            if args.command == "resources":
                est = resources_for(scen)
                if args.out is not None:
                    args.out.mkdir(parents=True, exist_ok=True)
                    (args.out / "resources.json").write_text(json.dumps(est, indent=2, sort_keys=True) + "\n")
                _emit(est, args.quiet)
                return 0
            rep = run_scenario(scen, args.out, sampling_only=args.command == "scaling")
    except KvnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.command == "resources" else EXIT_STAGE

    if not args.quiet:
        for g in rep.gates:
            print(f"gate {g['index']} {g['kind']}: {'PASS' if g['passed'] else 'FAIL'} (value={g['value']})")
        print(f"outputs: {args.out if args.out is not None else scen.output_dir}")
    if rep.error:
        print(f"error: {rep.error}", file=sys.stderr)
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
