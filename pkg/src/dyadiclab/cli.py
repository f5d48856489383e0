"""Command line entry point: ``dyadiclab identities|bounds|dominate|sharpness|norm``.

Exit status is 0 when every check passes, 1 when a check fails and 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

from . import suites
from .config import ConfigError, load
from .core import ModelError
from .report import _jsonable

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("identities", "bounds", "dominate", "sharpness", "norm")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadiclab", description="Dyadic paraproduct and sparse-domination laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--mode", choices=["rational", "float"], help="scalar mode")
        p.add_argument("--out", metavar="DIR", help="directory for reports and tables")
        p.add_argument("--force-large", action="store_true", help="allow n*D above the guardrail")
    return parser


def _out_dir(args, cfg) -> Optional[Path]:
    d = args.out or cfg.get("output", {}).get("dir")
    return Path(d) if d else None


def _want_csv(cfg) -> bool:
    return bool(cfg.get("output", {}).get("csv") or cfg.get("operation", {}).get("csv"))


def execute(command: str, cfg: dict, out: Optional[Path]) -> bool:
    """Run one command, write its artifacts under ``out`` and return the verdict."""
    if command == "identities":
        rep = suites.run_identities(cfg)
    elif command == "bounds":
        rep = suites.run_bounds(cfg)
    elif command == "dominate":
        outcome = suites.run_dominate(cfg)
        rep = outcome.report
        if out is not None:
            for i, res in enumerate(outcome.results):
                suffix = "" if len(outcome.results) == 1 else f"_{i}"
                write_atomic(out / f"collection{suffix}.json", dump_json(res.to_json()))
                if _want_csv(cfg):
                    write_atomic(out / f"pointwise{suffix}.csv", res.pointwise_csv())
    elif command == "sharpness":
        rep, sweep = suites.run_sharpness(cfg)
        if out is not None:
            write_atomic(out / "sweep.csv", sweep.to_csv())
            write_atomic(out / "summary.json", dump_json(sweep.summary()))
        else:
            sys.stdout.write(sweep.to_csv())
    else:
        rep, est = suites.run_norm(cfg)
        print(f"norm = {est.value!r} ({est.method}, p = {est.p})")
    rep.meta["config"] = cfg
    if out is not None:
        write_atomic(out / f"{command}_report.json", rep.dumps() + "\n")
    print(rep.summary())
    for c in rep.failures[:20]:
        print(f"FAIL {c.name}: lhs={c.lhs} rhs={c.rhs} error={c.error}", file=sys.stderr)
    return rep.ok


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.command, args.config, {"seed": args.seed, "mode": args.mode}, args.force_large)
        ok = execute(args.command, cfg, _out_dir(args, cfg))
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if ok else EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
