"""Command line interface: ``kmob <subcommand> <config.json> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .config import CHECKS, load
from .errors import ConfigError, ConstructionError, DomainViolation, EmptyDomain, KmobError

PRESETS = {
    "classify": ["kahler"],
    "verify": ["kahler", "solution", "extended", "nullity", "equivalence"],
    "mobility": ["solution", "mobility", "f_poly", "cproj"],
    "cone": ["cone"],
    "report": None,  # use the configured list
}

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kmob", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in PRESETS:
        p = sub.add_parser(name, help=f"run the {name} checks")
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--out", help="write the JSON report here (default: stdout)")
        p.add_argument("--csv", help="write per-point residuals as CSV")
        p.add_argument("--seed", type=int, help="override points.seed")
        p.add_argument("--points", type=int, help="override points.count")
        p.add_argument("--no-timestamp", action="store_true", help="omit the generated_at field")
    return ap


def _summary_line(report: dict) -> str:
    n = len(report["checks"])
    bad = [r["name"] for r in report["checks"] if not r["pass"]]
    status = "PASS" if not bad else "FAIL"
    tail = "" if not bad else ": " + ", ".join(bad)
    return f"{status} {n - len(bad)}/{n} checks{tail}"


def main(argv=None) -> int:
    from .runner import emit_csv, run, write_report

    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config)
        if args.seed is not None:
            cfg["points"]["seed"] = args.seed
        if args.points is not None:
            if args.points < 2:
                raise ConfigError("--points must be at least 2")
            cfg["points"]["count"] = args.points
        preset = PRESETS[args.command]
        if preset is not None:
            cfg["checks"] = [c for c in CHECKS if c in preset]
        out = args.out or cfg["output"].get("report")
        csv_path = args.csv or cfg["output"].get("csv")
        report = run(cfg, timestamp=not args.no_timestamp)
    except (ConfigError, ConstructionError, DomainViolation, EmptyDomain) as exc:
        print(f"kmob: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KmobError as exc:
        print(f"kmob: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL

    if out:
        write_report(report, out)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True, ensure_ascii=False)
        sys.stdout.write("\n")
    if csv_path:
        emit_csv(report, csv_path)
    print(_summary_line(report), file=sys.stderr)
    return EXIT_PASS if report["passed"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
