"""`plot` command-line entry point.

Usage:
  plot --spec figure.yaml [--run DIR] [--out FILE]
  plot --preset NAME --run DIR [--out FILE]
  plot --list

Exit codes: 0 success, 1 usage/spec error, 2 unusable records.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import (
    PRESET_FIGURES,
    RecordsError,
    load_spec,
    preset_spec,
    render,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot", description="render figures from estimation run records")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="YAML figure spec file")
    group.add_argument("--preset", help="named figure preset")
    group.add_argument("--list", action="store_true",
                       help="list shipped figure presets")
    parser.add_argument("--run", help="run directory holding records.csv")
    parser.add_argument("--out", help="output PNG path")
    args = parser.parse_args(argv)

    if args.list:
        for name, (kind, run_preset) in sorted(PRESET_FIGURES.items()):
            print(f"{name:28s} kind={kind:18s} expects run preset {run_preset}")
        return 0

    try:
        if args.spec:
            spec = load_spec(args.spec)
        else:
            spec = preset_spec(args.preset)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if not args.run:
        print("error: --run is required to locate records.csv", file=sys.stderr)
        return 1
    out = args.out or f"{spec.kind}.png"

    try:
        path = render(spec, args.run, out)
    except RecordsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {Path(path)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
