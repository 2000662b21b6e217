#!/usr/bin/env python3
"""Aggregate finished runs into summary tables and plot-ready CSVs."""

import argparse
import glob
from pathlib import Path

from leakchain.harness import cmd_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--glob", default="runs/*/*",
                    help="pattern matching run directories")
    ap.add_argument("--out", default="report")
    args = ap.parse_args()
    dirs = sorted(d for d in glob.glob(args.glob) if Path(d).is_dir())
    raise SystemExit(cmd_report(dirs, args.out))


if __name__ == "__main__":
    main()
