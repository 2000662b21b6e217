#!/usr/bin/env python3
"""Exhaustive fuzz of the cumulative leakage bound and its derivation.

Thin wrapper over `leakchain verify-bound` with the acceptance-scale
defaults: 1000 random pipelines per depth in {2..5}, alphabets up to 4.
Exit status is nonzero iff any inequality in the chain is violated beyond
the 1e-9 slack tolerance.
"""

import argparse

from leakchain.harness import cmd_verify_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--n-min", type=int, default=2)
    ap.add_argument("--n-max", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="verify_bound")
    args = ap.parse_args()
    raise SystemExit(
        cmd_verify_bound(args.count, args.n_min, args.n_max, args.seed,
                         args.out)
    )


if __name__ == "__main__":
    main()
