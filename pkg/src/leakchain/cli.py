"""Command-line entry point.

    leakchain verify-bound --count 1000 --n-min 2 --n-max 5 --seed 0
    leakchain train  --config cfg.yaml
    leakchain sweep  --config cfg.yaml
    leakchain probe  --run runs/<id> [--baseline runs/<id>]
    leakchain report --glob 'runs/*'

Output roots come from the config's ``out_dir`` (or --out for commands
without a config); the LEAKCHAIN_OUT environment variable overrides both.
"""

from __future__ import annotations

import argparse
import glob as globmod
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .harness import cmd_probe, cmd_report, cmd_sweep, cmd_train, cmd_verify_bound


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="leakchain",
        description="Compositional leakage verification and MI-regularized "
                    "pipeline training",
    )
    sub = p.add_subparsers(dest="command", required=True)

    vb = sub.add_parser("verify-bound",
                        help="fuzz the cumulative leakage bound chain")
    vb.add_argument("--count", type=int, default=1000,
                    help="pipelines per depth (default 1000)")
    vb.add_argument("--n-min", type=int, default=2)
    vb.add_argument("--n-max", type=int, default=5)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--max-alphabet", type=int, default=4)
    vb.add_argument("--out", default="verify_bound")

    tr = sub.add_parser("train", help="train one configuration per seed")
    tr.add_argument("--config", required=True)

    sw = sub.add_parser("sweep", help="run a config grid with aggregation")
    sw.add_argument("--config", required=True)

    pr = sub.add_parser("probe", help="re-evaluate a stored run")
    pr.add_argument("--run", required=True)
    pr.add_argument("--baseline", default=None,
                    help="baseline run dir for the PI denominator")

    rp = sub.add_parser("report", help="aggregate run dirs into plot data")
    rp.add_argument("--glob", required=True,
                    help="glob matching run directories")
    rp.add_argument("--out", default="report")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify-bound":
            out = os.environ.get("LEAKCHAIN_OUT", args.out)
            return cmd_verify_bound(args.count, args.n_min, args.n_max,
                                    args.seed, out,
                                    max_alphabet=args.max_alphabet)
        if args.command == "train":
            return cmd_train(load_config(args.config))
        if args.command == "sweep":
            return cmd_sweep(load_config(args.config))
        if args.command == "probe":
            return cmd_probe(args.run, args.baseline)
        if args.command == "report":
            dirs = sorted(
                d for d in globmod.glob(args.glob) if Path(d).is_dir()
            )
            out = os.environ.get("LEAKCHAIN_OUT", args.out)
            return cmd_report(dirs, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
