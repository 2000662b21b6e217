#!/usr/bin/env python3
"""Depth ablation: baseline vs regularized pipelines for N in {2..5}.

The aggregate's probe_total_above_chance column is the depth-amplification
readout: summed above-chance decodability of every stage's sensitive symbol.
"""

import argparse

from leakchain.config import parse_config
from leakchain.harness import cmd_sweep

from _settings import DESK_TASK, DESK_TRAIN


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/depth_sweep")
    ap.add_argument("--depths", type=int, nargs="+", default=[2, 3, 4, 5])
    ap.add_argument("--beta", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    cfg = parse_config({
        "mode": "sweep",
        "out_dir": args.out,
        "seeds": args.seeds,
        "task": dict(DESK_TASK),
        "train": dict(DESK_TRAIN),
        "sweep": {"beta": [0.0, args.beta], "depth": args.depths},
    })
    raise SystemExit(cmd_sweep(cfg))


if __name__ == "__main__":
    main()
