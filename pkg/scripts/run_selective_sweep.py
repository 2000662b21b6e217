#!/usr/bin/env python3
"""Selective regularization ablation: none vs early-stages-only vs all.

The named conditions share one total penalty budget (N * beta): the early
condition concentrates it on the first half of the pipeline, the all
condition spreads it uniformly.
"""

import argparse

from leakchain.config import parse_config
from leakchain.harness import cmd_sweep

from _settings import DESK_TASK, DESK_TRAIN


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/selective_sweep")
    ap.add_argument("--n-agents", type=int, default=4)
    ap.add_argument("--beta", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    cfg = parse_config({
        "mode": "sweep",
        "out_dir": args.out,
        "seeds": args.seeds,
        "task": {"n_agents": args.n_agents, **DESK_TASK},
        "train": {**DESK_TRAIN, "beta": args.beta},
        "sweep": {"selective": ["none", "early", "all"]},
    })
    raise SystemExit(cmd_sweep(cfg))


if __name__ == "__main__":
    main()
