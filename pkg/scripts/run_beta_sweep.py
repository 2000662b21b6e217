#!/usr/bin/env python3
"""Penalty-weight ablation: uniform beta grid at fixed depth, 3 seeds.

Produces per-run directories plus aggregate.csv under the output root;
pair with scripts/make_report.py (or `leakchain report`) for curve data.
"""

import argparse

from leakchain.config import parse_config
from leakchain.harness import cmd_sweep

from _settings import DESK_TASK, DESK_TRAIN


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/beta_sweep")
    ap.add_argument("--n-agents", type=int, default=3)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--betas", type=float, nargs="+",
                    default=[0.0, 1e-3, 1e-2, 1e-1, 1.0])
    args = ap.parse_args()

    cfg = parse_config({
        "mode": "sweep",
        "out_dir": args.out,
        "seeds": args.seeds,
        "task": {"n_agents": args.n_agents, **DESK_TASK},
        "train": dict(DESK_TRAIN),
        "sweep": {"beta": args.betas},
    })
    raise SystemExit(cmd_sweep(cfg))


if __name__ == "__main__":
    main()
