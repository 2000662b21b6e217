"""Experiment orchestration: run directories, sweeps, aggregation, reports.

Every training run owns one directory named by a short hash of its full
config snapshot:

    <out_root>/<run_id>/
        config_snapshot.yaml   exact RunConfig for this run (one seed)
        train_trace.csv        iter,utility_nats,penalty_agent_*_nats,total_nats
        mi_trace.csv           iter,agent,mi_nats,joint_mean,log_partition
        eval_trace.csv         iter,split,utility_nats,accuracy
        metrics.csv            run_id,N,beta,seed,ce_nats,bs,la,sb,bo,os,
                               mi_avg_nats,pi,ot,rc,rt,pari
        probe_detail.csv       stage,own_acc,final_acc,chance
        run_record.json        timestamps + artifact listing (not compared
                               for reproducibility; CSV bodies are)
        checkpoints/           model.npz, critic<i>.npz

CSV bodies contain no timestamps and use fixed float formatting, so any
command rerun with the same config and seeds regenerates them byte for byte.
The output root is the config's ``out_dir`` unless the LEAKCHAIN_OUT
environment variable overrides it.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import (
    MetricOptions,
    RunConfig,
    dump_config,
    load_config,
    make_train_config,
)
from .exact_info import (
    CapacityError,
    leakage_profile,
    random_pipeline,
    verify_bound_chain,
    xor_pipeline,
)
from .metrics import (
    MetricsRecord,
    core_metrics,
    critic_mi_values,
    mi_avg,
    privacy_components,
    probe_pipeline,
)
from .mine import Critic
from .nn_core import Mlp, load_checkpoint, save_checkpoint
from .synthetic import task_splits
from .training import (
    forward_pipeline,
    load_model,
    pipeline_representations,
    representation_stability,
    run_training,
    save_model,
)

__all__ = [
    "out_root",
    "run_id_for",
    "execute_run",
    "cmd_verify_bound",
    "cmd_train",
    "cmd_sweep",
    "cmd_probe",
    "cmd_report",
]

METRICS_HEADER = ("run_id,N,beta,seed,ce_nats,bs,la,sb,bo,os,"
                  "mi_avg_nats,pi,ot,rc,rt,pari")


def out_root(cfg: RunConfig) -> Path:
    env = os.environ.get("LEAKCHAIN_OUT")
    return Path(env) if env else Path(cfg.out_dir)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if v == 0.0:
            v = 0.0  # normalize -0.0
        return f"{v:.10g}"
    return str(v)


def write_csv(path, header: str, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def run_id_for(cfg: RunConfig) -> str:
    """Short content hash of a single-seed config.

    The output root is masked out first: the same experiment stored under a
    different root keeps the same identity.
    """
    canonical = dump_config(replace(cfg, out_dir=""))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:10]


# ---------------------------------------------------------------------------
# Single training run
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    seed: int
    n_agents: int
    beta: float
    selective: str
    record: MetricsRecord
    probe_own: tuple[float, ...]
    probe_final: tuple[float, ...]
    total_above_chance: float


def _evaluate(model, critics, task, mopts: MetricOptions, seed: int,
              mi_baseline=None):
    """Deterministic post-training evaluation on the held-out test split."""
    test = task_splits(task)["test"]
    rng = np.random.default_rng(np.random.SeedSequence([0xE7A1, seed]))

    rows = min(len(test), mopts.probe_rows)
    pr_batch = test.take(np.arange(rows))
    reprs = pipeline_representations(model, pr_batch)
    probes = probe_pipeline(reprs, pr_batch.sens, task.k_s, rng,
                            mopts.probe_config())

    _, logits, _ = forward_pipeline(model, test)
    core = core_metrics(logits, test.labels, probes.leakage_accuracy)

    mi_rows = min(rows, mopts.mi_eval_rows)
    mi_vals = critic_mi_values(
        critics,
        [r[:mi_rows] for r in reprs],
        [s[:mi_rows] for s in pr_batch.sens],
        task.k_s,
        rng,
    )
    avg = mi_avg(mi_vals)
    stab = representation_stability(model, pr_batch, rng,
                                    mopts.stability_sigma)
    comps = privacy_components(avg, mi_baseline, stab)
    record = MetricsRecord.assemble(
        ce=core["ce"], bs=core["bs"], la=core["la"],
        mi_avg_value=avg, pi=comps["pi"], ot=comps["ot"],
    )
    return record, probes


def execute_run(cfg: RunConfig, seed: int, root: Path,
                mi_baseline=None) -> RunResult:
    """Train one seed of ``cfg`` and materialize its run directory."""
    task = cfg.task
    tcfg = make_train_config(cfg.train, task.n_agents, seed)
    arm_cfg = replace(cfg, seeds=(seed,))
    snapshot = dump_config(arm_cfg)
    run_id = run_id_for(arm_cfg)
    run_dir = root / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config_snapshot.yaml").write_text(snapshot, encoding="utf-8")

    started = time.time()
    model, critics, trace = run_training(task, tcfg)

    n = task.n_agents
    penalty_cols = ",".join(f"penalty_agent_{i}_nats" for i in range(1, n + 1))
    write_csv(
        run_dir / "train_trace.csv",
        f"iter,utility_nats,{penalty_cols},total_nats",
        [[r.iteration, r.utility, *r.penalties, r.total]
         for r in trace.rows],
    )
    write_csv(
        run_dir / "mi_trace.csv",
        "iter,agent,mi_nats,joint_mean,log_partition",
        [[r.iteration, r.agent, r.mi, r.joint_mean, r.log_partition]
         for r in trace.mi_rows],
    )
    if trace.eval_rows:
        write_csv(
            run_dir / "eval_trace.csv",
            "iter,split,utility_nats,accuracy",
            [[r.iteration, r.split, r.utility, r.accuracy]
             for r in trace.eval_rows],
        )

    ckpt = run_dir / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    save_model(ckpt / "model.npz", model)
    for i, critic in enumerate(critics):
        arrays = {}
        for k, (w, b) in enumerate(zip(critic.net.weights,
                                       critic.net.biases)):
            arrays[f"w{k}"] = w
            arrays[f"b{k}"] = b
        save_checkpoint(ckpt / f"critic{i + 1}.npz", arrays)

    record, probes = _evaluate(model, critics, task, cfg.metrics, seed,
                               mi_baseline)
    beta = _nominal_beta(tcfg.betas)
    selective = _selective_label(cfg.train.selective)
    write_csv(
        run_dir / "metrics.csv",
        METRICS_HEADER,
        [[run_id, n, beta, seed, record.ce, record.bs, record.la,
          record.sb, record.bo, record.os, record.mi_avg, record.pi,
          record.ot, record.rc, record.rt, record.pari]],
    )
    write_csv(
        run_dir / "probe_detail.csv",
        "stage,own_acc,final_acc,chance",
        [[i + 1, probes.own_stage[i], probes.from_final[i], probes.chance]
         for i in range(n)],
    )
    run_record = {
        "run_id": run_id,
        "seed": seed,
        "n_agents": n,
        "beta": beta,
        "selective": selective,
        "started_unix": started,
        "finished_unix": time.time(),
        "artifacts": sorted(
            str(p.relative_to(run_dir)) for p in run_dir.rglob("*")
            if p.is_file()
        ),
    }
    (run_dir / "run_record.json").write_text(
        json.dumps(run_record, indent=2) + "\n", encoding="utf-8"
    )
    return RunResult(
        run_id=run_id, run_dir=run_dir, seed=seed, n_agents=n, beta=beta,
        selective=selective, record=record, probe_own=probes.own_stage,
        probe_final=probes.from_final,
        total_above_chance=probes.total_above_chance,
    )


def _nominal_beta(betas) -> float:
    """Grid label for a beta allocation: the uniform value when the
    allocation is uniform, otherwise total budget / N."""
    if len(set(betas)) == 1:
        return float(betas[0])
    return math.fsum(betas) / len(betas)


def _selective_label(selective) -> str:
    if selective is None:
        return "all"
    if isinstance(selective, str):
        return selective
    return "stages_" + "_".join(str(i) for i in selective)


# ---------------------------------------------------------------------------
# verify-bound
# ---------------------------------------------------------------------------


def cmd_verify_bound(count: int, n_min: int, n_max: int, seed: int,
                     out_dir, max_alphabet: int = 4,
                     echo=print) -> int:
    """Fuzz the bound chain on random pipelines plus the xor witness.

    Writes one summary row per pipeline and a full per-stage report for any
    violation; returns nonzero iff a violation occurred.  Capacity errors
    are recorded and skipped, never fatal.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows, violations = [], 0
    max_ratio, worst = 0.0, None

    for n in range(n_min, n_max + 1):
        for i in range(count):
            s_sizes = rng.integers(2, max_alphabet + 1, size=n)
            o_sizes = rng.integers(2, max_alphabet + 1, size=n)
            leak = float(rng.random())
            pipe_seed = int(rng.integers(0, 2**31))
            spec = random_pipeline(pipe_seed, n, s_sizes, o_sizes, leak)
            try:
                report = verify_bound_chain(spec)
            except CapacityError as e:
                rows.append([n, i, pipe_seed, leak, "", "", "", "", False,
                             f"capacity: {e}"])
                continue
            min_slack = min(c.slack for c in report.checks)
            rows.append([
                n, i, pipe_seed, leak, report.global_leakage, report.bound,
                report.bound_ratio, min_slack, report.passed, "",
            ])
            if report.bound_ratio > max_ratio:
                max_ratio, worst = report.bound_ratio, (n, i)
            if not report.passed:
                violations += 1
                (out / f"violation_n{n}_{i}.csv").write_text(
                    "\n".join(report.to_csv_rows()) + "\n", encoding="utf-8"
                )
        echo(f"N={n}: {count} pipelines checked")

    write_csv(
        out / "verify_runs.csv",
        "n,index,pipeline_seed,leak_level,global_nats,bound_nats,"
        "ratio,min_slack,pass,note",
        rows,
    )

    witness = xor_pipeline()
    report = verify_bound_chain(witness)
    (out / "xor_witness.csv").write_text(
        "\n".join(report.to_csv_rows()) + "\n", encoding="utf-8"
    )
    eps, global_leak = leakage_profile(witness)
    echo(
        "xor witness: locals ({:.4f}, {:.4f}), global {:.4f} nats "
        "({:.4f} bits), bound {:.4f} nats, pass={}".format(
            eps[0], eps[1], global_leak, global_leak / math.log(2),
            report.bound, report.passed
        )
    )
    if not report.passed:
        violations += 1

    echo(f"violations: {violations}; max global/bound ratio {max_ratio:.6f}"
         + (f" at N={worst[0]} index {worst[1]}" if worst else ""))
    return 1 if violations else 0


# ---------------------------------------------------------------------------
# train / sweep
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig, echo=print) -> int:
    root = out_root(cfg)
    baseline_mi: dict[int, float] = {}
    for seed in cfg.seeds:
        res = execute_run(cfg, seed, root,
                          mi_baseline=baseline_mi.get(seed))
        echo(
            f"run {res.run_id} seed {seed}: bs {res.record.bs:.3f} "
            f"la {res.record.la:.3f} mi_avg {res.record.mi_avg:.4f} "
            f"pari {res.record.pari:.3f} -> {res.run_dir}"
        )
    return 0


def sweep_arms(cfg: RunConfig):
    """Grid points as (n_agents, beta, selective) tuples, baselines first.

    Baselines (beta = 0) run before regularized arms of the same depth so
    seed-matched MI baselines are available for the PI column.
    """
    betas = cfg.sweep.beta if cfg.sweep.beta is not None else \
        (cfg.train.beta if isinstance(cfg.train.beta, (int, float))
         else tuple(cfg.train.beta),)
    depths = cfg.sweep.depth if cfg.sweep.depth is not None \
        else (cfg.task.n_agents,)
    selectives = cfg.sweep.selective if cfg.sweep.selective is not None \
        else (cfg.train.selective,)

    arms = []
    for n in depths:
        point_betas = sorted(set(float(b) for b in betas))
        for beta in point_betas:
            for sel in selectives:
                if sel == "none" or beta == 0.0:
                    arm = (int(n), 0.0, "none")
                else:
                    arm = (int(n), beta, sel)
                if arm not in arms:
                    arms.append(arm)
    arms.sort(key=lambda a: (a[0], a[1] != 0.0, a[1], str(a[2])))
    return arms


def cmd_sweep(cfg: RunConfig, echo=print) -> int:
    root = out_root(cfg)
    arms = sweep_arms(cfg)
    results: list[RunResult] = []
    failures: list[list] = []
    baseline_mi: dict[tuple, float] = {}  # (n, seed) -> mi_avg

    for (n, beta, sel) in arms:
        for seed in cfg.seeds:
            arm_sel = "none" if (sel == "none" or beta == 0.0) else sel
            arm_cfg = replace(
                cfg,
                task=replace(cfg.task, n_agents=n),
                train=replace(cfg.train, beta=beta, selective=arm_sel),
            )
            try:
                res = execute_run(arm_cfg, seed, root,
                                  mi_baseline=baseline_mi.get((n, seed)))
            except Exception as e:  # record and continue
                failures.append([n, beta, _selective_label(sel), seed,
                                 f"{type(e).__name__}: {e}"])
                echo(f"FAILED arm N={n} beta={beta} sel={sel} seed={seed}: "
                     f"{type(e).__name__}: {e}")
                continue
            if beta == 0.0:
                baseline_mi[(n, seed)] = res.record.mi_avg
            results.append(res)
            echo(
                f"arm N={n} beta={beta:g} sel={res.selective} seed={seed}: "
                f"bs {res.record.bs:.3f} la {res.record.la:.3f} "
                f"mi {res.record.mi_avg:.4f} -> {res.run_id}"
            )

    _write_aggregate(root / "aggregate.csv", results)
    if failures:
        write_csv(root / "failures.csv", "n,beta,selective,seed,error",
                  failures)
    echo(f"sweep complete: {len(results)} runs, {len(failures)} failures; "
         f"aggregate -> {root / 'aggregate.csv'}")
    return 0 if not failures else 1


def _write_aggregate(path, results: list[RunResult]) -> None:
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.n_agents, r.beta, r.selective), []).append(r)

    def stats(vals):
        arr = np.asarray(vals, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    rows = []
    for (n, beta, sel), rs in sorted(groups.items(),
                                     key=lambda kv: (kv[0][0], kv[0][1],
                                                     kv[0][2])):
        cols = [n, beta, sel, len(rs)]
        for attr in ("ce", "bs", "la", "sb", "bo", "os", "mi_avg", "pi",
                     "ot", "pari"):
            m, s = stats([getattr(r.record, attr) for r in rs])
            cols.extend([m, s])
        m, s = stats([r.total_above_chance for r in rs])
        cols.extend([m, s])
        rows.append(cols)

    header = "n,beta,selective,seeds," + ",".join(
        f"{a}_mean,{a}_std"
        for a in ("ce_nats", "bs", "la", "sb", "bo", "os", "mi_avg_nats",
                  "pi", "ot", "pari", "probe_total_above_chance")
    )
    write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# probe / report
# ---------------------------------------------------------------------------


def _load_run_model(run_dir: Path):
    cfg = load_config(run_dir / "config_snapshot.yaml")
    seed = cfg.seeds[0]
    tcfg = make_train_config(cfg.train, cfg.task.n_agents, seed)
    ckpt = run_dir / "checkpoints"
    model = load_model(ckpt / "model.npz", tcfg.d_repr, cfg.task.s_to_input)
    critics = []
    for i in range(cfg.task.n_agents):
        arrays = load_checkpoint(ckpt / f"critic{i + 1}.npz")
        weights, biases, k = [], [], 0
        while f"w{k}" in arrays:
            weights.append(arrays[f"w{k}"])
            biases.append(arrays[f"b{k}"])
            k += 1
        critics.append(Critic(Mlp(weights, biases),
                              ema_rate=tcfg.ema_rate))
    return cfg, seed, model, critics


def cmd_probe(run_dir, baseline_dir=None, echo=print) -> int:
    """Re-run the post-hoc evaluation of a stored run from its artifacts."""
    run_dir = Path(run_dir)
    cfg, seed, model, critics = _load_run_model(run_dir)
    mi_baseline = None
    if baseline_dir is not None:
        base_rows = read_metrics_rows(Path(baseline_dir) / "metrics.csv")
        mi_baseline = float(base_rows[0]["mi_avg_nats"])
    record, probes = _evaluate(model, critics, cfg.task, cfg.metrics, seed,
                               mi_baseline)
    n = cfg.task.n_agents
    run_id = run_dir.name
    tcfg = make_train_config(cfg.train, n, seed)
    write_csv(
        run_dir / "metrics.csv",
        METRICS_HEADER,
        [[run_id, n, _nominal_beta(tcfg.betas), seed, record.ce, record.bs,
          record.la, record.sb, record.bo, record.os, record.mi_avg,
          record.pi, record.ot, record.rc, record.rt, record.pari]],
    )
    write_csv(
        run_dir / "probe_detail.csv",
        "stage,own_acc,final_acc,chance",
        [[i + 1, probes.own_stage[i], probes.from_final[i], probes.chance]
         for i in range(n)],
    )
    echo(f"probe {run_id}: la {record.la:.3f} bs {record.bs:.3f} "
         f"mi_avg {record.mi_avg:.4f}")
    return 0


def read_metrics_rows(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def cmd_report(run_dirs, out_dir, echo=print) -> int:
    """Aggregate stored runs: seed means, MI/SB correlation, curve data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, bad = [], []
    for d in run_dirs:
        d = Path(d)
        try:
            for row in read_metrics_rows(d / "metrics.csv"):
                rows.append(row)
        except (OSError, IndexError) as e:
            bad.append((str(d), f"{type(e).__name__}: {e}"))
    if not rows:
        raise FileNotFoundError(
            f"no readable metrics.csv among {len(run_dirs)} run dirs"
        )
    for d, err in bad:
        echo(f"skipped {d}: {err}")

    float_cols = ("ce_nats", "bs", "la", "sb", "bo", "os", "mi_avg_nats",
                  "pi", "ot", "rc", "rt", "pari")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (int(row["N"]), float(row["beta"]))
        groups.setdefault(key, []).append(row)

    summary = []
    for (n, beta), rs in sorted(groups.items()):
        cols = [n, beta, len(rs)]
        for c in float_cols:
            vals = np.array([float(r[c]) for r in rs])
            cols.extend([float(vals.mean()), float(vals.std())])
        summary.append(cols)
    write_csv(
        out / "report_summary.csv",
        "n,beta,runs," + ",".join(f"{c}_mean,{c}_std" for c in float_cols),
        summary,
    )

    write_csv(
        out / "sb_vs_mi_scatter.csv",
        "n,beta,seed,mi_avg_nats,sb",
        [[int(r["N"]), float(r["beta"]), int(r["seed"]),
          float(r["mi_avg_nats"]), float(r["sb"])] for r in rows],
    )

    corr_rows = []
    for arm, pred in (("baseline", lambda b: b == 0.0),
                      ("regularized", lambda b: b > 0.0),
                      ("all", lambda b: True)):
        mis = [float(r["mi_avg_nats"]) for r in rows
               if pred(float(r["beta"]))]
        sbs = [float(r["sb"]) for r in rows if pred(float(r["beta"]))]
        if len(mis) >= 2 and np.std(mis) > 0 and np.std(sbs) > 0:
            rho = float(np.corrcoef(mis, sbs)[0, 1])
            corr_rows.append([arm, len(mis), rho])
    write_csv(out / "mi_sb_correlation.csv", "arm,runs,pearson_r", corr_rows)

    depth_rows = [
        [n, beta,
         float(np.mean([float(r["mi_avg_nats"]) for r in rs])),
         float(np.mean([float(r["la"]) for r in rs])),
         float(np.mean([float(r["bs"]) for r in rs]))]
        for (n, beta), rs in sorted(groups.items())
    ]
    write_csv(out / "depth_curve.csv",
              "n,beta,mi_avg_nats_mean,la_mean,bs_mean", depth_rows)

    for arm, runs, rho in corr_rows:
        echo(f"MI/SB correlation ({arm}, {runs} runs): {rho:.3f}")
    echo(f"report written to {out}")
    return 0
