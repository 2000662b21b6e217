"""Run configuration: YAML schema, defaults, validation, canonical dump.

A config file is a YAML mapping with the sections below; every key has a
default, unknown keys are rejected by name, and ``load_config`` of a dumped
config reproduces an equal ``RunConfig``.

    mode: train                # verify-bound | train | sweep | probe | report
    out_dir: runs
    seeds: [0, 1, 2]
    N: 3                       # shorthand for task.n_agents
    task:     {n_agents, d_pub, k_s, k_y, s_to_input, s_to_label_weight,
               label_noise, samples_per_split, seed}
    train:    {beta, eta_theta, eta_psi, batch, iterations, critic_steps,
               selective, d_repr, agent_hidden, agent_layers, critic_hidden,
               critic_layers, ema_rate, clip_norm, eval_every}
    metrics:  {probe_hidden, probe_steps, probe_lr, probe_rows,
               stability_sigma, mi_eval_rows}
    sweep:    {beta, depth, selective}    # grid axes, each a list

``train.beta`` is a scalar (uniform across agents) or a per-agent list.
``train.selective`` is a list of 1-based stage ids whose penalty is active,
or one of the named conditions none / early / all.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .metrics import ProbeConfig
from .synthetic import SyntheticTaskSpec
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "MetricOptions",
    "TrainSettings",
    "SweepSpec",
    "RunConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "make_train_config",
    "selective_mask_for",
]

MODES = ("verify-bound", "train", "sweep", "probe", "report")
SELECTIVE_MODES = ("none", "early", "all")


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclass(frozen=True)
class MetricOptions:
    probe_hidden: int = 64
    probe_steps: int = 500
    probe_lr: float = 1e-3
    probe_rows: int = 4096
    stability_sigma: float = 0.01
    mi_eval_rows: int = 4096

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(hidden=self.probe_hidden, steps=self.probe_steps,
                           lr=self.probe_lr)


@dataclass(frozen=True)
class TrainSettings:
    """Raw train-section values; per-seed TrainConfigs are derived from it."""

    beta: object = 0.1            # scalar or per-agent list
    eta_theta: float = 1e-3
    eta_psi: float = 5e-3
    batch: int = 64
    iterations: int = 2000
    critic_steps: int = 5
    selective: object = None      # None | mode name | list of stage ids
    d_repr: int = 16
    agent_hidden: int = 64
    agent_layers: int = 2
    critic_hidden: int = 256
    critic_layers: int = 2
    ema_rate: float = 0.99
    clip_norm: float = 10.0
    eval_every: int = 500


@dataclass(frozen=True)
class SweepSpec:
    """Grid axes; absent axes fall back to the base config's single value."""

    beta: tuple | None = None
    depth: tuple | None = None
    selective: tuple | None = None

    def __post_init__(self):
        if self.selective:
            bad = [m for m in self.selective if m not in SELECTIVE_MODES]
            if bad:
                raise ConfigError(f"unknown selective modes: {bad}")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "train"
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0, 1, 2)
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    train: TrainSettings = field(default_factory=TrainSettings)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; pick from {MODES}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")


def selective_mask_for(mode: str | None, n_agents: int):
    """Stage mask for a named regularization condition.

    ``early`` regularizes the first half of the pipeline (at least one
    stage); ``all`` and None leave every stage active; ``none`` is expressed
    by zero betas, so its mask is irrelevant and None is returned.
    """
    if mode in (None, "all", "none"):
        return None
    if mode == "early":
        return tuple(range(1, max(1, n_agents // 2) + 1))
    raise ConfigError(f"unknown selective mode {mode!r}")


def make_train_config(settings: TrainSettings, n_agents: int, seed: int,
                      beta=None, selective=None) -> TrainConfig:
    """Materialize one run's TrainConfig from the settings block.

    ``beta``/``selective`` override the settings values (sweep arms do
    this).  A named selective condition concentrates the same total budget
    N * beta onto the masked stages, so conditions stay comparable.
    """
    raw_beta = settings.beta if beta is None else beta
    raw_sel = settings.selective if selective is None else selective

    if isinstance(raw_sel, str):
        if raw_sel == "none":
            betas = (0.0,) * n_agents
            mask = None
        else:
            mask = selective_mask_for(raw_sel, n_agents)
            if not _is_scalar(raw_beta):
                raise ConfigError(
                    "named selective conditions need a scalar beta"
                )
            if mask is None:
                betas = (float(raw_beta),) * n_agents
            else:
                per = float(raw_beta) * n_agents / len(mask)
                betas = tuple(
                    per if i + 1 in mask else 0.0 for i in range(n_agents)
                )
    else:
        mask = tuple(int(i) for i in raw_sel) if raw_sel is not None else None
        if _is_scalar(raw_beta):
            betas = (float(raw_beta),) * n_agents
        else:
            betas = tuple(float(b) for b in raw_beta)
            if len(betas) != n_agents:
                raise ConfigError(
                    f"beta list has {len(betas)} entries for {n_agents} agents"
                )

    return TrainConfig(
        betas=betas,
        eta_theta=settings.eta_theta,
        eta_psi=settings.eta_psi,
        batch=settings.batch,
        iterations=settings.iterations,
        critic_steps=settings.critic_steps,
        seed=seed,
        selective_mask=mask,
        d_repr=settings.d_repr,
        agent_hidden=settings.agent_hidden,
        agent_layers=settings.agent_layers,
        critic_hidden=settings.critic_hidden,
        critic_layers=settings.critic_layers,
        ema_rate=settings.ema_rate,
        clip_norm=settings.clip_norm,
        eval_every=settings.eval_every,
    )


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_keys(section: str, mapping: dict, allowed) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(
                f"unknown key {key!r} in section {section!r}; "
                f"allowed: {sorted(allowed)}"
            )


def _build(section: str, cls, mapping: dict):
    _check_keys(section, mapping, {f.name for f in fields(cls)})
    coerced = {}
    for f in fields(cls):
        if f.name not in mapping:
            continue
        v = mapping[f.name]
        if isinstance(v, list):
            v = tuple(v)
        coerced[f.name] = v
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {section!r}: {e}") from e


def parse_config(data: dict) -> RunConfig:
    """Validate a parsed YAML mapping and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    top_keys = {"mode", "out_dir", "seeds", "N",
                "task", "train", "metrics", "sweep"}
    _check_keys("(top level)", data, top_keys)

    task_map = dict(data.get("task") or {})
    if "N" in data:
        if "n_agents" in task_map:
            raise ConfigError("give either N or task.n_agents, not both")
        task_map["n_agents"] = data["N"]
    task = _build("task", SyntheticTaskSpec, task_map)
    train = _build("train", TrainSettings, dict(data.get("train") or {}))
    metrics = _build("metrics", MetricOptions, dict(data.get("metrics") or {}))
    sweep = _build("sweep", SweepSpec, dict(data.get("sweep") or {}))

    seeds = data.get("seeds", (0, 1, 2))
    if isinstance(seeds, list):
        seeds = tuple(int(s) for s in seeds)
    elif isinstance(seeds, int):
        seeds = (seeds,)
    return RunConfig(
        mode=data.get("mode", "train"),
        out_dir=str(data.get("out_dir", "runs")),
        seeds=seeds,
        task=task,
        train=train,
        metrics=metrics,
        sweep=sweep,
    )


def load_config(path) -> RunConfig:
    """Read and validate a YAML config file.

    Parse errors keep the YAML mark (line/column); schema errors name the
    offending key.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" \
            if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {e.problem}") \
            from e
    if data is None:
        data = {}
    return parse_config(data)


def dump_config(cfg: RunConfig) -> str:
    """Canonical YAML snapshot; load_config(dump) round-trips equal."""
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    data = {
        "mode": cfg.mode,
        "out_dir": cfg.out_dir,
        "seeds": list(cfg.seeds),
        "task": plain(asdict(cfg.task)),
        "train": plain(asdict(cfg.train)),
        "metrics": plain(asdict(cfg.metrics)),
        "sweep": plain(asdict(cfg.sweep)),
    }
    return yaml.safe_dump(data, sort_keys=True)
