"""Three-phase training loop for MI-regularized sequential agent pipelines.

Every iteration: (1) forward pass through the agent chain to get the utility
loss, (2) a few ascent steps per stage critic so its MI estimate tracks the
current representations, (3) one optimizer step on the agents and prediction
head against utility plus the weighted, clamped MI penalties.  The penalty
gradient for stage i enters the backward pass exactly at representation O_i,
treating the stage boundary as the leaky interface; critics are frozen during
phase 3.

Runs are single-threaded and bit-deterministic in the config seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mine import Critic, critic_step, make_marginal_batch, mi_penalty_gradient, one_hot
from .nn_core import (
    AdamState,
    DivergenceError,
    Mlp,
    adamw_step,
    backward,
    clip_global_norm,
    cross_entropy,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .synthetic import Batch, SyntheticTaskSpec, gen_batch, task_splits

__all__ = [
    "TrainConfig",
    "PipelineModel",
    "TrainTrace",
    "TraceRow",
    "MiTraceRow",
    "EvalRow",
    "forward_pipeline",
    "pipeline_representations",
    "train_iteration",
    "run_training",
    "accuracy",
    "representation_stability",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on besides the task itself.

    ``betas`` has one entry per agent; ``selective_mask`` (1-based stage ids)
    restricts which penalties are active -- None means all stages.  Critics
    are trained for every stage regardless, so MI traces stay meaningful for
    unregularized runs.
    """

    betas: tuple[float, ...] = (0.1, 0.1, 0.1)
    eta_theta: float = 1e-3
    eta_psi: float = 1e-3
    batch: int = 64
    iterations: int = 2000
    critic_steps: int = 5
    seed: int = 0
    selective_mask: tuple[int, ...] | None = None
    d_repr: int = 16
    agent_hidden: int = 64
    agent_layers: int = 2
    critic_hidden: int = 256
    critic_layers: int = 2
    ema_rate: float = 0.99
    clip_norm: float = 10.0
    eval_every: int = 500

    def __post_init__(self):
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if any(b < 0 for b in self.betas):
            raise ValueError("betas must be >= 0")
        if self.selective_mask is not None:
            bad = [i for i in self.selective_mask
                   if not 1 <= i <= len(self.betas)]
            if bad:
                raise ValueError(f"selective_mask stages out of range: {bad}")

    @property
    def n_agents(self) -> int:
        return len(self.betas)

    def penalty_active(self, i: int) -> bool:
        """Whether stage i's (1-based) MI penalty enters the total loss."""
        if self.betas[i - 1] == 0.0:
            return False
        return self.selective_mask is None or i in self.selective_mask


@dataclass
class PipelineModel:
    """N agent nets plus a linear prediction head on the final output."""

    agents: list[Mlp]
    head: Mlp
    d_repr: int
    s_to_input: bool

    @classmethod
    def build(cls, task: SyntheticTaskSpec, cfg: TrainConfig,
              rng: np.random.Generator) -> "PipelineModel":
        if task.n_agents != cfg.n_agents:
            raise ValueError(
                f"task has {task.n_agents} agents, config {cfg.n_agents}"
            )
        agents = []
        for i in range(task.n_agents):
            d_in = (cfg.d_repr if i else 0) + task.d_pub
            if task.s_to_input:
                d_in += task.k_s
            sizes = [d_in] + [cfg.agent_hidden] * cfg.agent_layers \
                + [cfg.d_repr]
            agents.append(Mlp.init(sizes, rng))
        head = Mlp.init([cfg.d_repr, task.k_y], rng)
        return cls(agents, head, cfg.d_repr, task.s_to_input)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def agent_input(self, i: int, prev_repr, batch: Batch) -> np.ndarray:
        """Assemble stage i's (0-based) input block: [O_{i-1} | D_i | S_i]."""
        parts = []
        if i > 0:
            parts.append(prev_repr)
        parts.append(batch.pub[i])
        if self.s_to_input:
            k_s = self.agents[i].in_dim - batch.pub[i].shape[1] \
                - (self.d_repr if i > 0 else 0)
            parts.append(one_hot(batch.sens[i], k_s))
        return np.concatenate(parts, axis=1)


def forward_pipeline(model: PipelineModel, batch: Batch):
    """Sequential forward pass; returns (reprs, logits, caches).

    ``reprs[i]`` is O_{i+1}; ``caches`` holds each agent's forward cache plus
    the head cache, in order, for the backward sweep.
    """
    reprs, caches = [], []
    h = None
    for i, agent in enumerate(model.agents):
        x = model.agent_input(i, h, batch)
        h, cache = forward(agent, x)
        reprs.append(h)
        caches.append(cache)
    logits, head_cache = forward(model.head, h)
    caches.append(head_cache)
    return reprs, logits, caches


def pipeline_representations(model: PipelineModel, batch: Batch):
    """Frozen per-stage representations for probes and critics."""
    reprs, _, _ = forward_pipeline(model, batch)
    return reprs


def accuracy(model: PipelineModel, batch: Batch) -> float:
    _, logits, _ = forward_pipeline(model, batch)
    return float(np.mean(np.argmax(logits, axis=1) == batch.labels))


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    utility: float
    penalties: tuple[float, ...]
    total: float


@dataclass(frozen=True)
class MiTraceRow:
    iteration: int
    agent: int
    mi: float
    joint_mean: float
    log_partition: float


@dataclass(frozen=True)
class EvalRow:
    iteration: int
    split: str
    utility: float
    accuracy: float


@dataclass
class TrainTrace:
    rows: list[TraceRow] = field(default_factory=list)
    mi_rows: list[MiTraceRow] = field(default_factory=list)
    eval_rows: list[EvalRow] = field(default_factory=list)


class _RunState:
    """Optimizers and critics owned by one training run."""

    def __init__(self, task: SyntheticTaskSpec, cfg: TrainConfig,
                 model: PipelineModel, rng: np.random.Generator):
        self.agent_opts = [
            AdamState.for_params(a.params(), lr=cfg.eta_theta)
            for a in model.agents
        ]
        self.head_opt = AdamState.for_params(model.head.params(),
                                             lr=cfg.eta_theta)
        self.critics = [
            Critic.init(cfg.d_repr, task.k_s, rng, hidden=cfg.critic_hidden,
                        n_hidden=cfg.critic_layers, ema_rate=cfg.ema_rate)
            for _ in range(task.n_agents)
        ]


def train_iteration(model: PipelineModel, critics, agent_opts, head_opt,
                    batch: Batch, cfg: TrainConfig,
                    rng: np.random.Generator):
    """One full three-phase iteration; returns (TraceRow, mi estimates).

    Critics are updated first (``critic_steps`` ascent steps each, on this
    iteration's representations), then the agents and head take one AdamW
    step against utility plus the active penalties.  With all betas zero the
    agent update is bit-identical to pure supervised training.
    """
    n = model.n_agents
    k_s = critics[0].net.in_dim - cfg.d_repr

    # Phase 1: forward.
    reprs, logits, caches = forward_pipeline(model, batch)
    utility, d_logits = cross_entropy(logits, batch.labels)
    if not math.isfinite(utility):
        raise DivergenceError("nonfinite utility loss")

    # Phase 2: critic ascent on frozen representations.
    s_enc = [one_hot(batch.sens[i], k_s) for i in range(n)]
    estimates = []
    for i in range(n):
        est = None
        for _ in range(cfg.critic_steps):
            est = critic_step(critics[i], reprs[i], s_enc[i], rng,
                              cfg.eta_psi)
        estimates.append(est)

    # Phase 3: agent update with frozen critics.
    penalties = []
    penalty_grads = []
    for i in range(n):
        s_shuf = make_marginal_batch(reprs[i], s_enc[i], rng)
        pen, d_o = mi_penalty_gradient(critics[i], reprs[i], s_enc[i], s_shuf)
        penalties.append(pen)
        penalty_grads.append(d_o)

    head_grads, delta = backward(model.head, caches[-1], d_logits)
    all_grads = [head_grads]
    agent_grads: list = [None] * n
    for i in range(n - 1, -1, -1):
        if cfg.penalty_active(i + 1):
            delta = delta + cfg.betas[i] * penalty_grads[i]
        grads, d_in = backward(model.agents[i], caches[i], delta)
        agent_grads[i] = grads
        all_grads.append(grads)
        delta = d_in[:, : cfg.d_repr] if i > 0 else None

    flat = [g for grads in all_grads for g in grads]
    clip_global_norm(flat, cfg.clip_norm)
    adamw_step(model.head.params(), head_grads, head_opt)
    for i in range(n):
        adamw_step(model.agents[i].params(), agent_grads[i], agent_opts[i])

    total = utility + math.fsum(
        cfg.betas[i] * penalties[i]
        for i in range(n) if cfg.penalty_active(i + 1)
    )
    row = TraceRow(0, utility, tuple(penalties), total)
    return row, estimates


def run_training(task: SyntheticTaskSpec, cfg: TrainConfig):
    """Run the full loop; returns (model, critics, TrainTrace).

    Deterministic in ``cfg.seed``: model/critic init, minibatch sampling and
    marginal shuffles all derive from it.  Divergence aborts with the
    iteration index attached.
    """
    if task.n_agents != cfg.n_agents:
        raise ValueError("task/config agent counts differ")
    seq = np.random.SeedSequence([0x5EED, cfg.seed])
    init_rng, loop_rng = (np.random.default_rng(s) for s in seq.spawn(2))

    model = PipelineModel.build(task, cfg, init_rng)
    state = _RunState(task, cfg, model, init_rng)
    splits = task_splits(task)
    train_set, val_set = splits["train"], splits["val"]

    trace = TrainTrace()
    for t in range(1, cfg.iterations + 1):
        idx = loop_rng.integers(0, len(train_set), size=cfg.batch)
        batch = train_set.take(idx)
        try:
            row, estimates = train_iteration(
                model, state.critics, state.agent_opts, state.head_opt,
                batch, cfg, loop_rng,
            )
        except DivergenceError as e:
            raise DivergenceError(f"iteration {t}: {e}") from e
        trace.rows.append(TraceRow(t, row.utility, row.penalties, row.total))
        for i, est in enumerate(estimates):
            trace.mi_rows.append(
                MiTraceRow(t, i + 1, est.value, est.joint_mean,
                           est.log_partition)
            )
        if cfg.eval_every and (t % cfg.eval_every == 0
                               or t == cfg.iterations):
            _, logits, _ = forward_pipeline(model, val_set)
            vu, _ = cross_entropy(logits, val_set.labels)
            va = float(np.mean(np.argmax(logits, axis=1) == val_set.labels))
            trace.eval_rows.append(EvalRow(t, "val", vu, va))
    return model, state.critics, trace


def representation_stability(model: PipelineModel, batch: Batch,
                             rng: np.random.Generator,
                             sigma: float = 0.01) -> np.ndarray:
    """Per-row distance of unit-normalized final outputs under public-input
    perturbation; feeds the representation-stability metric."""
    perturbed = Batch(
        [d + sigma * rng.normal(size=d.shape) for d in batch.pub],
        batch.sens,
        batch.labels,
    )
    o = pipeline_representations(model, batch)[-1]
    o2 = pipeline_representations(model, perturbed)[-1]

    def unit(a):
        norm = np.linalg.norm(a, axis=1, keepdims=True)
        return a / np.maximum(norm, 1e-12)

    return np.linalg.norm(unit(o) - unit(o2), axis=1)


def _model_arrays(model: PipelineModel) -> dict:
    arrays = {}
    for i, agent in enumerate(model.agents):
        for k, (w, b) in enumerate(zip(agent.weights, agent.biases)):
            arrays[f"agent{i + 1}_w{k}"] = w
            arrays[f"agent{i + 1}_b{k}"] = b
    for k, (w, b) in enumerate(zip(model.head.weights, model.head.biases)):
        arrays[f"head_w{k}"] = w
        arrays[f"head_b{k}"] = b
    return arrays


def save_model(path, model: PipelineModel) -> None:
    """Checkpoint layout: agent{i}_w{k} / agent{i}_b{k} / head_w{k} /
    head_b{k}, float64 row-major."""
    save_checkpoint(path, _model_arrays(model))


def load_model(path, d_repr: int, s_to_input: bool) -> PipelineModel:
    arrays = load_checkpoint(path)
    agents = []
    i = 1
    while f"agent{i}_w0" in arrays:
        weights, biases = [], []
        k = 0
        while f"agent{i}_w{k}" in arrays:
            weights.append(arrays[f"agent{i}_w{k}"])
            biases.append(arrays[f"agent{i}_b{k}"])
            k += 1
        agents.append(Mlp(weights, biases))
        i += 1
    weights, biases = [], []
    k = 0
    while f"head_w{k}" in arrays:
        weights.append(arrays[f"head_w{k}"])
        biases.append(arrays[f"head_b{k}"])
        k += 1
    if not agents or not weights:
        raise ValueError(f"checkpoint {path} is missing pipeline arrays")
    return PipelineModel(agents, Mlp(weights, biases), d_repr, s_to_input)
