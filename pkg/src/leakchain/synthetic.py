"""Synthetic sequential-pipeline task with controllable sensitive shortcut.

Each stage i of the pipeline gets public Gaussian features D_i and a
stage-local sensitive symbol S_i drawn i.i.d. uniform (so the sensitive
variables are mutually independent, matching the hypothesis of the
cumulative-leakage bound).  The label is produced by a fixed random linear
rule on the concatenated public features with additive score noise; a
configurable fraction of examples instead copies S_1 into the label, which
makes the sensitive variable genuinely task-relevant when that weight is
positive.

With ``s_to_input`` on, each agent receives its own S_i as a one-hot block,
so an unregularized pipeline demonstrably embeds sensitive symbols in its
representations; with ``s_to_label_weight`` 0 the task is solvable without
them, which is what makes the privacy-utility trade-off interpretable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["SyntheticTaskSpec", "Batch", "gen_batch", "task_splits"]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_agents: int = 3
    d_pub: int = 8
    k_s: int = 4
    k_y: int = 4
    s_to_input: bool = True
    s_to_label_weight: float = 0.0
    label_noise: float = 0.1
    samples_per_split: int = 4096
    seed: int = 0

    def __post_init__(self):
        if min(self.n_agents, self.d_pub, self.k_s, self.k_y) < 1:
            raise ValueError("dimensions must be >= 1")
        if not 0.0 <= self.s_to_label_weight <= 1.0:
            raise ValueError("s_to_label_weight must lie in [0, 1]")
        if self.label_noise < 0.0:
            raise ValueError("label_noise must be >= 0")

    def label_rule(self) -> np.ndarray:
        """Fixed (N * d_pub, k_y) score matrix, derived from the task seed."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xD1]))
        d = self.n_agents * self.d_pub
        return rng.normal(0.0, 1.0 / np.sqrt(self.d_pub), size=(d, self.k_y))


@dataclass
class Batch:
    """One sample set: per-stage public features and sensitive symbols."""

    pub: list[np.ndarray]    # n_agents arrays of shape (n, d_pub)
    sens: list[np.ndarray]   # n_agents int arrays of shape (n,)
    labels: np.ndarray       # int array of shape (n,)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Batch":
        return Batch(
            [d[idx] for d in self.pub],
            [s[idx] for s in self.sens],
            self.labels[idx],
        )


def gen_batch(task: SyntheticTaskSpec, rng: np.random.Generator,
              n: int | None = None) -> Batch:
    """Draw n i.i.d. examples (defaults to the task's split size)."""
    if n is None:
        n = task.samples_per_split
    pub = [rng.normal(size=(n, task.d_pub)) for _ in range(task.n_agents)]
    sens = [rng.integers(0, task.k_s, size=n) for _ in range(task.n_agents)]
    scores = np.concatenate(pub, axis=1) @ task.label_rule()
    if task.label_noise:
        scores = scores + task.label_noise * rng.normal(size=scores.shape)
    labels = np.argmax(scores, axis=1)
    w = task.s_to_label_weight
    if w > 0.0:
        use_s = rng.random(n) < w
        labels = np.where(use_s, sens[0] % task.k_y, labels)
    return Batch(pub, sens, labels)


_SPLIT_TAGS = {"train": 1, "val": 2, "test": 3}


def task_splits(task: SyntheticTaskSpec) -> dict:
    """Fixed train/val/test sets, reproducible from the task seed alone."""
    out = {}
    for name, tag in _SPLIT_TAGS.items():
        rng = np.random.default_rng(np.random.SeedSequence([task.seed, tag]))
        out[name] = gen_batch(task, rng)
    return out
