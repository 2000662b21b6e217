"""Adversarial probing and the privacy/utility metric suite.

Leakage is operationalized two ways: a lightweight classifier trained post
hoc on frozen representations (decodable leakage -> leakage accuracy LA) and
the per-stage critic estimates (representation-level MI -> MI_avg).  Utility
is benign task success (BS) and cross entropy.  The composite index gathers
reasoning correctness RC = BS, representation stability OT, normalized
leakage reduction PI = 1 - MI_avg / MI_baseline, and reproducibility RT = 1
into a single weighted score.

All probe evaluation is on a held-out half of the supplied rows, with ties
in the argmax broken toward the lowest class index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mine import Critic, dv_estimate, make_marginal_batch, one_hot
from .nn_core import (
    AdamState,
    Mlp,
    adamw_step,
    backward,
    cross_entropy,
    forward,
)

__all__ = [
    "ProbeConfig",
    "PariWeights",
    "MetricsRecord",
    "ProbeReport",
    "train_probe",
    "probe_pipeline",
    "core_metrics",
    "critic_mi_values",
    "mi_avg",
    "privacy_components",
    "pari",
    "privacylens_mapping",
    "stability_score",
]


@dataclass(frozen=True)
class ProbeConfig:
    """Lightweight adversarial probe: one hidden layer, full-batch AdamW."""

    hidden: int = 64
    steps: int = 500
    lr: float = 1e-3
    train_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.hidden < 1 or self.steps < 1 or self.lr <= 0:
            raise ValueError("invalid probe settings")


def train_probe(representations: np.ndarray, targets: np.ndarray, k: int,
                rng: np.random.Generator,
                cfg: ProbeConfig = ProbeConfig()):
    """Fit a probe on the first split of the rows, score it on the rest.

    Returns (probe, held-out accuracy).  The representations are treated as
    frozen inputs; nothing flows back into the pipeline that produced them.
    Raises on degenerate single-class targets, which would make accuracy
    meaningless.
    """
    x = np.asarray(representations, dtype=np.float64)
    y = np.asarray(targets)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("need matching 2-d representations and 1-d targets")
    if len(np.unique(y)) < 2:
        raise ValueError("targets are single-class; probe accuracy undefined")
    n_train = int(len(x) * cfg.train_fraction)
    if n_train < 1 or n_train >= len(x):
        raise ValueError("split leaves an empty probe train or test set")

    probe = Mlp.init([x.shape[1], cfg.hidden, k], rng)
    opt = AdamState.for_params(probe.params(), lr=cfg.lr)
    x_tr, y_tr = x[:n_train], y[:n_train]
    for _ in range(cfg.steps):
        logits, cache = forward(probe, x_tr)
        _, d = cross_entropy(logits, y_tr)
        grads, _ = backward(probe, cache, d)
        adamw_step(probe.params(), grads, opt)
    logits, _ = forward(probe, x[n_train:])
    # np.argmax resolves ties toward the lowest class index.
    acc = float(np.mean(np.argmax(logits, axis=1) == y[n_train:]))
    return probe, acc


@dataclass(frozen=True)
class ProbeReport:
    """Probe accuracies for one trained pipeline on one evaluation set.

    ``own_stage[i]`` decodes S_{i+1} from O_{i+1}; ``from_final[i]`` decodes
    S_{i+1} from the final output O_N.  ``chance`` is 1/k_s.
    """

    own_stage: tuple[float, ...]
    from_final: tuple[float, ...]
    chance: float

    @property
    def leakage_accuracy(self) -> float:
        """LA: mean own-stage probe accuracy across the pipeline."""
        return float(np.mean(self.own_stage))

    @property
    def total_above_chance(self) -> float:
        """Summed above-chance own-stage leakage; grows with depth when the
        per-stage construction is fixed."""
        return float(sum(max(0.0, a - self.chance) for a in self.own_stage))

    @property
    def final_above_chance(self) -> float:
        """Summed above-chance decodability of every S_i from O_N."""
        return float(sum(max(0.0, a - self.chance) for a in self.from_final))


def probe_pipeline(representations, sens, k_s: int,
                   rng: np.random.Generator,
                   cfg: ProbeConfig = ProbeConfig(),
                   with_final: bool = True) -> ProbeReport:
    """Train one probe per stage (plus final-output probes) and report.

    ``representations`` and ``sens`` are the per-stage frozen outputs and
    sensitive symbols of the same evaluation rows.
    """
    own, fin = [], []
    for i, (o, s) in enumerate(zip(representations, sens)):
        own.append(train_probe(o, s, k_s, rng, cfg)[1])
    if with_final:
        o_n = representations[-1]
        for s in sens:
            fin.append(train_probe(o_n, s, k_s, rng, cfg)[1])
    return ProbeReport(tuple(own), tuple(fin), 1.0 / k_s)


def core_metrics(logits: np.ndarray, labels: np.ndarray,
                 probe_accuracy: float,
                 leakage_indicators: np.ndarray | None = None) -> dict:
    """CE / BS on the benign split plus the adversarial composites.

    sb = 1 - la, bo = (bs + sb) / 2.  os defaults to the unpaired
    approximation bs * sb; when per-instance leakage indicators exist the
    paired form (fraction of rows both correct and non-leaking) is used.
    """
    if len(logits) == 0:
        raise ValueError("empty evaluation set")
    ce, _ = cross_entropy(logits, labels)
    correct = np.argmax(logits, axis=1) == labels
    bs = float(np.mean(correct))
    la = float(probe_accuracy)
    sb = 1.0 - la
    bo = 0.5 * (bs + sb)
    if leakage_indicators is not None:
        leak = np.asarray(leakage_indicators, dtype=bool)
        if leak.shape != correct.shape:
            raise ValueError("leakage indicators must pair with predictions")
        os_val = float(np.mean(correct & ~leak))
    else:
        os_val = bs * sb
    return {"ce": ce, "bs": bs, "la": la, "sb": sb, "bo": bo, "os": os_val}


def critic_mi_values(critics, representations, sens, k_s: int,
                     rng: np.random.Generator) -> list[float]:
    """Per-stage critic MI estimates on frozen rows, floored at 0 nats."""
    values = []
    for critic, o, s in zip(critics, representations, sens):
        enc = one_hot(s, k_s)
        est = dv_estimate(critic, o, enc, make_marginal_batch(o, enc, rng))
        values.append(max(0.0, est.value))
    return values


def mi_avg(values) -> float:
    """Average per-stage MI (nats) -- the depth-normalized leakage summary."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("need at least one MI value")
    if any(v < 0.0 for v in vals):
        raise ValueError("MI values must be >= 0")
    return float(np.mean(vals))


def stability_score(distances) -> float:
    """OT: 1 minus the mean perturbation distance, clamped to [0, 1]."""
    d = float(np.mean(np.asarray(distances, dtype=np.float64)))
    return min(1.0, max(0.0, 1.0 - d))


def privacy_components(mi_avg_value: float, mi_baseline: float | None,
                       stability_distances=None) -> dict:
    """PI / OT / RT component block of the composite index.

    PI is the relative MI reduction against the unregularized baseline,
    clamped to [0, 1]; without a (positive) baseline it is 0 by definition.
    OT comes from ``stability_score`` when distances are supplied, else 1.
    RT is fixed at 1: runs are seeded, decoding deterministic, logging
    complete.
    """
    if mi_baseline is not None and mi_baseline > 0.0:
        pi = 1.0 - float(mi_avg_value) / float(mi_baseline)
        pi = min(1.0, max(0.0, pi))
    else:
        pi = 0.0
    ot = stability_score(stability_distances) \
        if stability_distances is not None else 1.0
    return {"pi": pi, "ot": ot, "rt": 1.0}


@dataclass(frozen=True)
class PariWeights:
    """Composite-index weights over (RC, OT, PI, RT); defaults sum to 1."""

    w_rc: float = 0.3
    w_ot: float = 0.1
    w_pi: float = 0.5
    w_rt: float = 0.1

    def __post_init__(self):
        if min(self.w_rc, self.w_ot, self.w_pi, self.w_rt) < 0.0:
            raise ValueError("weights must be nonnegative")


def pari(rc: float, ot: float, pi: float, rt: float,
         weights: PariWeights = PariWeights()) -> float:
    """Weighted privacy-aware reasoning composite of the four components."""
    for name, v in (("rc", rc), ("ot", ot), ("pi", pi), ("rt", rt)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"component {name}={v} outside [0, 1]")
    return (weights.w_rc * rc + weights.w_ot * ot
            + weights.w_pi * pi + weights.w_rt * rt)


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluation row; the derived fields obey their defining identities.

    Build with ``assemble`` -- it fills sb/bo/rc/rt/pari from the primary
    measurements so the invariants hold by construction.
    """

    ce: float
    bs: float
    la: float
    sb: float
    bo: float
    os: float
    mi_avg: float
    pi: float
    ot: float
    rc: float
    rt: float
    pari: float

    def __post_init__(self):
        if abs(self.sb - (1.0 - self.la)) > 1e-12:
            raise ValueError("sb must equal 1 - la")
        if abs(self.bo - 0.5 * (self.bs + self.sb)) > 1e-12:
            raise ValueError("bo must equal (bs + sb) / 2")

    @classmethod
    def assemble(cls, ce: float, bs: float, la: float, mi_avg_value: float,
                 pi: float, ot: float, os_value: float | None = None,
                 weights: PariWeights = PariWeights()) -> "MetricsRecord":
        sb = 1.0 - la
        rc, rt = bs, 1.0
        return cls(
            ce=ce, bs=bs, la=la, sb=sb, bo=0.5 * (bs + sb),
            os=bs * sb if os_value is None else os_value,
            mi_avg=mi_avg_value, pi=pi, ot=ot, rc=rc, rt=rt,
            pari=pari(rc, ot, pi, rt, weights),
        )


def privacylens_mapping(adjusted_leakage_rate: float,
                        benign_success: float) -> dict:
    """Action-benchmark adapter, pure formulas on externally supplied rates.

    LA := adjusted leakage rate (over helpful actions), SB := 1 - LA,
    BS := fraction of helpful actions, OS := BS * SB.
    """
    if not 0.0 <= adjusted_leakage_rate <= 1.0:
        raise ValueError("leakage rate must lie in [0, 1]")
    if not 0.0 <= benign_success <= 1.0:
        raise ValueError("benign success must lie in [0, 1]")
    la = adjusted_leakage_rate
    sb = 1.0 - la
    return {"la": la, "sb": sb, "bs": benign_success,
            "os": benign_success * sb}
