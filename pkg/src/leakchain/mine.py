"""Variational MI estimation with per-stage critic networks.

The mutual information between a representation O and a sensitive variable S
is the KL divergence between the joint and the product of marginals, which
admits the variational lower bound

    I(O; S) >= E_joint[T(o, s)] - log E_marginal[exp T(o, s')]

over scalar-valued critics T.  On a minibatch, joint pairs are the observed
(o, s) rows and marginal pairs reuse the same o rows against a shuffled copy
of the s rows.  Critics are trained by gradient ascent on the bound; the
agent side treats the critic as frozen and differentiates the same bound with
respect to the representations only.

The log-partition gradient uses an exponential moving average of the batch
mean of exp(T) as its denominator, the standard variance-reduction trick for
this estimator family; the reported estimate itself is always the plain
sample bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_core import DivergenceError, Mlp, backward, forward

__all__ = [
    "Critic",
    "MineEstimate",
    "one_hot",
    "make_marginal_batch",
    "dv_estimate",
    "critic_step",
    "mi_penalty_gradient",
]


def one_hot(values: np.ndarray, k: int) -> np.ndarray:
    """Encode integer symbols in {0..k-1} as one-hot float rows."""
    values = np.asarray(values)
    if values.ndim != 1:
        raise ValueError("expected a 1-d array of symbols")
    if values.size and (values.min() < 0 or values.max() >= k):
        raise ValueError(f"symbol out of range for alphabet {k}")
    out = np.zeros((values.size, k))
    out[np.arange(values.size), values] = 1.0
    return out


@dataclass
class Critic:
    """Scalar scorer T(o, s) with the running statistic for stable ascent.

    ``ema`` is the exponential moving average of the batch mean of exp(T) on
    marginal pairs; it is None until the first update and strictly positive
    afterwards.
    """

    net: Mlp
    ema_rate: float = 0.99
    ema: float | None = None

    def __post_init__(self):
        if not 0.0 < self.ema_rate < 1.0:
            raise ValueError("ema_rate must lie in (0, 1)")
        if self.net.out_dim != 1:
            raise ValueError("critic net must have scalar output")

    @classmethod
    def init(cls, repr_dim: int, s_dim: int, rng: np.random.Generator,
             hidden: int = 256, n_hidden: int = 2,
             ema_rate: float = 0.99) -> "Critic":
        sizes = [repr_dim + s_dim] + [hidden] * n_hidden + [1]
        return cls(Mlp.init(sizes, rng), ema_rate=ema_rate)

    def scores(self, o: np.ndarray, s: np.ndarray):
        """T on row-paired (o, s); returns (scores, cache) for backprop."""
        t, cache = forward(self.net, np.concatenate([o, s], axis=1))
        return t[:, 0], cache


@dataclass(frozen=True)
class MineEstimate:
    """One sample evaluation of the variational bound, in nats."""

    value: float
    joint_mean: float
    log_partition: float


def make_marginal_batch(o_batch: np.ndarray, s_batch: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """Shuffled copy of ``s_batch`` for product-of-marginals pairs.

    A plain uniform permutation (fixed points allowed); ``o_batch`` is only
    consulted for the size check.
    """
    b = len(s_batch)
    if len(o_batch) != b:
        raise ValueError("o and s batch sizes differ")
    if b < 2:
        raise ValueError("need batch size >= 2 to form marginal pairs")
    return s_batch[rng.permutation(b)]


def _log_mean_exp(t: np.ndarray) -> float:
    m = float(t.max())
    return m + float(np.log(np.mean(np.exp(t - m))))


def dv_estimate(critic: Critic, o_batch: np.ndarray, s_batch: np.ndarray,
                s_shuffled: np.ndarray) -> MineEstimate:
    """Evaluate the bound: mean T on joint pairs minus log-mean-exp on
    marginal pairs (max-shifted for stability)."""
    t_joint, _ = critic.scores(o_batch, s_batch)
    t_marg, _ = critic.scores(o_batch, s_shuffled)
    if not (np.isfinite(t_joint).all() and np.isfinite(t_marg).all()):
        raise DivergenceError("nonfinite critic score")
    joint_mean = float(t_joint.mean())
    log_partition = _log_mean_exp(t_marg)
    return MineEstimate(joint_mean - log_partition, joint_mean, log_partition)


def critic_step(critic: Critic, o_batch: np.ndarray, s_batch: np.ndarray,
                rng: np.random.Generator, lr: float) -> MineEstimate:
    """One ascent step on the bound; returns the pre-step estimate.

    The ascent direction replaces the log-partition denominator with the
    updated EMA of mean exp(T), debiasing the stochastic gradient.  The EMA
    update happens even at lr = 0; the first call seeds it with the batch
    mean itself.
    """
    b = len(o_batch)
    s_shuffled = make_marginal_batch(o_batch, s_batch, rng)
    t_joint, cache_joint = critic.scores(o_batch, s_batch)
    t_marg, cache_marg = critic.scores(o_batch, s_shuffled)
    if not (np.isfinite(t_joint).all() and np.isfinite(t_marg).all()):
        raise DivergenceError("nonfinite critic score")

    with np.errstate(over="ignore"):
        exp_marg = np.exp(t_marg)
    mean_exp = float(exp_marg.mean())
    if not np.isfinite(mean_exp):
        raise DivergenceError("exp(T) overflowed on marginal pairs")
    if critic.ema is None:
        critic.ema = mean_exp
    else:
        critic.ema = critic.ema_rate * critic.ema \
            + (1.0 - critic.ema_rate) * mean_exp

    estimate = MineEstimate(
        float(t_joint.mean()) - _log_mean_exp(t_marg),
        float(t_joint.mean()),
        _log_mean_exp(t_marg),
    )
    if lr == 0.0:
        return estimate

    # d(bound)/dT: +1/B on joint scores, -exp(T)/(B * ema) on marginal ones.
    up_joint = np.full((b, 1), 1.0 / b)
    up_marg = (-exp_marg / (b * critic.ema))[:, None]
    g_joint, _ = backward(critic.net, cache_joint, up_joint)
    g_marg, _ = backward(critic.net, cache_marg, up_marg)
    params = critic.net.params()
    for p, gj, gm in zip(params, g_joint, g_marg):
        step = gj + gm
        if not np.isfinite(step).all():
            raise DivergenceError("nonfinite critic update")
        p += lr * step  # ascent
    return estimate


def mi_penalty_gradient(critic: Critic, o_batch: np.ndarray,
                        s_batch: np.ndarray, s_shuffled: np.ndarray):
    """Penalty value and its gradient w.r.t. the representations.

    The critic is held fixed; the gradient flows only through the o inputs of
    both the joint and the marginal term.  The raw bound can be negative for
    an undertrained critic, and a negative penalty would reward leakage, so
    the penalty is clamped at 0 -- and below the clamp the gradient is 0.
    """
    b = len(o_batch)
    d_repr = o_batch.shape[1]
    t_joint, cache_joint = critic.scores(o_batch, s_batch)
    t_marg, cache_marg = critic.scores(o_batch, s_shuffled)
    if not (np.isfinite(t_joint).all() and np.isfinite(t_marg).all()):
        raise DivergenceError("nonfinite critic score")
    value = float(t_joint.mean()) - _log_mean_exp(t_marg)
    if value <= 0.0:
        return 0.0, np.zeros((b, d_repr))

    up_joint = np.full((b, 1), 1.0 / b)
    # d log-mean-exp / dT = softmax over marginal scores.
    shifted = np.exp(t_marg - t_marg.max())
    up_marg = (-shifted / shifted.sum())[:, None]
    _, dx_joint = backward(critic.net, cache_joint, up_joint)
    _, dx_marg = backward(critic.net, cache_marg, up_marg)
    d_o = dx_joint[:, :d_repr] + dx_marg[:, :d_repr]
    return value, d_o
