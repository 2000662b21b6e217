"""Minimal dense feed-forward substrate with reverse-mode gradients.

Matrices are plain float64 numpy arrays with the batch along axis 0; there is
no autodiff graph, only fixed MLP topology: rectifier hidden layers, identity
output.  This is deliberately small -- agents, MI critics and adversarial
probes all reuse the same machinery, and every gradient path is checkable
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DivergenceError",
    "Mlp",
    "AdamState",
    "adamw_step",
    "forward",
    "backward",
    "cross_entropy",
    "softmax",
    "clip_global_norm",
    "finite_diff_check",
    "GradCheckResult",
    "save_checkpoint",
    "load_checkpoint",
]


class DivergenceError(RuntimeError):
    """Nonfinite value where training required a finite one."""


@dataclass
class Mlp:
    """Fully connected net: rectifier on hidden layers, identity output.

    ``weights[k]`` has shape (d_in, d_out) and ``biases[k]`` shape (d_out,);
    consecutive layer dims must chain.  A single layer is a linear map.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: shapes {w.shape} / {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k - 1}->{k} dims do not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: nonfinite parameters")

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator) -> "Mlp":
        """Scaled-Gaussian init: std sqrt(2 / fan_in), zero biases."""
        sizes = list(layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        weights, biases = [], []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            std = np.sqrt(2.0 / d_in)
            weights.append(rng.normal(0.0, std, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...] (live views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])


def forward(net: Mlp, x: np.ndarray):
    """Run the net; returns (output, cache) with cache feeding ``backward``.

    The cache keeps each layer's input and pre-activation, which is all the
    backward pass needs.  The rectifier subgradient at exactly 0 is 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(
            f"input shape {x.shape} incompatible with in_dim {net.in_dim}"
        )
    inputs, preacts = [], []
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    return h, (inputs, preacts)


def backward(net: Mlp, cache, d_out: np.ndarray):
    """Backprop through a cached forward pass.

    Returns (param_grads, d_input) where param_grads aligns with
    ``net.params()``.
    """
    inputs, preacts = cache
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != (inputs[0].shape[0], net.out_dim):
        raise ValueError(f"upstream gradient shape {d_out.shape} mismatched")
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    delta = d_out
    last = len(net.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            delta = delta * (preacts[k] > 0.0)
        grads[2 * k] = inputs[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[k].T
    return grads, delta


@dataclass
class AdamState:
    """Decoupled-weight-decay Adam accumulator for one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-3,
                   weight_decay: float = 0.0) -> "AdamState":
        return cls(
            lr=lr,
            weight_decay=weight_decay,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adamw_step(params, grads, state: AdamState) -> None:
    """One AdamW update, in place.

    Weight decay is decoupled: it shrinks parameters directly and never
    enters the moment estimates.  Raises ``DivergenceError`` on nonfinite
    gradients -- the standard first symptom of a diverging run.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params / grads / state lengths differ")
    for g in grads:
        if not np.isfinite(g).all():
            raise DivergenceError("nonfinite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} vs param {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-softmax of the true class, in nats.

    Returns (loss, d_logits) with d_logits = (softmax - onehot) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape}, expected ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    d = softmax(logits)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is <= max_norm.

    Returns the norm before clipping; grads are modified in place.
    """
    sq = sum(float(np.sum(g * g)) for g in grads)
    norm = float(np.sqrt(sq))
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass(frozen=True)
class GradCheckResult:
    passed: bool
    worst_rel_error: float
    worst_param: int
    worst_index: tuple


def finite_diff_check(net: Mlp, loss_fn, tolerance: float = 1e-4,
                      h: float = 1e-5) -> GradCheckResult:
    """Compare analytic parameter gradients against central differences.

    ``loss_fn(net)`` must deterministically return ``(loss, grads)`` with
    grads aligned to ``net.params()``.  Every parameter coordinate is
    perturbed by +-h.  Reports the worst relative error instead of raising,
    so a failure can be inspected.
    """
    _, analytic = loss_fn(net)
    params = net.params()
    worst = 0.0
    worst_param, worst_index = -1, ()
    for pi, p in enumerate(params):
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up, _ = loss_fn(net)
            p[idx] = orig - h
            down, _ = loss_fn(net)
            p[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[pi][idx])
            denom = max(abs(a), abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            if rel > worst:
                worst, worst_param, worst_index = rel, pi, idx
            it.iternext()
    return GradCheckResult(worst <= tolerance, worst, worst_param, worst_index)


def save_checkpoint(path, arrays: dict) -> None:
    """Write named parameter arrays to an .npz archive.

    Layout contract: one float64 array per entry, row-major, keyed by the
    caller's names; stable across minor releases.
    """
    np.savez(path, **{k: np.asarray(v, dtype=np.float64)
                      for k, v in arrays.items()})


def load_checkpoint(path) -> dict:
    with np.load(path) as data:
        return {k: data[k].copy() for k in data.files}
