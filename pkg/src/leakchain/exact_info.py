"""Exact information accounting for discrete sequential pipelines.

A pipeline is a chain of stochastic stages: stage i consumes the previous
stage's output symbol together with a stage-local sensitive symbol and emits
a new output symbol.  Because every variable is finite, the full joint
distribution can be materialized as a dense table and every mutual-information
quantity computed exactly by marginalization.  That makes this module the
ground-truth oracle for the cumulative leakage bound

    I(O_N; S_1..S_N)  <=  sum_i 2^(N-i) * eps_i,      eps_i = I(O_i; S_i),

which holds whenever the sensitive symbols are mutually independent and the
stage structure is Markov.  ``verify_bound_chain`` checks the bound together
with every intermediate inequality of its derivation, reporting slack per
check.

All information quantities are in nats.  Conversion to bits (divide by ln 2)
is left to the reporting layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CapacityError",
    "JointDistribution",
    "DiscreteChannel",
    "DiscretePipelineSpec",
    "BoundCheck",
    "BoundReport",
    "build_joint",
    "mutual_information",
    "leakage_profile",
    "cumulative_bound",
    "verify_bound_chain",
    "random_pipeline",
    "xor_pipeline",
    "copy_channel",
]

MASS_TOL = 1e-12
SLACK_TOL = 1e-9
DEFAULT_CELL_CAP = 10_000_000


class CapacityError(RuntimeError):
    """The joint table would exceed the configured cell cap."""


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointDistribution:
    """Dense probability table over named finite-alphabet variables.

    ``probs`` has one axis per variable, in the order of ``names``; entry
    ``probs[x1, ..., xk]`` is the probability of that symbol assignment.
    Entries are nonnegative and the total mass is 1 within ``MASS_TOL``.
    """

    names: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != probs.ndim:
            raise ValueError(
                f"{len(self.names)} names for a {probs.ndim}-axis table"
            )
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate variable names: {self.names}")
        if probs.size and probs.min() < 0.0:
            raise ValueError("negative probability entry")
        mass = float(probs.sum())
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {mass!r} not within {MASS_TOL} of 1")

    @property
    def alphabet_sizes(self) -> tuple[int, ...]:
        return self.probs.shape

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None

    def marginal(self, keep) -> "JointDistribution":
        """Marginal distribution over ``keep`` (original axis order)."""
        keep = list(keep)
        axes = sorted(self.axis(n) for n in keep)
        names = tuple(self.names[a] for a in axes)
        drop = tuple(a for a in range(self.probs.ndim) if a not in axes)
        return JointDistribution(names, self.probs.sum(axis=drop))


@dataclass(frozen=True)
class DiscreteChannel:
    """Conditional table p(output | inputs) on finite alphabets.

    ``table`` has shape ``(*input_sizes, output_size)``; each row (fixed
    input tuple) is a probability vector summing to 1 within ``MASS_TOL``.
    """

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        object.__setattr__(self, "table", table)
        if table.ndim < 1:
            raise ValueError("channel table needs at least an output axis")
        if table.size and table.min() < 0.0:
            raise ValueError("negative channel entry")
        rows = table.reshape(-1, table.shape[-1])
        bad = np.abs(rows.sum(axis=1) - 1.0) > MASS_TOL
        if bad.any():
            idx = int(np.argmax(bad))
            raise ValueError(
                f"channel row {idx} sums to {rows[idx].sum()!r}, expected 1"
            )

    @property
    def input_sizes(self) -> tuple[int, ...]:
        return self.table.shape[:-1]

    @property
    def output_size(self) -> int:
        return self.table.shape[-1]


@dataclass(frozen=True)
class DiscretePipelineSpec:
    """N-stage pipeline: stage i maps (O_{i-1}, S_i) -> O_i stochastically.

    Stage 1 has no upstream output, so its channel takes S_1 alone.  The
    sensitive symbols are mutually independent by construction: the joint
    prior is the product of the per-stage ``s_priors``.
    """

    s_priors: tuple[np.ndarray, ...]
    channels: tuple[DiscreteChannel, ...]

    def __post_init__(self):
        priors = tuple(np.asarray(p, dtype=np.float64) for p in self.s_priors)
        object.__setattr__(self, "s_priors", priors)
        object.__setattr__(self, "channels", tuple(self.channels))
        if not priors:
            raise ValueError("pipeline needs at least one stage")
        if len(priors) != len(self.channels):
            raise ValueError(
                f"{len(priors)} priors but {len(self.channels)} channels"
            )
        for i, p in enumerate(priors):
            if p.ndim != 1 or p.size < 1:
                raise ValueError(f"stage {i + 1} prior must be a 1-d vector")
            if p.min() < 0.0 or abs(float(p.sum()) - 1.0) > MASS_TOL:
                raise ValueError(f"stage {i + 1} prior is not a distribution")
        for i, ch in enumerate(self.channels):
            want = (priors[0].size,) if i == 0 else (
                self.channels[i - 1].output_size,
                priors[i].size,
            )
            if ch.input_sizes != want:
                raise ValueError(
                    f"stage {i + 1} channel inputs {ch.input_sizes}, "
                    f"expected {want}"
                )

    @property
    def n_stages(self) -> int:
        return len(self.channels)

    @property
    def s_alphabets(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.s_priors)

    @property
    def o_alphabets(self) -> tuple[int, ...]:
        return tuple(ch.output_size for ch in self.channels)

    def cell_count(self) -> int:
        n = 1
        for k in self.s_alphabets + self.o_alphabets:
            n *= k
        return n

    def s_name(self, i: int) -> str:
        return f"S{i}"

    def o_name(self, i: int) -> str:
        return f"O{i}"


# ---------------------------------------------------------------------------
# Joint construction and exact MI
# ---------------------------------------------------------------------------


def build_joint(spec: DiscretePipelineSpec,
                cell_cap: int = DEFAULT_CELL_CAP) -> JointDistribution:
    """Materialize the full joint over (S_1..S_N, O_1..O_N).

    The table factorizes as prod_i p(S_i) * prod_i p(O_i | O_{i-1}, S_i);
    construction multiplies the factors axis by axis, so the result is exact
    up to float rounding.  Raises ``CapacityError`` if the final table would
    exceed ``cell_cap`` cells.
    """
    n = spec.n_stages
    if spec.cell_count() > cell_cap:
        raise CapacityError(
            f"joint table needs {spec.cell_count()} cells, cap is {cell_cap}"
        )

    # Product of sensitive priors, axes S1..SN.
    probs = spec.s_priors[0].copy()
    for p in spec.s_priors[1:]:
        probs = np.multiply.outer(probs, p)

    # Append O axes one stage at a time.  After stage i the array has axes
    # (S1..SN, O1..Oi); the channel factor broadcasts over all other axes.
    for i, ch in enumerate(spec.channels):
        ndim = probs.ndim
        if i == 0:
            # table indexed by (S1, O1)
            shape = [1] * ndim + [ch.output_size]
            shape[0] = ch.table.shape[0]
            factor = ch.table.reshape(shape)
        else:
            # table indexed by (O_{i-1}, S_i, O_i); O_{i-1} is the last
            # current axis, S_i is axis i.
            shape = [1] * ndim + [ch.output_size]
            shape[ndim - 1] = ch.table.shape[0]
            shape[i] = ch.table.shape[1]
            factor = np.moveaxis(ch.table, 0, 1).reshape(shape)
        probs = probs[..., None] * factor

    names = tuple(spec.s_name(i + 1) for i in range(n)) + tuple(
        spec.o_name(i + 1) for i in range(n)
    )
    return JointDistribution(names, probs)


def _entropy(table: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*log0 = 0 convention."""
    flat = table.ravel()
    nz = flat[flat > 0.0]
    return float(-np.dot(nz, np.log(nz)))


class _EntropyCache:
    """Entropy of marginals of one joint table, memoized by variable set."""

    def __init__(self, joint: JointDistribution):
        self._joint = joint
        self._memo: dict[frozenset, float] = {}

    def __call__(self, names) -> float:
        key = frozenset(names)
        got = self._memo.get(key)
        if got is None:
            if not key:
                got = 0.0
            else:
                axes = tuple(
                    a for a, n in enumerate(self._joint.names) if n not in key
                )
                got = _entropy(self._joint.probs.sum(axis=axes))
            self._memo[key] = got
        return got

    def mi(self, x, y, z=()) -> float:
        """I(X;Y|Z) via the entropy combination, floored at 0."""
        x, y, z = set(x), set(y), set(z)
        v = (
            self(x | z) + self(y | z) - self(x | y | z) - self(z)
        )
        return max(0.0, v)


def mutual_information(joint: JointDistribution, x, y, z=()) -> float:
    """Exact (conditional) mutual information I(X;Y|Z) in nats.

    ``x``, ``y`` and ``z`` are iterables of variable names; they must be
    pairwise disjoint and present in ``joint``.  With ``z`` empty this is the
    plain mutual information.  The value is computed by exact marginalization
    and floored at 0 (float rounding can otherwise produce ~-1e-16).
    """
    xs, ys, zs = set(x), set(y), set(z)
    for n in xs | ys | zs:
        joint.axis(n)  # raises KeyError for unknown names
    if xs & ys or xs & zs or ys & zs:
        raise ValueError("variable sets must be pairwise disjoint")
    if not xs or not ys:
        raise ValueError("x and y must be nonempty")
    return _EntropyCache(joint).mi(xs, ys, zs)


def leakage_profile(spec: DiscretePipelineSpec,
                    cell_cap: int = DEFAULT_CELL_CAP):
    """Per-stage local leakages and the global leakage, all in nats.

    Returns ``(eps, global_leak)`` where ``eps[i-1] = I(O_i; S_i)`` and
    ``global_leak = I(O_N; S_1..S_N)``.
    """
    joint = build_joint(spec, cell_cap=cell_cap)
    ent = _EntropyCache(joint)
    n = spec.n_stages
    eps = tuple(
        ent.mi({spec.o_name(i)}, {spec.s_name(i)}) for i in range(1, n + 1)
    )
    s_all = {spec.s_name(i) for i in range(1, n + 1)}
    global_leak = ent.mi({spec.o_name(n)}, s_all)
    return eps, global_leak


def cumulative_bound(epsilons) -> float:
    """Sum of 2^(N-i) * eps_i over stages i = 1..N.

    This is the leakage budget that local constraints eps_i admit after
    sequential composition; the marginal sensitivity to eps_i is exactly
    2^(N-i), so early-stage leakage dominates.  Uniform eps gives
    (2^N - 1) * eps.  Uses ``math.fsum`` so the uniform case reproduces the
    closed form exactly.
    """
    eps = [float(e) for e in epsilons]
    if any(e < 0.0 for e in eps):
        raise ValueError("leakage budgets must be nonnegative")
    n = len(eps)
    return math.fsum(e * float(2 ** (n - i - 1)) for i, e in enumerate(eps))


# ---------------------------------------------------------------------------
# Bound-chain verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    """One verified (in)equality: passes iff slack >= -SLACK_TOL.

    For inequalities lhs <= rhs the slack is rhs - lhs.  For identities the
    slack is -|lhs - rhs|, so the same pass rule applies.
    """

    name: str
    stage: int  # 0 for pipeline-level checks
    lhs: float
    rhs: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.slack >= -SLACK_TOL


@dataclass(frozen=True)
class BoundReport:
    """Everything ``verify_bound_chain`` measured on one pipeline.

    Stage arrays are 1-indexed conceptually: entry ``i-1`` belongs to stage
    ``i``.  ``upstream_terms[i-1]`` is I(S_i; S_{<i} | O_i), the quantity the
    upstream-leakage lemma bounds by I(S_{<i}; O_{i-1}).
    """

    epsilons: tuple[float, ...]
    conditional_terms: tuple[float, ...]
    upstream_terms: tuple[float, ...]
    global_leakage: float
    bound: float
    checks: tuple[BoundCheck, ...] = field(repr=False)

    @property
    def n_stages(self) -> int:
        return len(self.epsilons)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> tuple[BoundCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)

    @property
    def bound_ratio(self) -> float:
        """global / bound, or 0 when the bound sits below numerical
        tolerance (the ratio of two float-noise values says nothing)."""
        if self.bound <= SLACK_TOL:
            return 0.0
        return self.global_leakage / self.bound

    def stage_slack(self, i: int) -> float:
        slacks = [c.slack for c in self.checks if c.stage == i]
        return min(slacks) if slacks else float("inf")

    def to_csv_rows(self) -> list[str]:
        """Fixed serialization: per-stage rows, then a summary row."""
        def fmt(v: float) -> str:
            return f"{(0.0 if v == 0.0 else v):.12g}"

        rows = ["stage,epsilon_nats,L_i_nats,upstream_term_nats,slack"]
        for i in range(1, self.n_stages + 1):
            rows.append(
                f"{i},{fmt(self.epsilons[i - 1])},"
                f"{fmt(self.conditional_terms[i - 1])},"
                f"{fmt(self.upstream_terms[i - 1])},"
                f"{fmt(self.stage_slack(i))}"
            )
        rows.append("global_nats,bound_nats,pass")
        rows.append(
            f"{fmt(self.global_leakage)},{fmt(self.bound)},"
            f"{str(self.passed).lower()}"
        )
        return rows


def verify_bound_chain(spec: DiscretePipelineSpec,
                       cell_cap: int = DEFAULT_CELL_CAP) -> BoundReport:
    """Numerically verify every step of the cumulative-bound derivation.

    Checks, per stage i (S< denotes S_1..S_{i-1}, U_i = sum_{j<=i} L_j):

    * chain rule:      I(O_N; S_1..S_N) = sum_i I(O_N; S_i | S<)
    * conditional DPI: I(O_N; S_i | S<) <= L_i := I(O_i; S_i | S<)
    * decomposition:   L_i = I(O_i; S_i) + I(S_i; S< | O_i)
    * upstream lemma:  I(S_i; S< | O_i) <= I(S<; O_{i-1})
    * markov DPI:      I(S<; O_i) <= I(S<; O_{i-1})
    * recurrence:      U_i <= eps_i + 2 U_{i-1}
    * final bound:     I(O_N; S_1..S_N) <= sum_i 2^(N-i) eps_i

    All of these are theorems under the construction, so a failing check
    (slack < -1e-9) signals an implementation bug, not a property of the
    pipeline; the report carries the offending stage and slack either way.
    """
    joint = build_joint(spec, cell_cap=cell_cap)
    ent = _EntropyCache(joint)
    n = spec.n_stages
    o_n = spec.o_name(n)

    checks: list[BoundCheck] = []
    eps: list[float] = []
    cond_terms: list[float] = []
    upstream_terms: list[float] = []
    chain_terms: list[float] = []

    for i in range(1, n + 1):
        s_i = {spec.s_name(i)}
        s_prev = {spec.s_name(j) for j in range(1, i)}
        o_i = {spec.o_name(i)}
        o_prev = {spec.o_name(i - 1)} if i > 1 else set()

        e_i = ent.mi(o_i, s_i)
        l_i = ent.mi(o_i, s_i, s_prev)
        c_i = ent.mi({o_n}, s_i, s_prev)
        t_i = ent.mi(s_i, s_prev, o_i) if s_prev else 0.0
        r_i = ent.mi(s_prev, o_prev) if (s_prev and o_prev) else 0.0
        d_i = ent.mi(s_prev, o_i) if s_prev else 0.0

        eps.append(e_i)
        cond_terms.append(l_i)
        upstream_terms.append(t_i)
        chain_terms.append(c_i)

        checks.append(
            BoundCheck("conditional_dpi", i, lhs=c_i, rhs=l_i, slack=l_i - c_i)
        )
        ident = e_i + t_i
        checks.append(
            BoundCheck(
                "leakage_decomposition", i,
                lhs=l_i, rhs=ident, slack=-abs(l_i - ident),
            )
        )
        if i > 1:
            checks.append(
                BoundCheck(
                    "upstream_bound", i, lhs=t_i, rhs=r_i, slack=r_i - t_i
                )
            )
            checks.append(
                BoundCheck(
                    "markov_dpi", i, lhs=d_i, rhs=r_i, slack=r_i - d_i
                )
            )

    # Recurrence on the partial sums of the conditional terms.
    u_prev = 0.0
    for i in range(1, n + 1):
        u_i = u_prev + cond_terms[i - 1]
        rhs = eps[i - 1] + 2.0 * u_prev
        checks.append(
            BoundCheck("recurrence", i, lhs=u_i, rhs=rhs, slack=rhs - u_i)
        )
        u_prev = u_i

    s_all = {spec.s_name(i) for i in range(1, n + 1)}
    global_leak = ent.mi({o_n}, s_all)
    chain_sum = math.fsum(chain_terms)
    checks.append(
        BoundCheck(
            "chain_rule", 0,
            lhs=global_leak, rhs=chain_sum,
            slack=-abs(global_leak - chain_sum),
        )
    )

    bound = cumulative_bound(eps)
    checks.append(
        BoundCheck(
            "final_bound", 0,
            lhs=global_leak, rhs=bound, slack=bound - global_leak,
        )
    )

    return BoundReport(
        epsilons=tuple(eps),
        conditional_terms=tuple(cond_terms),
        upstream_terms=tuple(upstream_terms),
        global_leakage=global_leak,
        bound=bound,
        checks=tuple(checks),
    )


# ---------------------------------------------------------------------------
# Pipeline generators
# ---------------------------------------------------------------------------


def _as_sizes(value, n: int, what: str) -> tuple[int, ...]:
    if np.isscalar(value):
        sizes = (int(value),) * n
    else:
        sizes = tuple(int(v) for v in value)
    if len(sizes) != n:
        raise ValueError(f"need {n} {what} sizes, got {len(sizes)}")
    if any(k < 2 for k in sizes):
        raise ValueError(f"{what} alphabet sizes must be >= 2")
    return sizes


def random_pipeline(seed: int, n_stages: int, s_sizes, o_sizes,
                    leak_level: float) -> DiscretePipelineSpec:
    """Seeded random pipeline for fuzzing the bound chain.

    Each channel is a convex mixture of a uniformly random deterministic map
    (weight ``leak_level``) and the uniform output distribution (weight
    ``1 - leak_level``); sensitive priors are uniform.  ``leak_level`` 0
    therefore yields zero leakage everywhere, and the same seed always yields
    the identical spec.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")
    if not 0.0 <= leak_level <= 1.0:
        raise ValueError("leak_level must lie in [0, 1]")
    s_sizes = _as_sizes(s_sizes, n_stages, "sensitive")
    o_sizes = _as_sizes(o_sizes, n_stages, "output")

    rng = np.random.default_rng(seed)
    priors = tuple(np.full(k, 1.0 / k) for k in s_sizes)
    channels = []
    for i in range(n_stages):
        in_sizes = (s_sizes[0],) if i == 0 else (o_sizes[i - 1], s_sizes[i])
        n_rows = int(np.prod(in_sizes))
        k_out = o_sizes[i]
        det = np.zeros((n_rows, k_out))
        det[np.arange(n_rows), rng.integers(0, k_out, size=n_rows)] = 1.0
        table = leak_level * det + (1.0 - leak_level) / k_out
        channels.append(DiscreteChannel(table.reshape(*in_sizes, k_out)))
    return DiscretePipelineSpec(priors, tuple(channels))


def copy_channel(k: int) -> DiscreteChannel:
    """Deterministic identity channel on a k-symbol alphabet."""
    return DiscreteChannel(np.eye(k))


def xor_pipeline() -> DiscretePipelineSpec:
    """Two-stage witness that local constraints do not compose.

    S_1, S_2 are uniform bits; O_1 = S_1 and O_2 = O_1 xor S_2.  Stage 2 has
    zero local leakage, I(O_2; S_2) = 0, yet the final output carries a full
    bit about the pair: I(O_2; S_1, S_2) = ln 2.
    """
    half = np.array([0.5, 0.5])
    xor = np.zeros((2, 2, 2))
    for o_prev in (0, 1):
        for s in (0, 1):
            xor[o_prev, s, o_prev ^ s] = 1.0
    return DiscretePipelineSpec(
        (half, half),
        (copy_channel(2), DiscreteChannel(xor)),
    )
