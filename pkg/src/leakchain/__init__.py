"""Compositional privacy leakage in sequential agent pipelines.

Two halves, one theory.  ``exact_info`` is a discrete ground-truth engine:
it materializes pipeline joints, computes every mutual information exactly,
and verifies the cumulative leakage bound sum_i 2^(N-i) eps_i step by step.
``mine`` + ``training`` implement the learned side: variational MI critics
and the three-phase loop that trains agent pipelines under per-stage MI
penalties.  ``metrics`` adds adversarial probes and the composite
privacy/utility score; ``harness``/``cli`` wrap everything into reproducible
experiments.
"""

from .exact_info import (
    BoundCheck,
    BoundReport,
    CapacityError,
    DiscreteChannel,
    DiscretePipelineSpec,
    JointDistribution,
    build_joint,
    cumulative_bound,
    leakage_profile,
    mutual_information,
    random_pipeline,
    verify_bound_chain,
    xor_pipeline,
)
from .mine import Critic, MineEstimate, critic_step, dv_estimate, make_marginal_batch, mi_penalty_gradient
from .nn_core import AdamState, DivergenceError, Mlp, adamw_step, backward, cross_entropy, finite_diff_check, forward
from .synthetic import Batch, SyntheticTaskSpec, gen_batch, task_splits
from .training import PipelineModel, TrainConfig, forward_pipeline, run_training
from .metrics import MetricsRecord, PariWeights, mi_avg, pari, privacy_components, train_probe

__version__ = "0.1.0"
