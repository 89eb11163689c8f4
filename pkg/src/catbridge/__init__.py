"""Exact solvers and trainers for entropic bridges on finite categorical spaces.

The package is organized around a handful of small immutable value types
(state spaces, distributions, couplings, time grids, Markov chains) plus four
layers built on them:

- ``reference``: log-domain reference dynamics and their conditional bridges,
- ``projections``: reciprocal and Markovian projections with exact KL
  bookkeeping,
- ``dimf``: the alternating-projection solver and its fixed-point
  certification tools,
- ``eot``: a log-domain Sinkhorn solver for the equivalent endpoint problem,
- ``csbm``: the sampled two-directional trainer for tabular endpoint models,
- ``datasets``: small synthetic tasks used by the examples and tests.
"""

from __future__ import annotations

from .core import (
    CategoricalDistribution,
    Coupling,
    MarkovChainProcess,
    SpaceMismatch,
    StateSpace,
    SupportMismatch,
    TimeGrid,
    coupling_marginals,
    entropy,
    kl_couplings,
    kl_distributions,
    tv_distance,
)
from .csbm import (
    BatchMismatch,
    MetricRecord,
    TabularEndpointModel,
    TrainConfig,
    csbm_train,
    expected_loss_exact,
    load_model,
    loss_kl_backward,
    loss_kl_forward,
    loss_mse_backward,
    loss_mse_forward,
    minibatch_ot_coupling,
    model_coupling,
    model_markov_chain,
    model_transition,
    rollout,
    save_model,
    write_metrics_csv,
)
from .datasets import (
    GridSpec2D,
    empirical_marginal,
    gaussian_grid_marginal,
    marginals_linear,
    sample_gaussian_2d,
    sample_swiss_roll_2d,
    sampler_from_distribution,
    sampler_gaussian,
    sampler_swiss_roll,
    swiss_roll_grid_marginal,
    write_samples_csv,
)
from .dimf import (
    CharacterizationReport,
    DimfRecord,
    DimfState,
    EnumerationTooLarge,
    NonDecreaseDetected,
    SupportViolation,
    characterization_check,
    dimf_init,
    dimf_run,
    dimf_step,
    fixed_point_chain,
    write_history_csv,
)
from .eot import (
    EotProblem,
    NoConvergence,
    ZeroTransition,
    cost_from_reference,
    eot_objective,
    plan_optimality_check,
    sinkhorn_solve,
    write_plan_csv,
)
from .projections import (
    ReciprocalProcess,
    ReferenceMismatch,
    ZeroMarginal,
    coupling_of_chain,
    endpoint_joint,
    markovian_projection,
    pairwise_joint,
    path_kl_markov,
    path_kl_reciprocal,
    reciprocal_projection,
    reciprocal_time_marginal,
)
from .reference import (
    AlphaOutOfRange,
    IndexOrder,
    ReferenceProcess,
    ZeroMassPath,
    bridge_backward_step,
    bridge_endpoint_posterior,
    bridge_forward_step,
    build_gaussian_reference,
    build_uniform_reference,
    cumulative_transition,
    reference_config,
    reference_from_config,
    reference_from_transitions,
    sample_bridge_path,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaOutOfRange",
    "BatchMismatch",
    "CategoricalDistribution",
    "CharacterizationReport",
    "Coupling",
    "DimfRecord",
    "DimfState",
    "EnumerationTooLarge",
    "EotProblem",
    "GridSpec2D",
    "IndexOrder",
    "MarkovChainProcess",
    "MetricRecord",
    "NoConvergence",
    "NonDecreaseDetected",
    "ReciprocalProcess",
    "ReferenceMismatch",
    "ReferenceProcess",
    "SpaceMismatch",
    "StateSpace",
    "SupportMismatch",
    "SupportViolation",
    "TabularEndpointModel",
    "TimeGrid",
    "TrainConfig",
    "ZeroMarginal",
    "ZeroMassPath",
    "ZeroTransition",
    "bridge_backward_step",
    "bridge_endpoint_posterior",
    "bridge_forward_step",
    "build_gaussian_reference",
    "build_uniform_reference",
    "characterization_check",
    "coupling_marginals",
    "coupling_of_chain",
    "cost_from_reference",
    "csbm_train",
    "cumulative_transition",
    "dimf_init",
    "dimf_run",
    "dimf_step",
    "empirical_marginal",
    "endpoint_joint",
    "entropy",
    "eot_objective",
    "expected_loss_exact",
    "fixed_point_chain",
    "gaussian_grid_marginal",
    "kl_couplings",
    "kl_distributions",
    "load_model",
    "loss_kl_backward",
    "loss_kl_forward",
    "loss_mse_backward",
    "loss_mse_forward",
    "marginals_linear",
    "markovian_projection",
    "minibatch_ot_coupling",
    "model_coupling",
    "model_markov_chain",
    "model_transition",
    "pairwise_joint",
    "path_kl_markov",
    "path_kl_reciprocal",
    "plan_optimality_check",
    "reciprocal_projection",
    "reciprocal_time_marginal",
    "reference_config",
    "reference_from_config",
    "reference_from_transitions",
    "rollout",
    "sample_bridge_path",
    "sample_gaussian_2d",
    "sample_swiss_roll_2d",
    "sampler_from_distribution",
    "sampler_gaussian",
    "sampler_swiss_roll",
    "save_model",
    "sinkhorn_solve",
    "swiss_roll_grid_marginal",
    "tv_distance",
    "write_history_csv",
    "write_metrics_csv",
    "write_plan_csv",
    "write_samples_csv",
]
