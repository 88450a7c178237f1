"""Planner, analytic cost engine, simulator, and partition auto-tuner for
sparsity-aware data-parallel training."""

from .model import (
    ClusterSpec,
    GraphSpec,
    PartitionSet,
    SpecError,
    VariableSpec,
    load_cluster_spec,
    load_graph_spec,
    model_alpha,
    partition_variable,
    shard_count,
)
from .placement import (
    DistributedPlan,
    Mechanism,
    MechanismPolicy,
    PlacedNode,
    assign_mechanism,
    plan_from_dict,
    plan_to_dict,
    transform_ar,
    transform_hybrid,
    transform_ps,
    validate_plan,
)
from .simulate import (
    ComputeProfile,
    IterationStats,
    Message,
    simulate_allgatherv,
    simulate_iteration,
    simulate_ps_exchange,
    simulate_ring_allreduce,
    simulate_training,
)
from .transfer import (
    TransferReport,
    compare_architectures,
    transfer_model,
    transfer_one_variable,
)
from .tuning import (
    CostModelParams,
    TuneResult,
    TuningError,
    fit_theta,
    optimal_p,
    predict_time,
    sample_search,
    tune,
    tune_evaluator,
)

__version__ = "0.1.0"
