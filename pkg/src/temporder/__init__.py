"""Temporal causal discovery via multi-scale diffusion orderings."""

from .aggregate import (
    DiscoveryResult,
    PipelineConfig,
    PruneConfig,
    VoteMatrix,
    constrain,
    discover,
    prune,
    threshold,
    vote,
)
from .dgp import DgpConfig, GroundTruthInstance, generate, sample_structure, simulate
from .diffusion import NoiseSchedule, ScoreNet, TrainConfig, make_schedule, perturb, train
from .evaluation import (
    Confusion,
    StudyCurve,
    confusion,
    diversity_report,
    ordering_study,
    prf1,
    summary_f1,
    window_f1,
)
from .graph import (
    CycleError,
    NodeId,
    Ordering,
    SummaryAdjacency,
    TemporalDag,
    enumerate_orderings,
    implied_edges,
    intersect_implied,
    kendall_tau,
    summarize,
    temporal_filter,
    transitive_closure,
)
from .lagembed import LagMatrix, embed, stack_trajectories, standardize
from .ordering import ScaleSet, multi_scale_orderings, order_at_scale, select_scales

__version__ = "0.1.0"

__all__ = [
    "CycleError",
    "Confusion",
    "DgpConfig",
    "DiscoveryResult",
    "GroundTruthInstance",
    "LagMatrix",
    "NodeId",
    "NoiseSchedule",
    "Ordering",
    "PipelineConfig",
    "PruneConfig",
    "ScaleSet",
    "ScoreNet",
    "StudyCurve",
    "SummaryAdjacency",
    "TemporalDag",
    "TrainConfig",
    "VoteMatrix",
    "confusion",
    "constrain",
    "discover",
    "diversity_report",
    "embed",
    "enumerate_orderings",
    "generate",
    "implied_edges",
    "intersect_implied",
    "kendall_tau",
    "make_schedule",
    "multi_scale_orderings",
    "order_at_scale",
    "ordering_study",
    "perturb",
    "prf1",
    "prune",
    "sample_structure",
    "select_scales",
    "simulate",
    "stack_trajectories",
    "standardize",
    "summarize",
    "summary_f1",
    "temporal_filter",
    "threshold",
    "train",
    "transitive_closure",
    "vote",
    "window_f1",
]
