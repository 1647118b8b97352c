"""blockwalk: block-variational transition-matrix approximation.

Approximates the random-walk transition matrix of a similarity graph with a
block-partitioned variational model over a Bregman anchor tree, and applies it
to graph-based semi-supervised label propagation.
"""

from .anchor_tree import (
    Anchor,
    ClusterTree,
    NodeStats,
    agglomerate_anchors,
    bregman_information,
    build_cluster_tree,
    grow_anchors,
    merge_cost,
    node_stats,
    steal_threshold,
)
from .dataset import (
    DataMatrix,
    LabelSet,
    SmoothedMatrix,
    SyntheticSpec,
    generate_synthetic,
    load_bow,
    load_labels,
    smooth,
    write_bow,
    write_labels,
)
from .divergence import (
    DivergenceSpec,
    DomainError,
    bregman_divergence,
    grad_phi,
    grad_phi_inv,
    pairwise_divergences,
    phi,
)
from .model_io import load_model, save_model
from .partition import (
    Block,
    BlockPartition,
    coarsest_partition,
    finest_partition,
    refine_partition,
    validate_partition,
)
from .propagation import (
    DenseBaseline,
    PropagationConfig,
    TransitionModel,
    blocked_matvec,
    classify_one_vs_all,
    dense_transition_matrix,
    evaluate_accuracy,
    propagate_labels,
)
from .variational import (
    BlockParams,
    BoundReport,
    block_divergence_sum,
    exact_loglik,
    lower_bound,
    optimize_q,
)

__all__ = [
    "Anchor",
    "Block",
    "BlockParams",
    "BlockPartition",
    "BoundReport",
    "ClusterTree",
    "DataMatrix",
    "DenseBaseline",
    "DivergenceSpec",
    "DomainError",
    "LabelSet",
    "NodeStats",
    "PropagationConfig",
    "SmoothedMatrix",
    "SyntheticSpec",
    "TransitionModel",
    "agglomerate_anchors",
    "block_divergence_sum",
    "blocked_matvec",
    "bregman_divergence",
    "bregman_information",
    "build_cluster_tree",
    "classify_one_vs_all",
    "coarsest_partition",
    "dense_transition_matrix",
    "evaluate_accuracy",
    "exact_loglik",
    "finest_partition",
    "generate_synthetic",
    "grad_phi",
    "grad_phi_inv",
    "grow_anchors",
    "load_bow",
    "load_labels",
    "load_model",
    "lower_bound",
    "merge_cost",
    "node_stats",
    "optimize_q",
    "pairwise_divergences",
    "phi",
    "propagate_labels",
    "refine_partition",
    "save_model",
    "smooth",
    "steal_threshold",
    "validate_partition",
    "write_bow",
    "write_labels",
]

__version__ = "0.1.0"
