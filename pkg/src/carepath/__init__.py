"""Learn cost-efficient treatment policies from episodic claims data.

The pipeline turns raw claims into an episodic Markov decision process and
solves it: ingest claims into per-episode transition samples, compress the
state space with spectral features and k-means, estimate transition and cost
tables through a similarity kernel, solve for the cost-minimizing physician
group per state with undiscounted value iteration, and evaluate policies by
Monte-Carlo simulation, cross-validation, and pathway forecasting.
"""

from .errors import (
    ArtifactError,
    BalanceError,
    CalibrationError,
    CarepathError,
    ClusteringError,
    ConfigError,
    DimensionError,
    EmptySupportError,
    EstimationError,
    FoldError,
    GroupLookupError,
    ImproperPolicyError,
    IntegrityError,
    NonConvergenceError,
    RowError,
    RuntimeFailure,
    SchemaError,
    StateRangeError,
    ValidationError,
)
from .ingest import (
    CategoryDictionary,
    ClaimRecord,
    EpisodeRecord,
    PhysicianGrouping,
    SchemaConfig,
    TransitionDataset,
    assemble_episodes,
    build_dictionaries,
    build_state,
    episode_states,
    extract_transitions,
    group_physicians,
    grouping_from_assignment,
    initial_state_distribution,
    parse_claims,
)
from .kernel import (
    BlockMdp,
    EmpiricalMdp,
    KernelSpec,
    KernelVariant,
    build_block_mdp,
    build_empirical_mdp,
    estimate_cost,
    estimate_transition_row,
    expand_block_mdp,
    kernel_eval,
)
from .simulate import (
    PREMIUM_THRESHOLD,
    CvConfig,
    CvReport,
    DayStateIndex,
    EpisodeStats,
    ForecastMatrix,
    GapModel,
    Histogram,
    RolloutConfig,
    StartCondition,
    Trajectory,
    cross_validate,
    episode_premium,
    evaluate_policy,
    export_histogram,
    forecast_pathway,
    resolve_condition,
    simulate_episode,
)
from .solver import (
    GroupPolicy,
    PrescriptionPolicy,
    ReducedSolution,
    ValueResult,
    derive_prescription_policy,
    extract_policy,
    solve,
    solve_reduced,
    value_iteration,
)
from .spectral import (
    SpectralFeatures,
    StatePartition,
    ZeroRowRule,
    cluster_states,
    count_frequencies,
    normalize_rows,
    singleton_partition,
    top_right_singular_vectors,
)
from .states import StateSpace

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # states
    "StateSpace",
    # ingest
    "SchemaConfig",
    "ClaimRecord",
    "EpisodeRecord",
    "CategoryDictionary",
    "PhysicianGrouping",
    "TransitionDataset",
    "parse_claims",
    "assemble_episodes",
    "build_dictionaries",
    "build_state",
    "episode_states",
    "group_physicians",
    "grouping_from_assignment",
    "extract_transitions",
    "initial_state_distribution",
    # spectral
    "ZeroRowRule",
    "SpectralFeatures",
    "StatePartition",
    "count_frequencies",
    "normalize_rows",
    "top_right_singular_vectors",
    "cluster_states",
    "singleton_partition",
    # kernel
    "KernelVariant",
    "KernelSpec",
    "EmpiricalMdp",
    "BlockMdp",
    "kernel_eval",
    "build_block_mdp",
    "expand_block_mdp",
    "build_empirical_mdp",
    "estimate_transition_row",
    "estimate_cost",
    # solver
    "ValueResult",
    "GroupPolicy",
    "ReducedSolution",
    "PrescriptionPolicy",
    "value_iteration",
    "extract_policy",
    "solve",
    "solve_reduced",
    "derive_prescription_policy",
    # simulate
    "PREMIUM_THRESHOLD",
    "episode_premium",
    "GapModel",
    "RolloutConfig",
    "EpisodeStats",
    "Trajectory",
    "simulate_episode",
    "evaluate_policy",
    "CvConfig",
    "CvReport",
    "cross_validate",
    "DayStateIndex",
    "StartCondition",
    "resolve_condition",
    "ForecastMatrix",
    "forecast_pathway",
    "Histogram",
    "export_histogram",
    # errors
    "CarepathError",
    "ValidationError",
    "RuntimeFailure",
    "SchemaError",
    "RowError",
    "IntegrityError",
    "StateRangeError",
    "GroupLookupError",
    "BalanceError",
    "DimensionError",
    "ClusteringError",
    "EstimationError",
    "NonConvergenceError",
    "ImproperPolicyError",
    "EmptySupportError",
    "CalibrationError",
    "FoldError",
    "ConfigError",
    "ArtifactError",
]
