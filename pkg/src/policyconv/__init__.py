"""Off-policy evaluation for contextual bandits with smoothed policies
over action embeddings."""

from .bandit import (
    BanditDataset,
    DataIntegrityError,
    EmbeddingTable,
    LoggedInteraction,
    PolicyEvaluator,
    RewardOracle,
    StaticOracle,
    StaticPolicy,
    TabularOracle,
    TabularPolicy,
    UniformPolicy,
    export_dataset,
    true_value,
)
from .estimators import (
    ConstantRewardModel,
    DirectMethod,
    DoublyRobust,
    EstimateDiagnostics,
    EstimationError,
    InversePropensityScoring,
    OracleRewardModel,
    PolicyConvolution,
    RewardModel,
    RidgeRewardModel,
    SelfNormalizedDR,
    SelfNormalizedIPS,
    fit_reward_model,
)
from .smoothing import (
    ActionTree,
    BallSmoother,
    KernelSmoother,
    KNNSmoother,
    Smoother,
    TreeSmoother,
    build_tree,
    full_tree_depth,
    make_smoother,
)
from .synthetic import (
    EpsilonGreedyPolicy,
    SoftmaxPolicy,
    SynthConfig,
    SynthWorld,
    apply_deficient_support,
    build_world,
    generate_dataset,
    logging_policy,
    target_policy,
)
from .harness import (
    SweepSpec,
    TrialResult,
    default_tau_grid,
    replicate,
    run_sweep,
    select_tau,
    summarize,
    toy_table,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
