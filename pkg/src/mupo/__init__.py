"""Multi-group policy optimization with constrained rollout clustering."""

from .config import (
    ConfigError,
    GroupPartition,
    MupoConfig,
    RewardBreakdown,
    RolloutRecord,
    check_partition,
    config_from_mapping,
    load_config_file,
    validate_config,
)
from .embedding import (
    DegenerateEmbeddingError,
    cosine_distance,
    cosine_distance_matrix,
    normalize,
    pairwise_diversity,
)
from .grouping import (
    ConstrainedKMeans,
    InfeasiblePartitionError,
    assign_min_size,
    brute_force_assignment,
    constrained_kmeans,
    init_centroids,
)
from .metrics import SampleSet, acc_at_k, diversity_curve, ema_smooth
from .objective import (
    AdvantageSet,
    SurrogateInputs,
    clipped_surrogate,
    grpo_advantages,
    grpo_objective,
    load_balance_weight,
    mupo_advantages,
    mupo_objective,
)
from .rewards import (
    diversity_reward,
    diversity_rewards,
    lambda_schedule,
    total_reward,
    verify_format,
)
from .simulator import (
    LandscapeConfig,
    ModeSpec,
    TabularPolicy,
    exact_expected_reward,
    load_landscape,
    train,
)

__version__ = "0.1.0"
