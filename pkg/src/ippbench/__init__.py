"""Budgeted information-gathering workbench.

Simulated 2D occupancy worlds with a raycast sensor, a submodular
coverage objective under a travel budget, a clairvoyant cost-benefit
oracle, information-gain baseline policies, and an imitation-learning
loop that trains a regression forest to predict the oracle's
value-to-go from belief features.
"""

from .errors import (
    ConfigError,
    ContractViolationError,
    DataFormatError,
    GenerationError,
    InstanceTooLargeError,
    IppError,
    SchemaMismatchError,
    SensingError,
    TrainingError,
)
from .features import FEATURE_NAMES, SCHEMA_VERSION, FeatureVector, extract, extract_batch, score
from .imitation import (
    EpisodeTrace,
    EvalResult,
    IterationMetrics,
    TrainConfig,
    TrainResult,
    evaluate,
    run_episode,
    train,
)
from .learner import (
    ForestConfig,
    LearnedPolicy,
    QDatapoint,
    RegressionForest,
    fit,
    load_model,
    predict,
    predict_batch,
    save_model,
    select_action,
)
from .objective import Budget, CoverageModel, PathState, coverage, feasible_actions, marginal_gain, reward
from .planners import (
    HEURISTIC_KINDS,
    OraclePlan,
    PolicyKind,
    brute_force_solve,
    gcb_solve,
    heuristic_select,
    oracle_action,
    oracle_value_to_go,
)
from .sensor import (
    Belief,
    Measurement,
    SensorConfig,
    empty_belief,
    initial_belief,
    raycast,
    update_belief,
)
from .worldgen import (
    DatasetSpec,
    NodeSet,
    WorldFamily,
    WorldMap,
    generate_dataset,
    generate_world,
    load_dataset,
    sample_nodes,
    save_dataset,
)

__version__ = "0.1.0"
