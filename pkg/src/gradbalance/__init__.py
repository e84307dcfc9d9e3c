"""Long-tailed classification training with gradient-balanced class groups.

The library decomposes the training loss by class, groups classes whose
gradients point the same way via normalized-cut spectral clustering, and
combines group gradients through a min-norm solver so that each update is a
common descent direction for every group. Includes synthetic long-tailed
data generation, a group-aware completion batch sampler, baseline trainers,
and a CLI for experiments and reports.
"""

from .datagen import Dataset, DatasetSpec, generate_longtailed, load_csv, save_csv
from .errors import (
    CombinatorialLimitError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    GradBalanceError,
    ParseError,
    SchemaError,
    TrainingDivergedError,
    ValidationError,
)
from .grouping import (
    Partition,
    baseline_partitions,
    brute_force_partition,
    class_mean_gradients,
    cut_objective,
    similarity_matrix,
    spectral_partition,
)
from .model import ClassGradient, ModelConfig, batch_gradient, ce_loss, forward, per_class_gradients
from .moo import CombinedDirection, dominates, min_norm_point, pareto_descent_check
from .sampler import Batch, BatchSampler, GacConfig, gac_probabilities
from .trainer import (
    EvalMetrics,
    TrainConfig,
    TrainRecord,
    diagnose_gradient_imbalance,
    evaluate,
    moo_step,
    run_grouping,
    stage1_warmup,
    train,
    train_baseline,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "BatchSampler",
    "ClassGradient",
    "CombinedDirection",
    "CombinatorialLimitError",
    "ConfigError",
    "ConvergenceError",
    "Dataset",
    "DatasetSpec",
    "DimensionError",
    "EvalMetrics",
    "GacConfig",
    "GradBalanceError",
    "ModelConfig",
    "ParseError",
    "Partition",
    "SchemaError",
    "TrainConfig",
    "TrainRecord",
    "TrainingDivergedError",
    "ValidationError",
    "baseline_partitions",
    "batch_gradient",
    "brute_force_partition",
    "ce_loss",
    "class_mean_gradients",
    "cut_objective",
    "diagnose_gradient_imbalance",
    "dominates",
    "evaluate",
    "forward",
    "gac_probabilities",
    "generate_longtailed",
    "load_csv",
    "min_norm_point",
    "moo_step",
    "pareto_descent_check",
    "per_class_gradients",
    "run_grouping",
    "save_csv",
    "similarity_matrix",
    "spectral_partition",
    "stage1_warmup",
    "train",
    "train_baseline",
]
