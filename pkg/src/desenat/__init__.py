"""Point-cloud corruption robustness via Shapley attribution, desensitizing
adversarial training and same-batch self-distillation."""

from .adversarial import AdvConfig, generate_adversarial, shapley_filter, spatial_transform
from .bench import MetricsTable, build_metrics_table, corruption_error, mean_ce, mean_oa
from .core import DataError, Dataset, PCTParseError, PointCloud, RngSpec, gen_synthetic_dataset
from .corrupt import CorruptionSpec, apply_corruption, build_corruption_grid
from .distill import kd_loss, total_loss, train_desenat, train_desenat_sd
from .net import Model, TrainConfig, TrainingDiverged, forward, init_model, target_score, \
    train_standard
from .shapley import Attribution, attribute, exact_shapley, histogram, mc_shapley

__version__ = "0.1.0"

__all__ = [
    "AdvConfig", "Attribution", "CorruptionSpec", "DataError", "Dataset", "MetricsTable", "Model",
    "PCTParseError", "PointCloud", "RngSpec", "TrainConfig", "TrainingDiverged", "apply_corruption",
    "attribute", "build_corruption_grid", "build_metrics_table", "corruption_error", "exact_shapley",
    "forward", "gen_synthetic_dataset", "generate_adversarial", "histogram", "init_model", "kd_loss",
    "mc_shapley", "mean_ce", "mean_oa", "shapley_filter", "spatial_transform", "target_score",
    "total_loss", "train_desenat", "train_desenat_sd", "train_standard",
]
