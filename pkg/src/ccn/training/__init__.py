"""Training loop, evaluation, ablation grid and gradient check."""

from .ablation import (
    AblationCell,
    AblationRow,
    AblationTable,
    DirectionVerdict,
    ablation_direction,
    run_ablation,
    trimmed_mean,
)
from .gradcheck import GradcheckReport, random_pages, run_gradcheck
from .metrics import brute_force_auc, compute_auc, tied_ranks
from .trainer import (
    EpochMetrics,
    MetricsReport,
    TrainResult,
    TrainState,
    degree_separation,
    evaluate,
    init_train_state,
    read_metrics,
    train_epoch,
    train_model,
)

__all__ = [
    "compute_auc",
    "brute_force_auc",
    "tied_ranks",
    "EpochMetrics",
    "MetricsReport",
    "TrainState",
    "TrainResult",
    "init_train_state",
    "train_epoch",
    "train_model",
    "evaluate",
    "degree_separation",
    "read_metrics",
    "AblationCell",
    "AblationRow",
    "AblationTable",
    "run_ablation",
    "trimmed_mean",
    "DirectionVerdict",
    "ablation_direction",
    "GradcheckReport",
    "random_pages",
    "run_gradcheck",
]
