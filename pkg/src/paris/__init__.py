"""Representer-guided training-set pruning for imbalanced regression.

The package trains a neural feature extractor, treats its penultimate layer
as a fixed feature map for a ridge head, and scores every training sample by
the closed-form change in held-out residuals its removal would cause. The
most detrimental samples are removed greedily, with rank-one Cholesky
downdates keeping every removal cheap and an outer retraining loop keeping
the feature map honest.
"""

from .data import (
    CsvSchema,
    FoldPlan,
    GroupedDataset,
    Normalization,
    WindowSpec,
    apply_normalization,
    build_fold_plans,
    corrupt_majority_labels,
    fit_normalization,
    generate_synthetic_longtail,
    ingest_csv,
    load_dataset_csv,
    make_windows,
    severity_interleaved_split,
    split_dataset_by_plan,
)
from .metrics import (
    MetricReport,
    conditional_rmse,
    conditional_rmse_percentile,
    evaluate_predictions,
    extreme_event_errors,
    rmse,
)
from .mlp import (
    MlpConfig,
    MlpRegressor,
    ensemble_predict,
    extract_features,
    train_ensemble,
    train_mlp,
)
from .pruning import (
    ParisPruner,
    PruneConfig,
    PruneRunReport,
    deletion_residuals,
    prune_one,
    run_inner_cycle,
    run_paris,
    select_hardest_validation,
)
from .representer import (
    RepresenterState,
    build_influence_matrix,
    build_state,
    build_t_cache,
    compute_alpha,
    compute_alpha_cg,
    estimate_lambda,
    fit_ridge_primal,
    predict,
)

__version__ = "0.1.0"

__all__ = [
    "CsvSchema",
    "FoldPlan",
    "GroupedDataset",
    "MetricReport",
    "MlpConfig",
    "MlpRegressor",
    "Normalization",
    "ParisPruner",
    "PruneConfig",
    "PruneRunReport",
    "RepresenterState",
    "WindowSpec",
    "apply_normalization",
    "build_fold_plans",
    "build_influence_matrix",
    "build_state",
    "build_t_cache",
    "compute_alpha",
    "compute_alpha_cg",
    "conditional_rmse",
    "conditional_rmse_percentile",
    "corrupt_majority_labels",
    "deletion_residuals",
    "ensemble_predict",
    "estimate_lambda",
    "evaluate_predictions",
    "extract_features",
    "extreme_event_errors",
    "fit_normalization",
    "fit_ridge_primal",
    "generate_synthetic_longtail",
    "ingest_csv",
    "load_dataset_csv",
    "make_windows",
    "predict",
    "prune_one",
    "rmse",
    "run_inner_cycle",
    "run_paris",
    "select_hardest_validation",
    "severity_interleaved_split",
    "split_dataset_by_plan",
    "train_ensemble",
    "train_mlp",
]
