"""Class-wise adversarial domain adaptation for tabular features.

A small labeled sample from the target corpus plus an abundant source
corpus train a single MLP over joint (class, domain) categories; an
alternating encoder-only stage then pulls each class's target examples
onto the same class's source region. The package ships the non-adaptive
baselines, a fold/trial evaluation harness reporting unweighted accuracy,
and a synthetic covariate-shift benchmark that runs with no external data.
"""

__version__ = "0.1.0"

from .adaptation import (
    TrainConfig,
    TrainHistory,
    TrainingError,
    compute_la,
    compute_ld,
    train_cada,
    train_finetune,
    train_source_only,
    train_target_only,
)
from .backends import backend_name
from .datasets import (
    DomainDataset,
    NormalizationStats,
    SyntheticShiftSpec,
    adversarial_relabel,
    apply_normalization,
    fit_normalization,
    generate_synthetic_pair,
    holdout_split,
    load_feature_csv,
    relabel,
    sample_target_examples,
    speaker_kfold,
)
from .evaluation import (
    SweepReport,
    TrialRecord,
    TrialReport,
    aggregate,
    render_report,
    run_experiment,
    unweighted_accuracy,
)
from .model import (
    ModelConfig,
    ModelParams,
    collapse_prediction,
    forward,
    init_params,
    load_params,
    predict_classes,
    save_params,
)
from .optimizer import Adam, AdamConfig

__all__ = [
    "Adam",
    "AdamConfig",
    "DomainDataset",
    "ModelConfig",
    "ModelParams",
    "NormalizationStats",
    "SweepReport",
    "SyntheticShiftSpec",
    "TrainConfig",
    "TrainHistory",
    "TrainingError",
    "TrialRecord",
    "TrialReport",
    "adversarial_relabel",
    "aggregate",
    "apply_normalization",
    "backend_name",
    "collapse_prediction",
    "compute_la",
    "compute_ld",
    "fit_normalization",
    "forward",
    "generate_synthetic_pair",
    "holdout_split",
    "init_params",
    "load_feature_csv",
    "load_params",
    "predict_classes",
    "relabel",
    "render_report",
    "run_experiment",
    "sample_target_examples",
    "save_params",
    "speaker_kfold",
    "train_cada",
    "train_finetune",
    "train_source_only",
    "train_target_only",
    "unweighted_accuracy",
]
