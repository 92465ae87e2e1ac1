"""Rare-case auditing for classifiers trained on mixture populations."""

__version__ = "0.1.0"

from .analysis import convergence_gap, decompose_gradients, estimate_group_mi
from .losses import (
    ClinicallyWeighted,
    CostSensitive,
    CrossEntropy,
    Focal,
    WeightParams,
    clinical_weight,
    objective_value,
    per_sample_loss,
)
from .metrics import (
    PredictionSet,
    bootstrap_ci,
    group_performance,
    rarity_index,
    rcce,
    rcpg,
)
from .models import ModelParams, batch_gradient, predict_proba
from .synthgen import (
    Dataset,
    GaussianComponent,
    LinearTeacher,
    MixtureSpec,
    TeacherSpec,
    bayes_reference,
    oversample_rare,
    sample_mixture,
)
from .trainers import (
    ConstraintSpec,
    DROConfig,
    TrainConfig,
    train_constrained,
    train_erm,
    train_group_dro,
)

__all__ = [
    "ClinicallyWeighted",
    "ConstraintSpec",
    "CostSensitive",
    "CrossEntropy",
    "DROConfig",
    "Dataset",
    "Focal",
    "GaussianComponent",
    "LinearTeacher",
    "MixtureSpec",
    "ModelParams",
    "PredictionSet",
    "TeacherSpec",
    "TrainConfig",
    "WeightParams",
    "batch_gradient",
    "bayes_reference",
    "bootstrap_ci",
    "clinical_weight",
    "convergence_gap",
    "decompose_gradients",
    "estimate_group_mi",
    "group_performance",
    "objective_value",
    "oversample_rare",
    "per_sample_loss",
    "predict_proba",
    "rarity_index",
    "rcce",
    "rcpg",
    "sample_mixture",
    "train_constrained",
    "train_erm",
    "train_group_dro",
]
