"""Contrastive cross-modal knowledge distillation for structured-only phenotype models.

A teacher classifier trained on note embeddings supplies logits that a student
sees only through its losses; the student reads demographics and coded data and
is deployable where notes are missing.
"""

from .errors import (CCKDError, ConfigError, DegenerateSetError, DegenerateVectorError,
                     FeatureWidthError, InvalidArgumentError, NumericError, ParseError,
                     UndefinedMetricError, ValidationError)
from .features import Cohort, load_cohort
from .losses import LossWeights, bce_loss, ckd_loss, combined_loss, info_nce
from .metrics import ScoredSet, auroc, bootstrap_ci, evaluate, threshold_diagnostics
from .synthdata import SynthConfig, generate_cohort, split_cohort
from .training import TrainConfig, Variant, run_ablation, train_student, train_teacher

__version__ = "0.1.0"

__all__ = [
    "CCKDError", "ConfigError", "DegenerateSetError", "DegenerateVectorError", "FeatureWidthError",
    "InvalidArgumentError", "NumericError", "ParseError", "UndefinedMetricError", "ValidationError",
    "Cohort", "load_cohort",
    "LossWeights", "bce_loss", "ckd_loss", "combined_loss", "info_nce",
    "ScoredSet", "auroc", "bootstrap_ci", "evaluate", "threshold_diagnostics",
    "SynthConfig", "generate_cohort", "split_cohort",
    "TrainConfig", "Variant", "run_ablation", "train_student", "train_teacher",
]
