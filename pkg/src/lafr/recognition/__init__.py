"""Embedding backbone, margin losses, center-transfer adaptation and verification."""

from .adapt import (
    RctConfig,
    TrainingLog,
    compute_class_centers,
    finetune_baseline,
    prepare_labels,
    pretrain_backbone,
    rct_adapt,
)
from .backbone import Backbone, init_backbone, load_backbone, save_backbone
from .losses import ClassifierBank, am_softmax_loss, circle_loss, margin_loss
from .verification import (
    VerificationReport,
    evaluate_verification,
    make_pairs,
    pair_scores,
    read_pairs_csv,
    verification_from_scores,
    write_pairs_csv,
)

__all__ = [
    "Backbone",
    "ClassifierBank",
    "RctConfig",
    "TrainingLog",
    "VerificationReport",
    "am_softmax_loss",
    "circle_loss",
    "compute_class_centers",
    "evaluate_verification",
    "finetune_baseline",
    "init_backbone",
    "load_backbone",
    "make_pairs",
    "margin_loss",
    "pair_scores",
    "prepare_labels",
    "pretrain_backbone",
    "rct_adapt",
    "read_pairs_csv",
    "save_backbone",
    "verification_from_scores",
    "write_pairs_csv",
]
