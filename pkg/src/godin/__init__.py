"""Out-of-distribution detection with decomposed confidence and label-free input preprocessing."""

from .deconf import HeadSpec
from .evalkit import DetectionReport, auroc, evaluate, tnr_at_tpr
from .model import Model, load_checkpoint, save_checkpoint
from .netcore import BackboneSpec
from .perturb import perturb, select_epsilon
from .scorer import ScoreFn, fit_mahalanobis, make_score_fn
from .shiftbench import BenchConfig, LabeledSet, generate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "BenchConfig",
    "DetectionReport",
    "HeadSpec",
    "LabeledSet",
    "Model",
    "ScoreFn",
    "TrainConfig",
    "auroc",
    "evaluate",
    "fit_mahalanobis",
    "generate",
    "load_checkpoint",
    "make_score_fn",
    "perturb",
    "save_checkpoint",
    "select_epsilon",
    "tnr_at_tpr",
    "train",
]
