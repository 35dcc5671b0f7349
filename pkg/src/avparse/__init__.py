"""Weakly-supervised audio-visual video parsing at desk scale."""

from .attention import AttentionConfig, FeatureSequence
from .head import PredictionTensor
from .metrics import DenseAnnotation, EventSpan, MetricsReport, full_report
from .model import Model, ModelConfig
from .params import ParamSpec, ParamStore, init_params
from .synth import Dataset, DatasetConfig, SyntheticVideo, generate
from .tensor import Tensor, grad_check
from .train import TrainConfig, evaluate_split, train_model, train_step

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "Dataset",
    "DatasetConfig",
    "DenseAnnotation",
    "EventSpan",
    "FeatureSequence",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "ParamSpec",
    "ParamStore",
    "PredictionTensor",
    "SyntheticVideo",
    "Tensor",
    "TrainConfig",
    "evaluate_split",
    "full_report",
    "generate",
    "grad_check",
    "init_params",
    "train_model",
    "train_step",
    "__version__",
]
