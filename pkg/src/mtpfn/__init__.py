"""Multitask prior-data fitted network for tabular classification."""

__version__ = "0.1.0"

from .estimator import MultitaskPFNClassifier
from .inference import TaskPredictions, predict, predict_ensembled
from .model import ModelConfig, ModelParameters
from .prior import PriorConfig, SyntheticDataset, sample_batch, sample_dataset
from .training import TrainConfig, train

__all__ = [
    "MultitaskPFNClassifier", "ModelConfig", "ModelParameters", "PriorConfig",
    "SyntheticDataset", "TaskPredictions", "TrainConfig", "predict", "predict_ensembled",
    "sample_batch", "sample_dataset", "train",
]
