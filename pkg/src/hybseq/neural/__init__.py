"""Numpy neural networks with manual backpropagation."""

from .estimators import (CheckpointError, FeatureMLP, YieldCNN, load_checkpoint,
                         save_checkpoint)
from .layers import (BatchNorm, Conv1D, Conv2D, Dense, Dropout, Flatten, Layer,
                     NonFiniteValue, ReLU, ShapeMismatch, Sigmoid, Squeeze)
from .model import BUILDERS, ModelGraph, build_cnn, build_cnn_lite, build_mlp
from .training import (Adam, BCELoss, History, MSELoss, NonFiniteGradient,
                       TrainConfig, gradcheck_layer, gradcheck_loss, predict_batch,
                       train)

__all__ = [
    "Adam", "BCELoss", "BUILDERS", "BatchNorm", "CheckpointError", "Conv1D", "Conv2D",
    "Dense", "Dropout", "FeatureMLP", "Flatten", "History", "Layer", "MSELoss",
    "ModelGraph", "NonFiniteGradient", "NonFiniteValue", "ReLU", "ShapeMismatch",
    "Sigmoid", "Squeeze", "TrainConfig", "YieldCNN", "build_cnn", "build_cnn_lite",
    "build_mlp", "gradcheck_layer", "gradcheck_loss", "load_checkpoint",
    "predict_batch", "save_checkpoint", "train",
]
