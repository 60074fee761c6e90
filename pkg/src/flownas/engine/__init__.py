"""Numpy trainer and evaluator for the block-wise 1D-CNN search space."""

from .checkpoint import read_weights, write_weights
from .metrics import Metrics, classification_metrics
from .network import backward, forward, init_weights, loss_and_grad
from .train import TrainConfig, TrainResult, evaluate, multi_start_train, train

__all__ = [
    "Metrics", "TrainConfig", "TrainResult", "backward", "classification_metrics",
    "evaluate", "forward", "init_weights", "loss_and_grad", "multi_start_train",
    "read_weights", "train", "write_weights",
]
