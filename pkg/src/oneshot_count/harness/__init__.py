"""Training, evaluation, checkpoints and the command line interface."""

from .checkpoint import Checkpoint
from .metrics import Metrics, counting_metrics
from .train import (ABLATION_ARMS, TrainingError, TrainResult, ablate, evaluate, mean_baseline, predict,
                    sample_loss, train)

__all__ = ["ABLATION_ARMS", "Checkpoint", "Metrics", "TrainResult", "TrainingError", "ablate", "counting_metrics",
           "evaluate", "mean_baseline", "predict", "sample_loss", "train"]
