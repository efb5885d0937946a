"""Depth-aware mesh regression with flow-based residual supervision.

A dual-stream (image + pseudo-depth) attention encoder with gated fusion
feeds a mesh regressor; a coupling-flow residual log-likelihood loss,
a silhouette decoder, and masked token modeling refine training. Everything
runs on a built-in synthetic articulated-body dataset with a deterministic
Adam loop and standard pose metrics.
"""

from .config import TrainConfig, load_config, parse_config
from .errors import (AlignmentError, ConfigurationError, DomainError,
                     EvaluationError, MeshflowError, ShapeError)
from .model import Model
from .objective import LossWeights, MetricsReport
from .scenes import Scene, synth_scene
from .tensor import Tape, Tensor, grad_check
from .training import Adam, ablate, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "AlignmentError", "ConfigurationError", "DomainError",
    "EvaluationError", "LossWeights", "MeshflowError", "MetricsReport", "Model",
    "Scene", "ShapeError", "Tape", "Tensor", "TrainConfig", "ablate", "evaluate",
    "grad_check", "load_checkpoint", "load_config", "parse_config",
    "save_checkpoint", "synth_scene", "train", "__version__",
]
