"""
drive-sscl - ego-vehicle action recognition from tracked objects

Builds spatio-temporal graphs from multi-object tracking output, measures
clip-to-clip distance by object instance association (SOIA), and trains a
graph network with semi-supervised contrastive learning.
"""

__version__ = "0.1.0"

from .pipeline import DriveSceneProcessor
from .models import (
    DataConfig,
    EvalConfig,
    GraphConfig,
    LearningMode,
    ModelConfig,
    RunConfig,
    TrackedClip,
    TrainConfig,
)
from .exceptions import ConfigurationError, DataError, DriveSSCLError

__all__ = [
    "DriveSceneProcessor",
    "DataConfig",
    "EvalConfig",
    "GraphConfig",
    "LearningMode",
    "ModelConfig",
    "RunConfig",
    "TrackedClip",
    "TrainConfig",
    "DriveSSCLError",
    "ConfigurationError",
    "DataError",
]
