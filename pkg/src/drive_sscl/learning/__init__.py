"""
Graph network, contrastive loss, optimizer and training loop.
"""

from .net import GCNModel, GradientTape, ModelParams
from .batching import Batch, BatchBuilder, TrainingSet
from .loss import sscl_loss
from .optim import AdamOptimizer, cosine_lr
from .trainer import Trainer, train_run

__all__ = [
    "GCNModel",
    "GradientTape",
    "ModelParams",
    "Batch",
    "BatchBuilder",
    "TrainingSet",
    "sscl_loss",
    "AdamOptimizer",
    "cosine_lr",
    "Trainer",
    "train_run",
]
