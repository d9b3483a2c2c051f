"""
Adam optimizer and cosine-annealed learning rate.
"""

import math
from typing import Dict, Optional

import numpy as np

from ..exceptions import OptimizationError
from .net import GradientTape, ModelParams

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class AdamState:
    """First/second moment estimates and the step counter."""

    def __init__(self, params: ModelParams):
        self.m: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}
        self.v: Dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(
    params: ModelParams,
    tape: GradientTape,
    lr: float,
    state: AdamState,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
) -> ModelParams:
    """One bias-corrected Adam update, applied in place and returned."""
    for name, grad in tape.grads.items():
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(f"non-finite gradient in tensor '{name}'")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, grad in tape.grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float = 0.0) -> float:
    if total_steps <= 0:
        return lr_init
    step = min(max(step, 0), total_steps)
    return lr_min + (lr_init - lr_min) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class CosineAnnealingSchedule:
    """Learning rate as a function of the global step."""

    def __init__(self, total_steps: int, lr_init: float, lr_min: float = 0.0):
        self.total_steps = total_steps
        self.lr_init = lr_init
        self.lr_min = lr_min

    def __call__(self, step: int) -> float:
        return cosine_lr(step, self.total_steps, self.lr_init, self.lr_min)


class AdamOptimizer:
    def __init__(self, params: ModelParams, state: Optional[AdamState] = None):
        self.state = state or AdamState(params)

    def step(self, params: ModelParams, tape: GradientTape, lr: float) -> ModelParams:
        return adam_step(params, tape, lr, self.state)
