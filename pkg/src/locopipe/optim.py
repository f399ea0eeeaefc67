"""SGD with Nesterov momentum, L2 weight decay, and cosine annealing.

The momentum rule is the lookahead-folded form:

    g' = g + weight_decay * theta
    v  = mu * v + g'
    theta -= lr * (g' + mu * v)

so the parameters always hold the lookahead iterate and no separate
correction pass is needed at read time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MissingGradient, StepOutOfRange
from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    """Cosine annealing from lr0 down to lr_min over total_steps."""

    lr0: float
    lr_min: float = 0.0
    total_steps: int = 1

    def __post_init__(self):
        if self.lr0 < 0 or self.lr_min < 0 or self.lr_min > self.lr0:
            raise ValueError(f"need 0 <= lr_min <= lr0, got {self.lr_min}, {self.lr0}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def cosine_lr(step: int, sched: LrSchedule) -> float:
    """Learning rate at ``step``; lr0 at 0, lr_min at total_steps."""
    if step < 0 or step > sched.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {sched.total_steps}]")
    span = sched.lr0 - sched.lr_min
    return sched.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * step / sched.total_steps))


class OptimizerState:
    """Per-parameter momentum buffers plus the shared hyper-parameters."""

    def __init__(self, params: Sequence[Tensor], mu: float = 0.9,
                 weight_decay: float = 1e-4):
        if not 0.0 <= mu < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {mu}")
        if weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        self.mu = mu
        self.weight_decay = weight_decay
        self.step_count = 0
        self._params = list(params)
        self.momentum_buffers: dict[int, np.ndarray] = {
            id(p): np.zeros_like(p.data) for p in self._params
        }

    def buffer_for(self, param: Tensor) -> np.ndarray:
        try:
            return self.momentum_buffers[id(param)]
        except KeyError:
            raise MissingGradient("parameter was never registered with this state") from None


def sgd_nesterov_step(params: Sequence[Tensor], state: OptimizerState, lr: float) -> None:
    """Apply one update to every parameter in ``params``; gradients are cleared.

    All listed parameters must carry a populated gradient; a partial update
    would silently desynchronise the momentum buffers, so we raise instead.
    """
    for p in params:
        if p.grad is None:
            raise MissingGradient("sgd_nesterov_step on a parameter with no gradient")
    for p in params:
        g = p.grad
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * p.data
        v = state.buffer_for(p)
        v *= state.mu
        v += g
        p.data -= lr * (g + state.mu * v)
        p.grad = None
    state.step_count += 1
