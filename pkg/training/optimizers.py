"""
Optimizers and Learning-Rate Schedules

Adam with bias correction over named parameters, and a plateau scheduler that
halves the learning rate when the monitored metric stalls.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from engine.tensor import DimensionError, Parameter

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moment buffers per parameter name and the shared step count."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Parameter], grads: Dict[str, Optional[np.ndarray]], state: AdamState) -> None:
    """One Adam update in place. Frozen parameters are skipped; a missing gradient counts as zero."""
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        if param.frozen:
            continue
        value = param.tensor.data
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros(value.shape, dtype=np.float64)
        elif grad.shape != value.shape:
            raise DimensionError('adam_step', name, value.shape, grad.shape)
        grad = grad.astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(value.shape, dtype=np.float64)
            v = np.zeros(value.shape, dtype=np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.tensor.data = (value.astype(np.float64) - update).astype(value.dtype)


class Adam:
    """Adam over a fixed set of named parameters, reading gradients from ``tensor.grad``."""

    def __init__(self, params: Dict[str, Parameter], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self, grads: Optional[Dict[str, Optional[np.ndarray]]] = None) -> None:
        if grads is None:
            grads = {name: p.tensor.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.tensor.zero_grad()


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without strict improvement.

    ``mode='max'`` monitors accuracy, ``mode='min'`` monitors a loss. After a
    decay the patience counter starts over; the best value is kept.
    """

    def __init__(self, optimizer: Optional[Adam] = None, lr: float = 0.001, factor: float = 0.5,
                 patience: int = 10, mode: str = 'max'):
        if mode not in ('max', 'min'):
            raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must lie in (0, 1), got {factor}")
        if patience < 1:
            raise ValueError(f"patience must be positive, got {patience}")
        self.optimizer = optimizer
        self.lr = optimizer.lr if optimizer is not None else lr
        self.factor = factor
        self.patience = patience
        self.mode = mode
        self.best: Optional[float] = None
        self.stale_epochs = 0

    def _improved(self, metric: float) -> bool:
        if self.best is None:
            return True
        return metric > self.best if self.mode == 'max' else metric < self.best

    def step(self, metric: float) -> float:
        """Record one epoch's metric and return the (possibly reduced) learning rate."""
        if not math.isfinite(metric):
            raise ValueError(f"plateau scheduler got a non-finite metric: {metric}")
        if self._improved(metric):
            self.best = metric
            self.stale_epochs = 0
            return self.lr
        self.stale_epochs += 1
        if self.stale_epochs >= self.patience:
            self.lr *= self.factor
            self.stale_epochs = 0
            if self.optimizer is not None:
                self.optimizer.lr = self.lr
            logger.info(f"No improvement for {self.patience} epochs, learning rate now {self.lr:g}")
        return self.lr
