"""Adam-family optimizer with optional decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, UsageError


class AdamW:
    """Adam with decoupled weight decay; set ``decoupled=False`` for the
    classic coupled (L2-style) variant used with the hierarchical backbone.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4, decoupled: bool = True):
        if lr <= 0:
            raise UsageError("learning rate must be positive")
        self.params: list[Tensor] = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise UsageError("parameter has no gradient; run backward first")
            g = p.grad
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay and self.decoupled:
                p.data *= 1.0 - self.lr * self.weight_decay
            mhat = m / bc1
            vhat = v / bc2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Adam(AdamW):
    """Coupled-weight-decay Adam (hierarchical-backbone recipe)."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        super().__init__(params, lr, betas, eps, weight_decay, decoupled=False)


class StepDecay:
    """Multiply the learning rate by ``factor`` once, at ``at_fraction`` of
    the full run (the training schedule drops x0.1 at 80%)."""

    def __init__(self, optimizer: AdamW, total_steps: int, at_fraction: float = 0.8,
                 factor: float = 0.1):
        self.optimizer = optimizer
        self.drop_step = max(1, int(round(total_steps * at_fraction)))
        self.factor = factor
        self._dropped = False

    def after_step(self, step: int) -> None:
        if not self._dropped and step >= self.drop_step:
            self.optimizer.lr *= self.factor
            self._dropped = True
