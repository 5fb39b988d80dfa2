import math
from typing import Dict

import numpy as np

from .tensor import Tensor


class CosineSchedule:
    """Linear warm-up to `peak_lr`, then cosine decay to `min_lr` at `total_steps`."""

    def __init__(self, peak_lr: float, warmup_steps: int, total_steps: int, min_lr: float = 0.0):
        self.peak_lr = peak_lr
        self.warmup_steps = max(0, warmup_steps)
        self.total_steps = max(1, total_steps)
        self.min_lr = min_lr

    def lr(self, step: int) -> float:
        if self.warmup_steps and step < self.warmup_steps:
            return self.peak_lr * (step + 1) / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        return self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(params: Dict[str, Tensor], max_norm: float) -> float:
    """Scale grads in place so their global L2 norm is at most max_norm; returns the norm before clipping."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            g *= factor
    return total


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(
        self,
        params: Dict[str, Tensor],
        betas=(0.9, 0.98),
        eps: float = 1e-9,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float, grad_scale: float = 1.0) -> None:
        self.steps += 1
        bias1 = 1.0 - self.beta1**self.steps
        bias2 = 1.0 - self.beta2**self.steps
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
