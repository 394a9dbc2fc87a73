"""Adam with global-norm clipping and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor


def cosine_lr(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup from 0 to ``peak``, then half-cosine decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min(max((step - warmup_steps) / span, 0.0), 1.0)
    return 0.5 * peak * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    grad_clip_norm: float | None = 1.0


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return list(grads)
    scale = max_norm / total
    return [g * scale for g in grads]


class Adam:
    """Adam with bias correction.  Gradients are clipped before the moments see them."""

    def __init__(self, params: Sequence[Tensor], cfg: AdamConfig = AdamConfig()):
        self.params = list(params)
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        cfg = self.cfg
        if cfg.grad_clip_norm is not None:
            grads = clip_global_norm(grads, cfg.grad_clip_norm)
        self.t += 1
        c1 = 1.0 - cfg.beta1 ** self.t
        c2 = 1.0 - cfg.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g
            update = lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + cfg.eps)
            # rebind rather than mutate so arrays captured by old graphs stay valid
            p.data = p.data - update


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: Adam | None,
              cfg: AdamConfig = AdamConfig(), lr: float = 1e-3) -> Adam:
    """Functional form: apply one update and return the (possibly new) optimizer state."""
    state = Adam(params, cfg) if state is None else state
    state.step(grads, lr)
    return state
