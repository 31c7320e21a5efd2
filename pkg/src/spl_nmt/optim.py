"""Adam with linear warmup followed by inverse-square-root decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams


@dataclass(frozen=True)
class OptimConfig:
    learning_rate_peak: float = 3e-3
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9


def inverse_sqrt_lr(step: int, peak: float, warmup: int) -> float:
    """``peak * min(step / warmup, sqrt(warmup / step))`` for 1-based ``step``."""
    if step <= 0:
        return 0.0
    if warmup <= 0:
        return peak / np.sqrt(step)
    return peak * min(step / warmup, np.sqrt(warmup / step))


class Adam:
    def __init__(self, params: ModelParams, cfg: OptimConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v.values) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.values) for k, v in params.items()}

    @property
    def lr(self) -> float:
        return inverse_sqrt_lr(self.t, self.cfg.learning_rate_peak, self.cfg.warmup_steps)

    def step(self) -> None:
        self.t += 1
        c = self.cfg
        lr = self.lr
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)
