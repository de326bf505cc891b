"""SGD with momentum, decoupled-sign updates and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SgdConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    gradient_clip: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not self.gradient_clip > 0:
            raise ValueError("gradient_clip must be positive")


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if not math.isfinite(max_norm) or norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


class SGD:
    """Momentum SGD over a dict of named arrays, updated in place.

    ``sign=+1`` descends the objective whose gradient is passed, ``sign=-1``
    ascends it. Weight decay always shrinks the weights.
    """

    def __init__(self, params: dict[str, np.ndarray], cfg: SgdConfig, names=None):
        self.params = params
        self.cfg = cfg
        self.names = list(names) if names is not None else list(params)
        self.lr = cfg.learning_rate
        self.buffers = {k: np.zeros_like(params[k]) for k in self.names}

    def step(self, grads: dict[str, np.ndarray], sign: int = 1) -> None:
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        grads = {k: grads[k] for k in self.names}
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ValueError(f"gradient for {k!r} has shape {g.shape}, expected {self.params[k].shape}")
        grads = clip_by_global_norm(grads, self.cfg.gradient_clip)
        mu, wd = self.cfg.momentum, self.cfg.weight_decay
        for k, g in grads.items():
            p = self.params[k]
            d = sign * g + wd * p if wd else sign * g
            buf = self.buffers[k]
            buf *= mu
            buf += d
            p -= self.lr * buf


def sgd_step(params, grads, cfg: SgdConfig, sign: int = 1, state: SGD | None = None) -> SGD:
    """Functional wrapper: apply one step, returning the optimizer carrying momentum."""
    opt = state if state is not None else SGD(params, cfg, names=list(grads))
    opt.step(grads, sign)
    return opt


@dataclass
class StepDecay:
    """Multiply the learning rate by ``gamma`` every ``interval`` steps."""

    base_lr: float
    interval: int
    gamma: float = 0.96

    def __call__(self, step: int) -> float:
        if self.interval <= 0:
            return self.base_lr
        return self.base_lr * self.gamma ** (step // self.interval)
