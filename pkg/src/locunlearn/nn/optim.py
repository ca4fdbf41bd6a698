"""Masked momentum SGD, learning-rate schedules and parameter reinitialization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError
from .model import Model, init_params


def mask_bits(mask, p: int) -> np.ndarray:
    """Normalize ``None`` / bool array / object with ``.bits`` to a bool vector."""
    if mask is None:
        return np.ones(p, dtype=bool)
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if bits.shape != (p,):
        raise DimensionError(f"mask has shape {bits.shape}, expected ({p},)")
    return bits


@dataclass
class OptimizerState:
    velocity: np.ndarray
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    @classmethod
    def zeros(cls, p: int, momentum: float = 0.9, weight_decay: float = 0.0) -> "OptimizerState":
        return cls(np.zeros(p, dtype=np.float32), momentum, weight_decay)


def masked_sgd_step(model: Model, state: OptimizerState, grads, mask, lr: float):
    """One in-place momentum SGD step restricted to ``mask``.

    Entries outside the mask are never written, so they stay bit-identical;
    their velocity is left untouched as well.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    p = model.p
    grads = np.asarray(grads)
    if grads.shape != (p,) or state.velocity.shape != (p,):
        raise DimensionError("grads and velocity must have length p")
    bits = mask_bits(mask, p)
    idx = np.flatnonzero(bits)
    theta = model.params[idx]
    g = grads[idx].astype(np.float32)
    if state.weight_decay:
        g = g + np.float32(state.weight_decay) * theta
    v = np.float32(state.momentum) * state.velocity[idx] + g
    state.velocity[idx] = v
    model.params[idx] = theta - np.float32(lr) * v
    return model, state


@dataclass(frozen=True)
class Schedule:
    kind: str = "cosine"
    lr_init: float = 0.1
    eta_min_frac: float = 0.01
    total_steps: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be > 0")
        if not 0 <= self.eta_min_frac <= 1:
            raise ConfigError("eta_min_frac must be in [0, 1]")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be a positive integer")

    def lr(self, step: int) -> float:
        return schedule_lr(self, step)


def schedule_lr(sched: Schedule, step: int) -> float:
    """Learning rate at ``step``; cosine annealing clamps to eta_min past the end."""
    if sched.kind == "constant":
        return sched.lr_init
    eta_min = sched.eta_min_frac * sched.lr_init
    step = min(max(step, 0), sched.total_steps)
    cos = (1 + math.cos(math.pi * step / sched.total_steps)) / 2
    return eta_min + (sched.lr_init - eta_min) * cos


def reinit_params(model: Model, mask, seed: int) -> Model:
    """Return a copy of ``model`` with masked parameters redrawn from the init distribution."""
    bits = mask_bits(mask, model.p)
    fresh = init_params(model, np.random.default_rng(seed))
    out = model.copy()
    out.params[bits] = fresh[bits]
    return out
