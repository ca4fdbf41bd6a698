"""Unlearning algorithms with optional parameter masks, plus the retrain oracle.

Every algorithm works on a copy of the input model and only ever writes
parameters selected by its effective mask (the given mask, or all
parameters when none is given). Reset+Finetune additionally trains the
classifier layer.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import DataView, batch_positions, concat_datasets
from .errors import ConfigError
from .nn import (
    Model,
    OptimizerState,
    Schedule,
    TrainRecipe,
    loss_and_grads,
    mask_bits,
    masked_sgd_step,
    reinit_params,
    train_model,
)

ALGORITHMS = (
    "rft",
    "finetune",
    "neggrad",
    "neggrad_plus",
    "random_label",
    "l1_sparse",
    "retrain_oracle",
)

# schedule kind and eta_min fraction per algorithm
_SCHEDULES = {
    "rft": ("cosine", 0.01),
    "finetune": ("cosine", 0.01),
    "l1_sparse": ("cosine", 0.01),
    "random_label": ("cosine", 0.5),
    "neggrad": ("constant", 0.0),
    "neggrad_plus": ("constant", 0.0),
    "retrain_oracle": ("cosine", 0.01),
}


@dataclass(frozen=True)
class UnlearnConfig:
    algorithm: str = "rft"
    epochs: int = 5
    lr: float = 0.01
    schedule: str | None = None
    eta_min_frac: float | None = None
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0
    l1_lambda: float = 0.0
    beta: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown unlearning algorithm {self.algorithm!r}")
        kind, frac = _SCHEDULES[self.algorithm]
        if self.schedule is None:
            object.__setattr__(self, "schedule", kind)
        if self.eta_min_frac is None:
            object.__setattr__(self, "eta_min_frac", frac)
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.algorithm == "l1_sparse":
            if self.l1_lambda <= 0:
                raise ConfigError("l1_sparse needs l1_lambda > 0")
        elif self.l1_lambda:
            raise ConfigError(f"l1_lambda is only valid for l1_sparse, not {self.algorithm}")
        if not 0 < self.beta <= 1:
            raise ConfigError("beta must be in (0, 1]")

    def make_schedule(self, total_steps: int) -> Schedule:
        return Schedule(self.schedule, self.lr, self.eta_min_frac, max(1, total_steps))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class UnlearnOutcome:
    model: Model
    steps_taken: int
    loss_trace: list
    config_echo: UnlearnConfig
    wall_time: float
    update_mask: np.ndarray | None = None


def _descend(model: Model, bits, cfg: UnlearnConfig, n: int, batch_grad):
    """Masked SGD over ``cfg.epochs`` shuffled passes of ``n`` examples.

    ``batch_grad(positions, step)`` returns ``(loss, grads)``.
    """
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    sched = cfg.make_schedule(cfg.epochs * steps_per_epoch)
    state = OptimizerState.zeros(model.p, cfg.momentum, cfg.weight_decay)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        for pos in batch_positions(n, cfg.batch_size, cfg.seed, epoch):
            loss, grads = batch_grad(pos, step)
            masked_sgd_step(model, state, grads, bits, sched.lr(step))
            trace.append(loss)
            step += 1
    return step, trace


def _outcome(model, steps, trace, cfg, started, bits):
    return UnlearnOutcome(model, steps, trace, cfg, time.perf_counter() - started, bits)


def finetune(model: Model, mask, retain: DataView, cfg: UnlearnConfig) -> UnlearnOutcome:
    """Descent on the retain set only."""
    started = time.perf_counter()
    model = model.copy()
    bits = mask_bits(mask, model.p)

    def grad(pos, step):
        x, y = retain.take(pos)
        return loss_and_grads(model, x, y, l1_lambda=cfg.l1_lambda)

    steps, trace = _descend(model, bits, cfg, len(retain), grad)
    return _outcome(model, steps, trace, cfg, started, bits)


def l1_sparse(model: Model, mask, retain: DataView, cfg: UnlearnConfig) -> UnlearnOutcome:
    """Finetune with an L1 penalty over all parameters."""
    if cfg.l1_lambda <= 0:
        raise ConfigError("l1_sparse needs l1_lambda > 0")
    return finetune(model, mask, retain, cfg)


def neggrad(model: Model, mask, forget: DataView, cfg: UnlearnConfig) -> UnlearnOutcome:
    """Gradient ascent on the forget-set loss."""
    started = time.perf_counter()
    model = model.copy()
    bits = mask_bits(mask, model.p)

    def grad(pos, step):
        x, y = forget.take(pos)
        return loss_and_grads(model, x, y, negate=True)

    steps, trace = _descend(model, bits, cfg, len(forget), grad)
    return _outcome(model, steps, trace, cfg, started, bits)


def _cycling_batches(n: int, batch_size: int, seed: int):
    cycle = 0
    while True:
        for pos in batch_positions(n, batch_size, seed, 10_000 + cycle):
            yield pos
        cycle += 1


def neggrad_plus(model: Model, mask, retain: DataView, forget: DataView,
                 cfg: UnlearnConfig) -> UnlearnOutcome:
    """Each step: beta * grad(retain batch) - (1 - beta) * grad(forget batch).

    An epoch is one pass over the retain set; forget batches cycle.
    """
    if len(retain) == 0 or len(forget) == 0:
        raise ConfigError("neggrad_plus needs non-empty retain and forget sets")
    started = time.perf_counter()
    model = model.copy()
    bits = mask_bits(mask, model.p)
    forget_iter = _cycling_batches(len(forget), cfg.batch_size, cfg.seed)
    beta = cfg.beta

    def grad(pos, step):
        xr, yr = retain.take(pos)
        loss_r, g_r = loss_and_grads(model, xr, yr)
        if beta == 1:
            return loss_r, g_r
        xf, yf = forget.take(next(forget_iter))
        loss_f, g_f = loss_and_grads(model, xf, yf)
        return beta * loss_r - (1 - beta) * loss_f, beta * g_r - (1 - beta) * g_f

    steps, trace = _descend(model, bits, cfg, len(retain), grad)
    return _outcome(model, steps, trace, cfg, started, bits)


def relabel(labels, num_classes: int, seed: int) -> np.ndarray:
    """Replace each label by a uniformly drawn different class."""
    if num_classes < 2:
        raise ConfigError("random relabelling needs at least 2 classes")
    labels = np.asarray(labels, dtype=np.int64)
    shift = np.random.default_rng(seed).integers(1, num_classes, size=labels.shape[0])
    return (labels + shift) % num_classes


def random_label(model: Model, mask, retain: DataView, forget: DataView,
                 cfg: UnlearnConfig) -> UnlearnOutcome:
    """Relabel the forget set once, then descend on retain plus relabelled forget."""
    c = retain.num_classes
    if c < 2:
        raise ConfigError("random_label needs at least 2 classes")
    xf, yf = forget.take()
    mixed = concat_datasets([retain.take(), (xf, relabel(yf, c, cfg.seed))], c, "random-label")
    return finetune(model, mask, DataView(mixed), cfg)


def reset_finetune(model: Model, mask, retain: DataView, cfg: UnlearnConfig) -> UnlearnOutcome:
    """Reinitialize masked parameters, then finetune them and the classifier on retain."""
    if mask is None:
        raise ConfigError("reset_finetune requires a mask")
    started = time.perf_counter()
    bits = mask_bits(mask, model.p)
    fresh = reinit_params(model, bits, cfg.seed)
    update = bits | model.classifier_bits()
    out = finetune(fresh, update, retain, cfg)
    out.wall_time = time.perf_counter() - started
    return out


def oracle_recipe(original: TrainRecipe, epochs: int | None = None,
                  lr: float | None = None) -> TrainRecipe:
    """Original recipe with epochs divided by 2.5 and the learning rate halved."""
    return replace(
        original,
        epochs=max(1, round(original.epochs / 2.5)) if epochs is None else epochs,
        lr=original.lr / 2 if lr is None else lr,
    )


def retrain_oracle(retain: DataView, architecture: dict, recipe: TrainRecipe, seed: int) -> Model:
    """Train from a fresh seeded init on the retain set only."""
    return train_model(architecture, retain, recipe, seed)


def run_algorithm(model: Model, cfg: UnlearnConfig, retain: DataView, forget: DataView,
                  mask=None) -> UnlearnOutcome:
    """Dispatch on ``cfg.algorithm`` (everything except the oracle)."""
    a = cfg.algorithm
    if a == "rft":
        return reset_finetune(model, mask, retain, cfg)
    if a == "finetune":
        return finetune(model, mask, retain, cfg)
    if a == "l1_sparse":
        return l1_sparse(model, mask, retain, cfg)
    if a == "neggrad":
        return neggrad(model, mask, forget, cfg)
    if a == "neggrad_plus":
        return neggrad_plus(model, mask, retain, forget, cfg)
    if a == "random_label":
        return random_label(model, mask, retain, forget, cfg)
    raise ConfigError(f"{a} is not a post-hoc unlearning algorithm")
