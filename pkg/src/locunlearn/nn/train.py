"""Plain supervised training loop used for original models and the oracle."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..errors import ConfigError
from .model import Model, build_model
from .ops import loss_and_grads
from .optim import OptimizerState, Schedule, masked_sgd_step


@dataclass(frozen=True)
class TrainRecipe:
    epochs: int = 30
    lr: float = 0.05
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "cosine"
    eta_min_frac: float = 0.01

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def steps_per_epoch(self, n: int) -> int:
        return math.ceil(n / self.batch_size)

    def make_schedule(self, n: int) -> Schedule:
        total = max(1, self.epochs * self.steps_per_epoch(n))
        return Schedule(self.schedule, self.lr, self.eta_min_frac, total)

    def to_dict(self) -> dict:
        return asdict(self)


def fit(model: Model, view, recipe: TrainRecipe, seed: int, mask=None, l1_lambda: float = 0.0):
    """Train ``model`` in place on a :class:`~locunlearn.data.DataView`.

    Returns the per-step loss trace.
    """
    schedule = recipe.make_schedule(len(view))
    state = OptimizerState.zeros(model.p, recipe.momentum, recipe.weight_decay)
    trace = []
    step = 0
    for epoch in range(recipe.epochs):
        for x, y in view.batches(recipe.batch_size, seed, epoch):
            loss, grads = loss_and_grads(model, x, y, l1_lambda=l1_lambda)
            masked_sgd_step(model, state, grads, mask, schedule.lr(step))
            trace.append(loss)
            step += 1
    return trace


def train_model(architecture: dict, view, recipe: TrainRecipe, seed: int) -> Model:
    """Fresh seeded init followed by :func:`fit`."""
    model = build_model(architecture, seed=seed)
    fit(model, view, recipe, seed)
    return model

