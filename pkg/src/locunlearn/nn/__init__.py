"""Small deterministic numpy engine: layered classifiers, gradients, masked SGD."""
from .checkpoint import (
    checkpoint_bytes,
    load_checkpoint,
    model_digest,
    parse_checkpoint,
    save_checkpoint,
)
from .model import LayerSpec, Model, build_model, init_params
from .ops import finite_diff_grad, forward, loss_and_grads, loss_value, predict
from .optim import (
    OptimizerState,
    Schedule,
    mask_bits,
    masked_sgd_step,
    reinit_params,
    schedule_lr,
)
from .train import TrainRecipe, fit, train_model

__all__ = [
    "LayerSpec",
    "Model",
    "OptimizerState",
    "Schedule",
    "TrainRecipe",
    "build_model",
    "checkpoint_bytes",
    "finite_diff_grad",
    "fit",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_and_grads",
    "loss_value",
    "mask_bits",
    "masked_sgd_step",
    "model_digest",
    "parse_checkpoint",
    "predict",
    "reinit_params",
    "save_checkpoint",
    "schedule_lr",
    "train_model",
]
