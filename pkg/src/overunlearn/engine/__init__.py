"""Minimal deterministic neural-network engine (numpy-backed)."""

from .layers import LayerSpec, ShapeMismatch, infer_output_shape, softmax
from .model import (
    ModelState,
    backward,
    clone_params,
    cross_entropy,
    forward,
    init_model,
    loss_and_grads,
    predict,
)
from .optim import OptimizerState, adam_step, init_optimizer, optimizer_step, sgd_step
from .train import TrainConfig, train
from .checkpoint import CheckpointError, load_model, save_model

__all__ = [
    "LayerSpec",
    "ShapeMismatch",
    "ModelState",
    "OptimizerState",
    "TrainConfig",
    "CheckpointError",
    "infer_output_shape",
    "softmax",
    "forward",
    "predict",
    "backward",
    "cross_entropy",
    "loss_and_grads",
    "clone_params",
    "init_model",
    "init_optimizer",
    "adam_step",
    "sgd_step",
    "optimizer_step",
    "train",
    "save_model",
    "load_model",
]
