"""Deterministic mini-batch training with validation-based early stopping."""

import numpy as np
from dataclasses import dataclass, replace as dc_replace

from .model import clone_params, cross_entropy, loss_and_grads
from .optim import init_optimizer, adam_step


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    early_stop_patience: int = 10
    rng_seed: int = 0

    def validate(self, train_size):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.batch_size > train_size:
            raise ValueError(
                f"batch_size {self.batch_size} exceeds training-set size {train_size}"
            )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


def train(model, train_set, val_set, cfg: TrainConfig):
    """Adam-train a copy of `model`; returns (best-val-loss checkpoint, history).

    History holds one (train_loss, val_loss) pair per completed epoch, so its
    length never exceeds cfg.epochs. Identical seed + config + data reproduce
    bitwise-identical parameters.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    cfg.validate(len(train_set))
    if cfg.epochs == 0:
        return model.copy(), []

    xs = np.ascontiguousarray(train_set.features, dtype=model.dtype)
    ys = np.asarray(train_set.labels, dtype=np.int64)
    vx = np.ascontiguousarray(val_set.features, dtype=model.dtype)
    vy = np.asarray(val_set.labels, dtype=np.int64)

    rng = np.random.default_rng(cfg.rng_seed)
    params = clone_params(model.params)
    opt = init_optimizer(params, "adam", cfg.learning_rate)
    work = dc_replace(model, params=params)

    best_loss = np.inf
    best_params = clone_params(params)
    since_best = 0
    history = []

    n = len(xs)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(work, xs[idx], ys[idx])
            params, opt = adam_step(params, grads, opt)
            work = dc_replace(work, params=params)
            batch_losses.append(loss)
        val_loss = cross_entropy(work, vx, vy)
        history.append((float(np.mean(batch_losses)), val_loss))
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = clone_params(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    return dc_replace(model, params=best_params), history
