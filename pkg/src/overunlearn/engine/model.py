"""Model container plus forward / backward / loss entry points.

A model is an ordered stack of LayerSpecs ending in a softmax_output layer,
with one parameter dict per layer. Forward returns class probabilities; the
loss is mean cross-entropy over the batch (sum-form callers scale by batch
size themselves).
"""

import numpy as np
from dataclasses import dataclass, field

from .layers import (
    LayerSpec,
    ShapeMismatch,
    infer_output_shape,
    init_params,
    layer_backward,
    layer_forward,
)


@dataclass
class ModelState:
    layers: list
    params: list
    input_shape: tuple
    class_count: int
    rng_seed: int
    dtype: object = field(default=np.float64)

    def copy(self):
        return ModelState(
            layers=list(self.layers),
            params=clone_params(self.params),
            input_shape=tuple(self.input_shape),
            class_count=self.class_count,
            rng_seed=self.rng_seed,
            dtype=self.dtype,
        )


def clone_params(params):
    return [{k: v.copy() for k, v in layer.items()} for layer in params]


def init_model(layers, input_shape, class_count, rng_seed, dtype=np.float64):
    """Seeded He-uniform init; validates the stack ends in softmax over C classes."""
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    layers = list(layers)
    if not layers or layers[-1].kind != "softmax_output":
        raise ValueError("last layer must be softmax_output")
    rng = np.random.default_rng(rng_seed)
    params = []
    shape = tuple(input_shape)
    for spec in layers:
        params.append(init_params(spec, shape, rng, dtype))
        shape = infer_output_shape(spec, shape)
    if shape != (class_count,):
        raise ShapeMismatch((class_count,), shape, "model output")
    return ModelState(layers, params, tuple(input_shape), class_count, rng_seed, dtype)


def _check_batch(model, batch):
    if batch.ndim != len(model.input_shape) + 1 or batch.shape[1:] != model.input_shape:
        raise ShapeMismatch(("N",) + model.input_shape, batch.shape, "model input")


def _forward_logits(model, batch):
    """Run all layers up to (not including) the softmax head, keeping caches."""
    _check_batch(model, batch)
    x = np.ascontiguousarray(batch, dtype=model.dtype)
    caches = []
    for spec, p in zip(model.layers[:-1], model.params[:-1]):
        x, cache = layer_forward(spec, p, x)
        caches.append(cache)
    return x, caches


def forward(model, batch):
    """Class probabilities, shape [N, class_count]; rows sum to 1."""
    logits, _ = _forward_logits(model, batch)
    out, _ = layer_forward(model.layers[-1], model.params[-1], logits)
    return out


def predict(model, batch):
    logits, _ = _forward_logits(model, batch)
    return logits.argmax(axis=1)


def _check_labels(labels, class_count):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError(
            f"label out of range [0, {class_count}): found {labels.min()}..{labels.max()}"
        )
    return labels


def _log_softmax(z):
    zs = z - z.max(axis=1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def cross_entropy(model, batch, labels):
    """Mean cross-entropy of the batch under the current parameters."""
    labels = _check_labels(labels, model.class_count)
    logits, _ = _forward_logits(model, batch)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def loss_and_grads(model, batch, labels):
    """Mean cross-entropy plus per-layer parameter gradients (same shapes)."""
    labels = _check_labels(labels, model.class_count)
    logits, caches = _forward_logits(model, batch)
    n = logits.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = [dict() for _ in model.layers]
    dy = dlogits
    for i in range(len(model.layers) - 2, -1, -1):
        dy, g = layer_backward(model.layers[i], model.params[i], caches[i], dy)
        grads[i] = g
    return loss, grads


def backward(model, batch, labels):
    """Parameter gradients of the mean cross-entropy loss."""
    _, grads = loss_and_grads(model, batch, labels)
    return grads
