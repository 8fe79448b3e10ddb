"""Shared fixtures and independent numeric oracles used across the suite."""

import numpy as np
import pytest

from overunlearn.data import Dataset, synth_blobs, affine_rescale
from overunlearn.engine import LayerSpec, TrainConfig, cross_entropy, init_model, train


def central_diff_param_grads(model, batch, labels, h=1e-5):
    """Independent central finite-difference oracle for parameter gradients."""
    grads = []
    for layer_params in model.params:
        layer_grads = {}
        for name, arr in layer_params.items():
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = cross_entropy(model, batch, labels)
                arr[idx] = orig - h
                lm = cross_entropy(model, batch, labels)
                arr[idx] = orig
                g[idx] = (lp - lm) / (2 * h)
            layer_grads[name] = g
        grads.append(layer_grads)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for la, ln in zip(analytic, numeric):
        for k in ln:
            a, n = la[k], ln[k]
            rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(rel.max()))
    return worst


def unit_box_blobs(class_count=3, per_class=60, dim=8, separation=2.0, seed=0):
    """Blobs rescaled into [0, 1] the same way the pipeline does it."""
    ds = synth_blobs(class_count, per_class, dim, separation, seed)
    bound = separation + 4.0
    return affine_rescale(ds, -bound, bound)


@pytest.fixture
def tiny_blobs():
    return unit_box_blobs(class_count=3, per_class=40, dim=2, separation=5.0, seed=3)


@pytest.fixture
def small_mlp_factory():
    def make(input_dim, class_count, hidden=12, seed=0):
        layers = [LayerSpec("dense", units=hidden), LayerSpec("relu"),
                  LayerSpec("dense", units=class_count), LayerSpec("softmax_output")]
        return init_model(layers, (input_dim,), class_count, rng_seed=seed)
    return make


@pytest.fixture
def trained_toy(small_mlp_factory):
    """A 2-class model trained to high accuracy on well-separated blobs."""
    ds = unit_box_blobs(class_count=2, per_class=80, dim=2, separation=6.0, seed=11)
    model = small_mlp_factory(2, 2, hidden=8, seed=1)
    cfg = TrainConfig(epochs=30, batch_size=32, learning_rate=5e-3,
                      early_stop_patience=30, rng_seed=5)
    n = len(ds)
    train_ds = ds.subset(np.arange(0, n, 2))
    val_ds = ds.subset(np.arange(1, n, 2))
    fitted, _ = train(model, train_ds, val_ds, cfg)
    return fitted, ds


def nearest_centroid_accuracy(ds: Dataset, centroids):
    """Linear-classifier oracle: assign to the closest fixed centroid."""
    flat = ds.features.reshape(len(ds), -1)
    d2 = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == ds.labels).mean())
