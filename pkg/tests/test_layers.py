"""Per-layer gradient checks against central finite differences, plus shape
inference and initialization behavior."""

import numpy as np
import pytest

from overunlearn.engine import LayerSpec, ShapeMismatch, backward, forward, init_model
from overunlearn.engine.layers import infer_output_shape

from conftest import central_diff_param_grads, max_relative_error

GRAD_TOL = 1e-4


def _check_stack(layers, input_shape, class_count, seed, n=4, input_kind="uniform"):
    model = init_model(layers, input_shape, class_count, rng_seed=seed)
    rng = np.random.default_rng(seed + 1000)
    if input_kind == "uniform":
        x = rng.uniform(0.0, 1.0, (n,) + tuple(input_shape))
    else:
        x = rng.standard_normal((n,) + tuple(input_shape))
    labels = rng.integers(0, class_count, n)
    analytic = backward(model, x, labels)
    numeric = central_diff_param_grads(model, x, labels)
    assert max_relative_error(analytic, numeric) < GRAD_TOL
    return model, x


def test_dense_relu_stack_gradients():
    _check_stack([LayerSpec("dense", units=7), LayerSpec("relu"),
                  LayerSpec("dense", units=3), LayerSpec("softmax_output")],
                 (5,), 3, seed=0)


def test_conv_relu_stack_gradients():
    _check_stack([LayerSpec("conv2d", filters=3), LayerSpec("relu"),
                  LayerSpec("flatten"), LayerSpec("dense", units=3),
                  LayerSpec("softmax_output")],
                 (5, 5, 2), 3, seed=1)


def test_strided_conv_gradients():
    _check_stack([LayerSpec("conv2d", filters=2, strides=2), LayerSpec("flatten"),
                  LayerSpec("dense", units=3), LayerSpec("softmax_output")],
                 (5, 5, 2), 3, seed=2)


def test_maxpool_gradients():
    # continuous random input, no preceding relu, so pooling ties have measure zero
    _check_stack([LayerSpec("conv2d", filters=2), LayerSpec("maxpool2d"),
                  LayerSpec("flatten"), LayerSpec("dense", units=3),
                  LayerSpec("softmax_output")],
                 (6, 6, 1), 3, seed=3, input_kind="normal")


def test_residual_block_gradients():
    _check_stack([LayerSpec("conv2d", filters=3), LayerSpec("residual_block", filters=3),
                  LayerSpec("flatten"), LayerSpec("dense", units=3),
                  LayerSpec("softmax_output")],
                 (5, 5, 2), 3, seed=4)


def test_residual_downsample_gradients():
    _check_stack([LayerSpec("residual_block", filters=4, downsample=True),
                  LayerSpec("flatten"), LayerSpec("dense", units=3),
                  LayerSpec("softmax_output")],
                 (6, 6, 2), 3, seed=5)


# fixed draws chosen away from relu kinks, where the central difference of a
# piecewise-linear activation is meaningless
@pytest.mark.parametrize("seed", [10, 13, 14, 15])
def test_randomized_combined_stacks(seed):
    _check_stack([LayerSpec("conv2d", filters=2), LayerSpec("relu"),
                  LayerSpec("conv2d", filters=3), LayerSpec("relu"),
                  LayerSpec("flatten"), LayerSpec("dense", units=6),
                  LayerSpec("relu"), LayerSpec("dense", units=4),
                  LayerSpec("softmax_output")],
                 (5, 5, 1), 4, seed=seed)


def test_shape_inference_same_padding():
    assert infer_output_shape(LayerSpec("conv2d", filters=8), (32, 32, 3)) == (32, 32, 8)
    assert infer_output_shape(LayerSpec("conv2d", filters=4, strides=2),
                              (32, 32, 3)) == (16, 16, 4)
    assert infer_output_shape(LayerSpec("maxpool2d"), (7, 7, 4)) == (3, 3, 4)
    assert infer_output_shape(LayerSpec("flatten"), (4, 4, 2)) == (32,)
    assert infer_output_shape(LayerSpec("residual_block", filters=8, downsample=True),
                              (8, 8, 4)) == (4, 4, 8)


def test_shape_inference_rejects_bad_stacks():
    with pytest.raises(ShapeMismatch):
        infer_output_shape(LayerSpec("dense", units=4), (5, 5, 2))
    with pytest.raises(ShapeMismatch):
        infer_output_shape(LayerSpec("residual_block", filters=9), (5, 5, 2))


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("dense")
    with pytest.raises(ValueError):
        LayerSpec("conv2d", filters=2, kernel_size=0)
    with pytest.raises(ValueError):
        LayerSpec("unknown_kind")


def test_forward_rejects_wrong_input_shape():
    model = init_model([LayerSpec("dense", units=3), LayerSpec("softmax_output")],
                       (4,), 3, rng_seed=0)
    with pytest.raises(ShapeMismatch) as err:
        forward(model, np.zeros((2, 5)))
    assert err.value.expected == ("N", 4)
    assert err.value.actual == (2, 5)
