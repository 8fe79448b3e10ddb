"""Forward/backward contracts, Adam behavior, training loop, checkpoints."""

import numpy as np
import pytest

from overunlearn.engine import (
    LayerSpec,
    OptimizerState,
    TrainConfig,
    adam_step,
    backward,
    cross_entropy,
    forward,
    init_model,
    init_optimizer,
    load_model,
    predict,
    save_model,
    train,
)

from conftest import unit_box_blobs


def _mlp(input_dim, class_count, hidden=8, seed=0):
    return init_model([LayerSpec("dense", units=hidden), LayerSpec("relu"),
                       LayerSpec("dense", units=class_count),
                       LayerSpec("softmax_output")],
                      (input_dim,), class_count, rng_seed=seed)


def test_zero_weight_model_gives_uniform_rows():
    model = init_model([LayerSpec("dense", units=4), LayerSpec("softmax_output")],
                       (3,), 4, rng_seed=0)
    model.params[0]["w"][:] = 0.0
    model.params[0]["b"][:] = 0.0
    probs = forward(model, np.random.default_rng(0).uniform(0, 1, (5, 3)))
    assert np.allclose(probs, 0.25, atol=1e-15)


def test_forward_shape_propagation():
    model = _mlp(6, 5, seed=1)
    probs = forward(model, np.zeros((3, 6)))
    assert probs.shape == (3, 5)


def test_probability_normalization_over_corpus():
    rng = np.random.default_rng(7)
    for seed in range(5):
        model = _mlp(4, 3, hidden=6, seed=seed)
        x = rng.standard_normal((16, 4)) * (10.0 ** float(rng.integers(-2, 3)))
        probs = forward(model, x)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
        assert probs.min() > 0.0 and probs.max() < 1.0


def test_trained_model_classifies_centroid(trained_toy):
    model, ds = trained_toy
    centroid = ds.features[ds.labels == 0].mean(axis=0)
    assert predict(model, centroid[None])[0] == 0


def test_confident_correct_model_has_tiny_gradients():
    model = _mlp(2, 2, hidden=4, seed=2)
    # saturate the output layer so the true class wins by a huge margin
    model.params[2]["w"][:] = 0.0
    model.params[2]["b"][:] = np.array([60.0, -60.0])
    x = np.random.default_rng(0).uniform(0, 1, (6, 2))
    grads = backward(model, x, np.zeros(6, dtype=int))
    total = sum(float(np.abs(g).sum()) for layer in grads for g in layer.values())
    assert total < 1e-6


def test_duplicated_sample_keeps_mean_gradient():
    model = _mlp(3, 3, seed=3)
    x = np.random.default_rng(1).uniform(0, 1, (1, 3))
    labels = np.array([1])
    single = backward(model, x, labels)
    doubled = backward(model, np.vstack([x, x]), np.array([1, 1]))
    # mean semantics: duplicating the batch reproduces the same gradient
    # (up to BLAS summation order)
    for ls, ld in zip(single, doubled):
        for k in ls:
            np.testing.assert_allclose(ls[k], ld[k], rtol=1e-12, atol=1e-15)


def test_label_out_of_range_rejected():
    model = _mlp(3, 3, seed=4)
    with pytest.raises(ValueError, match="label out of range"):
        backward(model, np.zeros((2, 3)), np.array([0, 3]))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    params = [{"w": np.ones((2, 2)), "b": np.zeros(2)}]
    grads = [{"w": np.zeros((2, 2)), "b": np.zeros(2)}]
    state = init_optimizer(params, "adam", 0.01)
    new_params, new_state = adam_step(params, grads, state)
    assert np.array_equal(new_params[0]["w"], params[0]["w"])
    assert new_state.step_count == 1


def test_adam_constant_gradient_approaches_signed_learning_rate():
    lr = 0.01
    params = [{"w": np.array([1.0, -2.0])}]
    grads = [{"w": np.array([0.3, -0.7])}]
    state = init_optimizer(params, "adam", lr)
    prev = params[0]["w"].copy()
    for _ in range(300):
        params, state = adam_step(params, grads, state)
        step = params[0]["w"] - prev
        prev = params[0]["w"].copy()
    assert np.allclose(np.abs(step), lr, rtol=0.02)
    assert np.all(np.sign(step) == -np.sign(grads[0]["w"]))


def test_adam_step_is_pure():
    params = [{"w": np.ones(3)}]
    grads = [{"w": np.full(3, 0.5)}]
    state = init_optimizer(params, "adam", 1e-3)
    out1, st1 = adam_step(params, grads, state.copy())
    out2, st2 = adam_step(params, grads, state.copy())
    assert np.array_equal(out1[0]["w"], out2[0]["w"])
    assert np.array_equal(st1.m[0]["w"], st2.m[0]["w"])
    assert np.array_equal(params[0]["w"], np.ones(3))  # inputs untouched


def test_optimizer_state_shape_checks():
    params = [{"w": np.ones((2, 2))}]
    grads = [{"w": np.ones(3)}]
    state = init_optimizer(params, "adam", 1e-3)
    with pytest.raises(ValueError):
        adam_step(params, grads, state)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _split_halves(ds):
    n = len(ds)
    return ds.subset(np.arange(0, n, 2)), ds.subset(np.arange(1, n, 2))


def test_training_fits_separable_blobs():
    ds = unit_box_blobs(class_count=2, per_class=80, dim=2, separation=8.0, seed=2)
    tr, val = _split_halves(ds)
    model = _mlp(2, 2, hidden=8, seed=0)
    fitted, history = train(model, tr, val, TrainConfig(
        epochs=30, batch_size=32, learning_rate=5e-3, early_stop_patience=30,
        rng_seed=0))
    preds = predict(fitted, tr.features)
    assert (preds == tr.labels).mean() >= 0.99
    assert len(history) <= 30
    assert history[9][0] < history[0][0]  # loss decreases on separable data


def test_zero_epochs_leaves_model_bitwise_unchanged():
    ds = unit_box_blobs(class_count=2, per_class=10, dim=2, separation=5.0, seed=1)
    tr, val = _split_halves(ds)
    model = _mlp(2, 2, seed=9)
    fitted, history = train(model, tr, val, TrainConfig(epochs=0, batch_size=4,
                                                        rng_seed=0))
    assert history == []
    for la, lb in zip(model.params, fitted.params):
        for k in la:
            assert np.array_equal(la[k], lb[k])


def test_training_is_bitwise_deterministic():
    ds = unit_box_blobs(class_count=3, per_class=30, dim=3, separation=4.0, seed=5)
    tr, val = _split_halves(ds)
    cfg = TrainConfig(epochs=8, batch_size=16, learning_rate=1e-3,
                      early_stop_patience=5, rng_seed=123)
    runs = []
    for _ in range(2):
        model = _mlp(3, 3, seed=42)
        fitted, _ = train(model, tr, val, cfg)
        runs.append(fitted)
    for la, lb in zip(runs[0].params, runs[1].params):
        for k in la:
            assert np.array_equal(la[k], lb[k])


def test_returned_model_is_best_validation_checkpoint():
    ds = unit_box_blobs(class_count=2, per_class=40, dim=2, separation=3.0, seed=8)
    tr, val = _split_halves(ds)
    model = _mlp(2, 2, seed=3)
    fitted, history = train(model, tr, val, TrainConfig(
        epochs=12, batch_size=16, learning_rate=5e-3, early_stop_patience=12,
        rng_seed=7))
    best_val = min(v for _, v in history)
    assert abs(cross_entropy(fitted, val.features, val.labels) - best_val) < 1e-12


def test_batch_size_larger_than_train_set_rejected():
    ds = unit_box_blobs(class_count=2, per_class=5, dim=2, separation=5.0, seed=0)
    tr, val = _split_halves(ds)
    with pytest.raises(ValueError, match="batch_size"):
        train(_mlp(2, 2), tr, val, TrainConfig(epochs=1, batch_size=64))


def test_empty_dataset_rejected(tiny_blobs):
    model = _mlp(2, 3)
    with pytest.raises(ValueError):
        train(model, tiny_blobs.subset([]), tiny_blobs, TrainConfig(epochs=1,
                                                                    batch_size=1))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise(tmp_path):
    model = init_model([LayerSpec("conv2d", filters=3), LayerSpec("relu"),
                        LayerSpec("maxpool2d"), LayerSpec("flatten"),
                        LayerSpec("dense", units=4), LayerSpec("softmax_output")],
                       (6, 6, 2), 4, rng_seed=17)
    save_model(model, tmp_path / "ckpt")
    loaded = load_model(tmp_path / "ckpt")
    assert loaded.input_shape == model.input_shape
    assert loaded.class_count == model.class_count
    assert loaded.rng_seed == model.rng_seed
    assert [s.to_dict() for s in loaded.layers] == [s.to_dict() for s in model.layers]
    for la, lb in zip(model.params, loaded.params):
        assert sorted(la) == sorted(lb)
        for k in la:
            assert np.array_equal(la[k], lb[k])
    x = np.random.default_rng(0).uniform(0, 1, (3, 6, 6, 2))
    assert np.array_equal(forward(model, x), forward(loaded, x))


def test_checkpoint_missing_manifest_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match=str(tmp_path / "nope")):
        load_model(tmp_path / "nope")


def test_checkpoint_blob_size_validated(tmp_path):
    model = _mlp(3, 2, hidden=4, seed=0)
    path = save_model(model, tmp_path / "ckpt")
    blob = path / "layer00_w.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    from overunlearn.engine import CheckpointError
    with pytest.raises(CheckpointError, match="expected"):
        load_model(path)


def test_sgd_step_support():
    from overunlearn.engine import sgd_step
    params = [{"w": np.array([1.0, 2.0])}]
    grads = [{"w": np.array([0.5, -0.5])}]
    state = init_optimizer(params, "sgd", 0.1)
    new_params, new_state = sgd_step(params, grads, state)
    assert np.allclose(new_params[0]["w"], [0.95, 2.05])
    assert new_state.step_count == 1


def test_float32_models_round_trip(tmp_path):
    model = init_model([LayerSpec("dense", units=3), LayerSpec("softmax_output")],
                       (4,), 3, rng_seed=0, dtype=np.float32)
    assert model.params[0]["w"].dtype == np.float32
    probs = forward(model, np.random.default_rng(0).uniform(0, 1, (2, 4)))
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6
    save_model(model, tmp_path / "f32")
    loaded = load_model(tmp_path / "f32")
    assert loaded.params[0]["w"].dtype == np.float32
    assert np.array_equal(loaded.params[0]["w"], model.params[0]["w"])
