import struct

import numpy as np
import pytest

from quap.data import Dataset
from quap.errors import DivergenceError, ParseError, ShapeError
from quap.oracle import (
    ClassifierOracle,
    DenseLayer,
    FeedForwardModel,
    forward,
    init_model,
    load_model,
    loss_and_gradients,
    model_from_bytes,
    model_to_bytes,
    save_model,
    train_reference,
)


def random_model(rng, sizes, input_shape=None):
    return init_model(sizes, rng, input_shape)


def matmul_oracle(model, x):
    """Second implementation: explicit per-row dot products."""
    rows = []
    for v in np.asarray(x, float).reshape(len(x), -1):
        h = list(v)
        for layer in model.layers:
            w, b = layer.weight, layer.bias
            h = [sum(h[i] * w[i, j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
            if layer.activation == "relu":
                h = [max(t, 0.0) for t in h]
        rows.append(h)
    return np.array(rows)


# ---------------------------------------------------------------- forward


def test_zero_weights_return_the_bias(rng):
    b = np.array([0.5, -1.0, 2.0])
    model = FeedForwardModel([DenseLayer(np.zeros((4, 3)), b, "identity")])
    np.testing.assert_array_equal(forward(model, rng.random((5, 4))), np.tile(b, (5, 1)))


def test_identity_layer_returns_the_flattened_input(rng):
    model = FeedForwardModel([DenseLayer(np.eye(12), np.zeros(12), "identity")], (2, 2, 3))
    x = rng.random((2, 2, 3))
    np.testing.assert_array_equal(forward(model, x), x.reshape(-1))


def test_two_layer_model_matches_dual_implementation(rng):
    model = random_model(rng, [10, 7, 4])
    x = rng.random((6, 10))
    np.testing.assert_allclose(forward(model, x), matmul_oracle(model, x), rtol=1e-10)


def test_shape_mismatch():
    model = FeedForwardModel([DenseLayer(np.eye(4), np.zeros(4), "identity")])
    with pytest.raises(ShapeError):
        forward(model, np.zeros((2, 5)))


def test_layer_chain_and_final_activation_are_validated():
    with pytest.raises(ShapeError):
        FeedForwardModel([DenseLayer(np.zeros((3, 4)), np.zeros(4)), DenseLayer(np.zeros((5, 2)), np.zeros(2), "identity")])
    with pytest.raises(ShapeError):
        FeedForwardModel([DenseLayer(np.zeros((3, 4)), np.zeros(4), "relu")])
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((3, 4)), np.zeros(4), "tanh")


# ---------------------------------------------------------------- oracle


def test_oracle_is_deterministic_and_counts(rng):
    oracle = ClassifierOracle(random_model(rng, [8, 6, 3]))
    x = rng.random((1, 8))
    first = oracle(x)
    for _ in range(99):
        assert oracle(x).tobytes() == first.tobytes()
    assert oracle.query_counter == 100
    oracle(rng.random((7, 8)))
    assert oracle.query_counter == 107


def test_oracle_rejects_malformed_behaviour():
    oracle = ClassifierOracle(lambda x: np.zeros(3))
    with pytest.raises(ShapeError):
        oracle(np.zeros((2, 4)))
    assert oracle.query_counter == 0


# ---------------------------------------------------------------- training


def test_backprop_matches_central_differences():
    rng = np.random.default_rng(2)
    model = random_model(rng, [5, 6, 4, 3])
    x, y = rng.random((8, 5)), rng.integers(0, 3, 8)
    _, grads = loss_and_gradients(model, x, y)
    h = 1e-6
    for k, layer in enumerate(model.layers):
        for param, g in ((layer.weight, grads[k][0]), (layer.bias, grads[k][1])):
            for idx in np.ndindex(param.shape):
                old = param[idx]
                param[idx] = old + h
                up = loss_and_gradients(model, x, y)[0]
                param[idx] = old - h
                down = loss_and_gradients(model, x, y)[0]
                param[idx] = old
                fd = (up - down) / (2 * h)
                assert abs(fd - g[idx]) <= 1e-5 * max(abs(fd), abs(g[idx])) + 1e-9


def test_zero_epochs_returns_the_seeded_initialisation(rng):
    data = Dataset(rng.random((20, 2, 2, 1)), rng.integers(0, 2, 20))
    model, report = train_reference(data, hidden=(3,), epochs=0, seed=4)
    init = init_model([4, 3, 2], np.random.default_rng(4)).round_to_float32()
    for a, b in zip(model.layers, init.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
        np.testing.assert_array_equal(a.bias, b.bias)
    assert report.epochs == 0


def two_gaussians(rng, n, dim=16, gap=3.0):
    labels = rng.integers(0, 2, n)
    centre = np.where(labels[:, None] == 1, 0.5 + gap / 2 / np.sqrt(dim) * 0.1, 0.5 - gap / 2 / np.sqrt(dim) * 0.1)
    x = np.clip(centre + 0.05 * rng.standard_normal((n, dim)), 0, 1)
    return Dataset(x.reshape(n, 4, 4, 1), labels)


def test_softmax_regression_separates_two_gaussians():
    rng = np.random.default_rng(0)
    train, holdout = two_gaussians(rng, 2000), two_gaussians(rng, 1000)
    _, report = train_reference(train, hidden=(), learning_rate=0.5, epochs=20, holdout=holdout)
    assert report.holdout_accuracy >= 0.95


def test_training_is_deterministic(rng):
    data = two_gaussians(rng, 300)
    a, _ = train_reference(data, hidden=(5,), epochs=2, seed=1)
    b, _ = train_reference(data, hidden=(5,), epochs=2, seed=1)
    assert model_to_bytes(a) == model_to_bytes(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_learning_rate(rng):
    data = Dataset(rng.random((64, 2, 2, 1)) * 1e6, rng.integers(0, 2, 64))
    with pytest.raises(DivergenceError, match="smaller learning rate"):
        train_reference(data, hidden=(), learning_rate=1e300, epochs=3)


def test_training_needs_labels(rng):
    with pytest.raises(ValueError):
        train_reference(Dataset(rng.random((4, 2, 2, 1))))


# ---------------------------------------------------------------- NNW1


def test_weight_file_round_trip(tmp_path, rng):
    model = random_model(rng, [9, 5, 3], (3, 3, 1)).round_to_float32()
    path = tmp_path / "m.nnw"
    save_model(path, model)
    back = load_model(path, (3, 3, 1))
    assert model_to_bytes(back) == path.read_bytes()
    x = rng.random((4, 3, 3, 1))
    np.testing.assert_array_equal(forward(back, x), forward(model, x))


def test_weight_file_layout():
    model = FeedForwardModel([DenseLayer([[1.0, 2.0]], [3.0, 4.0], "identity")])
    buf = model_to_bytes(model)
    assert buf == b"NNW1" + struct.pack("<IBII", 1, 0, 1, 2) + struct.pack("<4f", 1, 2, 3, 4)


@pytest.mark.parametrize(
    "buf, offset",
    [
        (b"", 0),
        (b"NNX1\x00\x00\x00\x00", 0),
        (b"NNW1" + struct.pack("<I", 1), 8),
        (b"NNW1" + struct.pack("<IBII", 1, 7, 1, 1) + b"\x00" * 8, 8),
        (b"NNW1" + struct.pack("<IBII", 1, 0, 2, 2) + b"\x00" * 8, 25),
        (b"NNW1" + struct.pack("<IBII", 1, 0, 1, 1) + b"\x00" * 9, 25),
    ],
)
def test_weight_file_parse_errors(buf, offset):
    with pytest.raises(ParseError) as info:
        model_from_bytes(buf)
    assert info.value.offset == offset
