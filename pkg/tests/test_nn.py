from math import log

import numpy as np
import pytest

from fedavopy import nn, synthetic_classification, tools
from fedavopy.data import Dataset
from fedavopy.nn import Batch, HyperParams, ModelSpec
from fedavopy.space import hyperparameter_space


def random_instance(rng):
    sizes = [int(rng.integers(2, 6))]
    for _ in range(int(rng.integers(0, 3))):
        sizes.append(int(rng.integers(1, 6)))
    sizes.append(int(rng.integers(2, 5)))
    spec = ModelSpec(sizes)
    n = int(rng.integers(1, 9))
    batch = Batch(rng.random((n, sizes[0])), rng.integers(0, sizes[-1], n))
    params = rng.normal(0, 0.5, spec.num_params)
    return spec, params, batch


def _relu_pattern(spec, params, batch):
    _, pre_activations = nn._forward(spec, params, batch)
    return [(z > 0).tobytes() for z in pre_activations[:-1]]


def test_model_spec_layout():
    spec = ModelSpec((4, 3, 2))
    assert spec.num_params == 4 * 3 + 3 + 3 * 2 + 2
    layers = spec.unflatten(np.arange(spec.num_params, dtype=float))
    assert layers[0][0].shape == (4, 3)
    assert layers[0][1].tolist() == [12.0, 13.0, 14.0]
    assert layers[1][0][0, 0] == 15.0
    assert spec.layer_slices() == [(slice(0, 12), slice(12, 15)), (slice(15, 21), slice(21, 23))]
    assert spec == ModelSpec([4, 3, 2])
    assert hash(spec) == hash(ModelSpec((4, 3, 2)))

    with pytest.raises(ValueError):
        ModelSpec((4,))
    with pytest.raises(ValueError):
        ModelSpec((4, 1))


def test_forward_probabilities():
    spec = ModelSpec((5, 7, 4))
    rng = tools.gen_rng(12345)
    batch = Batch(rng.random((10, 5)), rng.integers(0, 4, 10))

    uniform = nn.forward(spec, np.zeros(spec.num_params), batch)
    assert np.allclose(uniform, 0.25)

    probs = nn.forward(spec, rng.normal(0, 1, spec.num_params), batch)
    assert probs.shape == (10, 4)
    assert np.all(np.abs(probs.sum(axis=1) - 1) < 1e-9)
    assert np.all((probs > 0) & (probs < 1))

    with pytest.raises(ValueError, match="Dimension mismatch"):
        nn.forward(spec, np.zeros(spec.num_params), Batch(np.zeros((2, 3)), [0, 1]))


def test_forward_identity_weights():
    spec = ModelSpec((3, 3))
    params = np.concatenate([5 * np.eye(3).ravel(), np.zeros(3)])
    probs = nn.forward(spec, params, Batch(np.eye(3), [0, 1, 2]))
    assert probs.argmax(axis=1).tolist() == [0, 1, 2]


def test_cross_entropy_examples():
    assert nn.cross_entropy(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]) == 0.0
    assert nn.cross_entropy(np.full((3, 10), 0.1), [0, 4, 9]) == pytest.approx(log(10))
    probs = np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25]])
    assert nn.cross_entropy(probs, [0, 2]) == pytest.approx((log(2) + log(4)) / 2)
    assert nn.cross_entropy(np.array([[0.0, 1.0]]), [0]) == pytest.approx(-log(1e-12))
    with pytest.raises(ValueError, match="empty batch"):
        nn.cross_entropy(np.empty((0, 2)), np.empty(0, dtype=int))


def test_gradient_finite_differences():
    rng = tools.gen_rng(12345)
    h = 1e-5
    for _ in range(50):
        spec, params, batch = random_instance(rng)
        assert spec.num_params <= 200
        analytic = nn.gradient(spec, params, batch)
        numeric = np.empty_like(params)
        checked = np.ones(params.shape[0], dtype=bool)
        for i in range(params.shape[0]):
            up, down = params.copy(), params.copy()
            up[i] += h
            down[i] -= h
            # A ReLU switching between the two probes makes the difference quotient invalid.
            checked[i] = _relu_pattern(spec, up, batch) == _relu_pattern(spec, down, batch)
            loss_up = nn.cross_entropy(nn.forward(spec, up, batch), batch.labels)
            loss_down = nn.cross_entropy(nn.forward(spec, down, batch), batch.labels)
            numeric[i] = (loss_up - loss_down) / (2 * h)
        scale = max(np.max(np.abs(analytic) + np.abs(numeric)), 1e-8)
        error = np.abs(analytic - numeric)[checked]
        assert checked.mean() > 0.9
        assert np.max(error) / scale < 1e-4


def test_gradient_zero_inputs():
    spec = ModelSpec((3, 4))
    batch = Batch(np.zeros((2, 3)), [1, 3])
    grad = nn.gradient(spec, np.zeros(spec.num_params), batch)
    w, b = spec.layer_slices()[0]
    assert np.all(grad[w] == 0)
    assert np.allclose(grad[b], [0.25, 0.25 - 0.5, 0.25, 0.25 - 0.5])


def test_gradient_permutation_invariant():
    rng = tools.gen_rng(12345)
    for _ in range(10):
        spec, params, batch = random_instance(rng)
        shuffled = batch.take(rng.permutation(len(batch)))
        expected = nn.gradient(spec, params, batch)
        assert np.array_equal(nn.gradient(spec, params, shuffled), expected)


def test_gradient_duplicated_rows():
    rng = tools.gen_rng(1)
    spec, params, batch = random_instance(rng)
    single = batch.take([0])
    doubled = batch.take([0, 0])
    np.testing.assert_allclose(
        nn.gradient(spec, params, doubled), nn.gradient(spec, params, single), rtol=1e-12
    )


def test_sgd_step_velocity():
    params, grad = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    plain = HyperParams(0.1)
    updated, velocity = nn.sgd_step(params, grad, plain, np.zeros(2))
    assert np.array_equal(updated, params - 0.1 * grad)
    assert np.array_equal(velocity, grad)

    # Two steps on f(x) = x^2 / 2, whose gradient is x.
    hp = HyperParams(0.1, momentum=0.9)
    x, v = np.array([1.0]), np.zeros(1)
    x, v = nn.sgd_step(x, x.copy(), hp, v)
    assert x[0] == pytest.approx(0.9)
    x, v = nn.sgd_step(x, x.copy(), hp, v)
    assert v[0] == pytest.approx(0.9 * 1.0 + 0.9)
    assert x[0] == pytest.approx(0.9 - 0.1 * 1.8)

    decay = HyperParams(0.1, weight_decay=0.5)
    decayed, _ = nn.sgd_step(params, np.zeros(2), decay, np.zeros(2))
    assert np.allclose(decayed, params - 0.1 * 0.5 * params)


def test_sgd_step_literal():
    params = np.array([1.0, -2.0])
    scaled, velocity = nn.sgd_step(
        params, np.zeros(2), HyperParams(0.1, momentum=0.5), np.zeros(2), mode="literal"
    )
    assert np.array_equal(scaled, 0.5 * params)
    assert np.array_equal(velocity, np.zeros(2))

    with pytest.raises(ValueError):
        nn.sgd_step(params, np.zeros(2), HyperParams(0.1), np.zeros(2), mode="adam")


def test_sgd_step_diverged():
    with pytest.raises(ValueError, match="diverged"):
        nn.sgd_step(np.zeros(2), np.array([np.nan, 0.0]), HyperParams(0.1), np.zeros(2))


def test_hyperparams_from_position():
    space = hyperparameter_space("iid")
    hp = HyperParams.from_position([0.5, 0.5, 0.005, 2.5], space)
    assert hp.learning_rate == 1e-2
    assert hp.momentum == 0.5
    assert hp.epochs == 3
    assert HyperParams.from_position([1e-3, 0.5, 0.005, 0.2], space).epochs == 1
    assert HyperParams.from_position([1e-3, 0.5, 0.005, 9.0], space).epochs == 5
    assert np.array_equal(hp.to_position(), [1e-2, 0.5, 0.005, 3.0])

    with pytest.raises(ValueError):
        HyperParams(0.1, epochs=0)
    with pytest.raises(ValueError):
        HyperParams(0.1, momentum=-1)


def test_train_local_step_count(blobs_spec, blobs, monkeypatch):
    calls = []
    step = nn.sgd_step

    def counting_step(*args, **kwargs):
        calls.append(1)
        return step(*args, **kwargs)

    monkeypatch.setattr(nn, "sgd_step", counting_step)
    shard = blobs.take(np.arange(32))
    params = nn.init_params(blobs_spec, 1)
    nn.train_local(blobs_spec, params, shard, HyperParams(0.1, epochs=3), 16)
    assert len(calls) == 6


def test_train_local_uses_row_views(blobs_spec, blobs, monkeypatch):
    params = nn.init_params(blobs_spec, 1)
    hp = HyperParams(0.1, momentum=0.5, epochs=2)
    expected = nn.train_local(blobs_spec, params, blobs, hp, 16)

    def refuse(self, idx):
        raise AssertionError("mini-batches should not be rebuilt as datasets")

    monkeypatch.setattr(Batch, "take", refuse)
    monkeypatch.setattr(Dataset, "take", refuse)
    assert np.array_equal(nn.train_local(blobs_spec, params, blobs, hp, 16), expected)


def test_train_local_full_batch_matches_gradient(blobs_spec, blobs):
    params = nn.init_params(blobs_spec, 1)
    hp = HyperParams(0.1, momentum=0.5, weight_decay=0.01)
    grad = nn.gradient(blobs_spec, params, blobs)
    expected, _ = nn.sgd_step(params, grad, hp, np.zeros_like(params))
    trained = nn.train_local(blobs_spec, params, blobs, hp, len(blobs))
    np.testing.assert_allclose(trained, expected, rtol=1e-10, atol=1e-12)


def test_train_local_zero_step(blobs_spec, blobs):
    params = nn.init_params(blobs_spec, 1)
    trained = nn.train_local(blobs_spec, params, blobs, HyperParams(0.0, epochs=2), 16)
    assert np.array_equal(trained, params)


def test_train_local_seed(blobs_spec, blobs):
    params = nn.init_params(blobs_spec, 1)
    hp = HyperParams(0.05, momentum=0.5, epochs=2)
    a = nn.train_local(blobs_spec, params, blobs, hp, 16, seed=(1, 2, 3))
    b = nn.train_local(blobs_spec, params, blobs, hp, 16, seed=(1, 2, 3))
    c = nn.train_local(blobs_spec, params, blobs, hp, 16, seed=(1, 2, 4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(params, nn.init_params(blobs_spec, 1))


def test_train_local_separable_blobs():
    data = synthetic_classification(n=200, num_classes=2, dims=2, spread=0.3, seed=12345)
    spec = ModelSpec((2, 2))
    params = nn.train_local(spec, nn.init_params(spec, 1), data, HyperParams(0.5, epochs=20), 16)
    _, accuracy = nn.evaluate(spec, params, data)
    assert accuracy > 0.95


def test_train_local_validation(blobs_spec, blobs):
    params = nn.init_params(blobs_spec, 1)
    with pytest.raises(ValueError):
        nn.train_local(blobs_spec, params, blobs.take(np.arange(0)), HyperParams(0.1), 16)
    with pytest.raises(ValueError):
        nn.train_local(blobs_spec, params, blobs, HyperParams(0.1), 0)
    with pytest.raises(ValueError, match="Dimension mismatch"):
        nn.train_local(ModelSpec((5, 3)), np.zeros(18), blobs, HyperParams(0.1), 16)
    with pytest.raises(ValueError, match="params"):
        nn.train_local(blobs_spec, params[:-1], blobs, HyperParams(0.1), 16)


def test_evaluate():
    spec = ModelSpec((2, 10))
    labels = np.arange(30) % 10
    data = Batch(tools.gen_rng(1).random((30, 2)), labels)
    loss, accuracy = nn.evaluate(spec, np.zeros(spec.num_params), data)
    assert loss == pytest.approx(log(10))
    assert accuracy == pytest.approx(0.1)

    with pytest.raises(ValueError):
        nn.evaluate(spec, np.zeros(spec.num_params), data.take(np.arange(0)))


def test_evaluate_hand_computed():
    # Logits equal the inputs: weights are the identity, biases zero.
    spec = ModelSpec((2, 2))
    params = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    data = Batch(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), [0, 0, 1])
    p = np.exp(1) / (np.exp(1) + 1)
    loss, accuracy = nn.evaluate(spec, params, data)
    assert accuracy == pytest.approx(1 / 3)
    assert loss == pytest.approx(-(log(p) + log(1 - p) + log(1 - p)) / 3)


def test_evaluate_memorized_sample():
    spec = ModelSpec((1, 2))
    params = np.array([0.0, 0.0, -1.0, 1.0])
    _, accuracy = nn.evaluate(spec, params, Batch(np.array([[0.3]]), [1]))
    assert accuracy == 1.0
