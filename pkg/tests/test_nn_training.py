import math

import numpy as np
import pytest

from mflstm.errors import ConfigurationError, TrainingDiverged
from mflstm.nn import (
    DenseLayerParams,
    NetworkParams,
    NetworkSpec,
    OptimizerState,
    TrainConfig,
    init_params,
    network_forward,
    optimizer_step,
    params_from_dict,
    params_to_dict,
    train,
)


def scalar_params(value):
    return NetworkParams([], [DenseLayerParams(np.array([[value]]), np.array([0.0]), "identity")])


def scalar_grad(value):
    return NetworkParams([], [DenseLayerParams(np.array([[value]]), np.array([0.0]), "identity")])


def test_zero_gradient_leaves_params_unchanged():
    spec = NetworkSpec.build(2, 1, lstm=(3,))
    params = init_params(spec, 0)
    zero = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
    for algo in ("adam", "adamax"):
        state = OptimizerState(algo, 0.01)
        new, state = optimizer_step(params, zero, state)
        assert state.step == 1
        for a, b in zip(new.arrays(), params.arrays()):
            np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("algo", ["adam", "adamax"])
def test_first_step_moves_by_learning_rate(algo):
    rng = np.random.default_rng(3)
    spec = NetworkSpec.build(2, 2, hidden=(3,))
    params = init_params(spec, rng)
    grads = params.with_arrays([rng.normal(size=a.shape) for a in params.arrays()])
    new, _ = optimizer_step(params, grads, OptimizerState(algo, 0.05))
    for a, b in zip(new.arrays(), params.arrays()):
        np.testing.assert_allclose(np.abs(a - b), 0.05, rtol=1e-6)


def adam_oracle(theta, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(theta)
    return out


def adamax_oracle(theta, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = u = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        u = max(b2 * u, abs(g))
        theta = theta - (lr / (1 - b1 ** t)) * m / (u + eps)
        out.append(theta)
    return out


@pytest.mark.parametrize("algo,oracle", [("adam", adam_oracle), ("adamax", adamax_oracle)])
def test_five_step_scalar_trajectory(algo, oracle):
    grad_fn = lambda th: 2.0 * (th - 3.0) + 0.5 * math.sin(th)  # noqa: E731
    expected = oracle(0.7, grad_fn, 0.1, 5)
    params, state = scalar_params(0.7), OptimizerState(algo, 0.1)
    for t in range(5):
        g = grad_fn(params.dense[0].W[0, 0])
        params, state = optimizer_step(params, scalar_grad(g), state)
        assert abs(params.dense[0].W[0, 0] - expected[t]) < 1e-12
    assert state.step == 5


def test_nonpositive_learning_rate_rejected():
    with pytest.raises(ConfigurationError):
        OptimizerState("adam", 0.0)
    state = OptimizerState("adam", 0.1)
    state.lr = -1.0
    with pytest.raises(ConfigurationError):
        optimizer_step(scalar_params(1.0), scalar_grad(1.0), state)


def linear_data(rng, n=40, k=3):
    x = rng.uniform(-1, 1, size=(n, k, 3))
    A = np.array([[1.5, -0.5, 2.0], [0.3, 0.0, -1.0]])
    y = x @ A.T + np.array([0.25, -0.75])
    return x, y


def test_linear_network_fits_linear_data():
    x, y = linear_data(np.random.default_rng(0))
    spec = NetworkSpec(3, 2, (), (2,))
    cfg = TrainConfig(epochs=2000, batch_size=40, optimizer="adam", lr=0.02, seed=1)
    params, hist = train(spec, (x, y), cfg)
    assert hist["final_loss"] < 1e-8
    assert len(hist["loss"]) == 2000


def test_zero_epochs_returns_initialization():
    x, y = linear_data(np.random.default_rng(0))
    spec = NetworkSpec.build(3, 2, lstm=(4,))
    params, hist = train(spec, (x, y), TrainConfig(epochs=0, seed=5))
    ref = init_params(spec, np.random.default_rng(5))
    for a, b in zip(params.arrays(), ref.arrays()):
        np.testing.assert_array_equal(a, b)
    assert hist["loss"] == []


def test_training_is_bit_deterministic():
    x, y = linear_data(np.random.default_rng(2), n=12, k=4)
    spec = NetworkSpec.build(3, 2, lstm=(5,), hidden=(4,))
    cfg = TrainConfig(epochs=15, batch_size=5, optimizer="adamax", lr=0.01, seed=9,
                      validation_fraction=0.2)
    p1, h1 = train(spec, (x, y), cfg)
    p2, h2 = train(spec, (x, y), cfg)
    for a, b in zip(p1.arrays(), p2.arrays()):
        np.testing.assert_array_equal(a, b)
    assert h1 == h2
    assert len(h1["val_loss"]) == 15


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch():
    x, y = linear_data(np.random.default_rng(0), n=8)
    y = y * 1e200
    spec = NetworkSpec(3, 2, (), (2,))
    with pytest.raises(TrainingDiverged) as err:
        train(spec, (x, y), TrainConfig(epochs=3, batch_size=8, lr=1e300))
    assert err.value.epoch == 0


def test_batch_size_clamped_to_dataset():
    x, y = linear_data(np.random.default_rng(0), n=3)
    spec = NetworkSpec(3, 2, (), (2,))
    _, hist = train(spec, (x, y), TrainConfig(epochs=2, batch_size=151))
    assert len(hist["loss"]) == 2


def test_gradient_clipping_limits_update():
    x, y = linear_data(np.random.default_rng(0), n=10)
    spec = NetworkSpec.build(3, 2, lstm=(3,))
    _, hist = train(spec, (x, y), TrainConfig(epochs=20, batch_size=4, lr=0.01, clip_norm=0.1))
    assert hist["final_loss"] <= hist["initial_loss"]


def test_params_json_round_trip_is_exact():
    import json

    spec = NetworkSpec.build(3, 2, lstm=(4, 3), hidden=(5,))
    params = init_params(spec, 13)
    doc = json.loads(json.dumps(params_to_dict(spec, params)))
    assert doc["format"].startswith("mflstm.network/")
    spec2, params2 = params_from_dict(doc)
    assert spec2 == spec
    for a, b in zip(params.arrays(), params2.arrays()):
        np.testing.assert_array_equal(a, b)
    x = np.random.default_rng(1).normal(size=(2, 3, 3))
    np.testing.assert_array_equal(network_forward(spec, params, x)[0], network_forward(spec2, params2, x)[0])
