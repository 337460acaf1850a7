import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obsdenoise import nn
from obsdenoise.nn import (
    LSTM,
    Adam,
    Dense,
    Flatten,
    LastStep,
    Model,
    ShapeError,
    TrainConfig,
    grad_check,
    load_checkpoint,
    loss_and_grad,
    optimizer_step,
    save_checkpoint,
)


def zero_model(model):
    model.set_params([np.zeros_like(p) for p in model.params()])
    return model


def dense_model(rng, n_in=3, hidden=2, n_out=2, act="tanh"):
    return Model([Dense(n_in, hidden, act, rng), Dense(hidden, n_out, "linear", rng)])


def lstm_model(rng, n_in=2, hidden=3, n_out=1):
    return Model([LSTM(n_in, hidden, rng), LastStep(), Dense(hidden, n_out, "linear", rng)])


def stacked_model(rng):
    return Model([
        LSTM(3, 4, rng), LSTM(4, 3, rng), LastStep(), Dense(3, 4, "relu", rng), Dense(4, 2, "linear", rng),
    ])


# --- forward --------------------------------------------------------------------


def test_zero_weights_give_zero_output():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.all(zero_model(dense_model(np.random.default_rng(1))).forward(x) == 0.0)


def test_identity_dense_layer():
    layer = Dense(3, 3)
    layer.W[...] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(layer.forward(x), x)


def test_zero_lstm_outputs_zero():
    layer = LSTM(4, 1)
    zero_model(Model([layer]))
    x = np.random.default_rng(0).normal(size=(3, 6, 4)) * 10
    assert np.all(layer.forward(x) == 0.0)


def test_lstm_matches_reference_cell():
    rng = np.random.default_rng(2)
    layer = LSTM(2, 3, rng)
    layer.b[...] = rng.normal(size=layer.b.shape)
    x = rng.normal(size=(2, 4, 2))
    out = layer.forward(x)
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    H = 3
    for b in range(2):
        h, c = np.zeros(H), np.zeros(H)
        for t in range(4):
            z = x[b, t] @ layer.Wx + h @ layer.Wh + layer.b
            i, f, o, g = sig(z[:H]), sig(z[H:2 * H]), sig(z[2 * H:3 * H]), np.tanh(z[3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            np.testing.assert_allclose(out[b, t], h, atol=1e-12)


def test_forward_deterministic():
    m = stacked_model(np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 5, 3))
    assert m.forward(x).tobytes() == m.forward(x).tobytes()


def test_shape_error_names_layer():
    m = Model([Dense(3, 2, name="first")])
    with pytest.raises(ShapeError, match="first"):
        m.forward(np.zeros((2, 4)))
    with pytest.raises(ShapeError, match="lstm"):
        LSTM(3, 2).forward(np.zeros((2, 3)))


def test_flatten_round_trip():
    f = Flatten()
    x = np.arange(24.0).reshape(2, 3, 4)
    assert f.forward(x).shape == (2, 12)
    np.testing.assert_array_equal(f.backward(f.forward(x)), x)


# --- loss -------------------------------------------------------------------------


def test_perfect_prediction_zero_loss_and_grads():
    m = dense_model(np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 3))
    loss, grads = loss_and_grad(m, x, m.forward(x))
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_hand_derivative_single_unit():
    m = Model([Dense(1, 1)])
    m.layers[0].W[...] = 1.0
    loss, grads = loss_and_grad(m, np.array([[1.0]]), np.array([[0.0]]))
    assert loss == 1.0
    assert grads[0][0, 0] == 2.0 and grads[1][0] == 2.0


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        loss_and_grad(dense_model(np.random.default_rng(0)), np.zeros((0, 3)), np.zeros((0, 2)))


def test_target_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_and_grad(dense_model(np.random.default_rng(0)), np.zeros((2, 3)), np.zeros((2, 3)))


# --- gradient checks --------------------------------------------------------------------


def test_grad_check_ten_parameter_model():
    rng = np.random.default_rng(0)
    tiny = Model([Dense(4, 2, "tanh", rng)])
    assert tiny.n_params == 10
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    assert grad_check(tiny, x, y).passed


def test_grad_check_dense():
    rng = np.random.default_rng(1)
    m = Model([Dense(4, 6, "relu", rng), Dense(6, 5, "tanh", rng), Dense(5, 2, "linear", rng)])
    r = grad_check(m, rng.normal(size=(8, 4)), rng.normal(size=(8, 2)))
    assert r.passed, r.max_rel_error


def test_grad_check_lstm():
    rng = np.random.default_rng(2)
    m = Model([LSTM(3, 4, rng), Flatten(), Dense(20, 2, "linear", rng)])
    r = grad_check(m, rng.normal(size=(4, 5, 3)), rng.normal(size=(4, 2)))
    assert r.passed, r.max_rel_error


def min_relu_margin(m, x):
    h, margin = x, np.inf
    for layer in m.layers:
        if isinstance(layer, Dense) and layer.activation == "relu":
            margin = min(margin, np.abs(h @ layer.W + layer.b).min())
        h = layer.forward(h)
    return margin


def test_grad_check_stacked():
    rng = np.random.default_rng(4)
    m = stacked_model(rng)
    assert m.n_params <= 1000
    x, y = rng.normal(size=(4, 5, 3)), rng.normal(size=(4, 2))
    # central differences are only meaningful away from ReLU kinks
    assert min_relu_margin(m, x) > 10 * 1e-4
    r = grad_check(m, x, y)
    assert r.passed, r.max_rel_error


def test_grad_check_zero_model_passes():
    rng = np.random.default_rng(4)
    m = zero_model(dense_model(rng))
    assert grad_check(m, rng.normal(size=(3, 3)), rng.normal(size=(3, 2))).passed


def test_corrupted_gradient_fails():
    rng = np.random.default_rng(5)
    m = dense_model(rng)
    x, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    _, grads = loss_and_grad(m, x, y)
    bad = [g.copy() for g in grads]
    bad[0][0, 0] *= 1.5
    bad[0][0, 0] += 0.01
    assert not grad_check(m, x, y, grads=bad).passed


# --- optimizers -------------------------------------------------------------------


def test_zero_gradient_leaves_params():
    for opt in ("sgd", "adam"):
        p = [np.array([1.0, -2.0])]
        optimizer_step(p, [np.zeros(2)], TrainConfig(optimizer=opt))
        np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_sgd_example():
    p = [np.array([1.0])]
    optimizer_step(p, [np.array([2.0])], TrainConfig(optimizer="sgd", learning_rate=0.1))
    assert p[0][0] == pytest.approx(0.8)


@settings(max_examples=50)
@given(st.floats(1e-2, 1e6), st.sampled_from([-1.0, 1.0]))
def test_adam_first_step_is_lr(scale, sign):
    p = [np.array([0.0])]
    optimizer_step(p, [np.array([sign * scale])], TrainConfig(learning_rate=1e-3))
    assert p[0][0] == pytest.approx(-sign * 1e-3, rel=1e-4)


def test_adam_state_carries_over():
    cfg = TrainConfig(learning_rate=0.01)
    p = [np.array([0.0])]
    _, state = optimizer_step(p, [np.array([1.0])], cfg)
    optimizer_step(p, [np.array([1.0])], cfg, state)
    assert isinstance(state, Adam) and state.t == 2
    assert p[0][0] == pytest.approx(-0.02)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def _train(seed, steps=200):
    rng = np.random.default_rng(seed)
    true_w = rng.normal(size=(4, 2))
    x = rng.normal(size=(128, 4))
    y = x @ true_w
    m = Model([Dense(4, 8, "relu", rng), Dense(8, 2, "linear", rng)])
    opt = nn.make_optimizer(TrainConfig(learning_rate=0.01))
    first = None
    for _ in range(steps):
        loss, grads = loss_and_grad(m, x, y)
        first = loss if first is None else first
        opt.step(m.params(), grads)
    return m, first, loss_and_grad(m, x, y)[0]


def test_training_reduces_loss():
    _, first, last = _train(0)
    assert last < 0.1 * first


def test_training_bitwise_deterministic():
    a, _, _ = _train(7, steps=30)
    b, _, _ = _train(7, steps=30)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params(), b.params()))


# --- checkpoints -----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = stacked_model(np.random.default_rng(0))
    m.meta["kind"] = "lstm"
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.descriptor() == m.descriptor()
    x = np.random.default_rng(1).normal(size=(3, 5, 3))
    assert back.forward(x).tobytes() == m.forward(x).tobytes()
    assert path.read_bytes()[:8] == b"OBSDNNCK"


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(dense_model(np.random.default_rng(0)), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(path)
