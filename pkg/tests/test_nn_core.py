import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multipofo.errors import ShapeError, StateError, TrainingError
from multipofo.nn_core import (
    IDENTITY,
    RELU,
    AdamHyper,
    AdamState,
    DenseLayer,
    GradientTape,
    adam_step,
    backward,
    forward,
    init_dense,
    mse_loss,
    seed_rng,
)


def scalar_forward(weights, bias, activation, x):
    out = []
    for i in range(len(weights)):
        s = bias[i]
        for j in range(len(x)):
            s += weights[i][j] * x[j]
        out.append(max(s, 0.0) if activation == RELU else s)
    return out


def test_forward_identity():
    layer = DenseLayer([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], IDENTITY)
    np.testing.assert_array_equal(forward(layer, [3.0, -2.0]), [3.0, -2.0])


def test_forward_relu_clips_negative_preactivation():
    layer = DenseLayer([[1.0, 1.0]], [-5.0], RELU)
    np.testing.assert_array_equal(forward(layer, [2.0, 2.0]), [0.0])


def test_forward_hand_example_matches_scalar_loop():
    w, b, x = [[2.0, -1.0], [0.5, 0.5]], [1.0, 0.0], [1.0, 2.0]
    expected = scalar_forward(w, b, RELU, x)
    assert expected == [1.0, 1.5]
    np.testing.assert_array_equal(forward(DenseLayer(w, b, RELU), x), expected)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(1, 6),
    st.sampled_from([RELU, IDENTITY]),
    st.integers(0, 2**32 - 1),
)
def test_forward_matches_scalar_loop(n_in, n_out, act, seed):
    r = np.random.default_rng(seed)
    w, b, x = r.normal(size=(n_out, n_in)), r.normal(size=n_out), r.normal(size=n_in)
    got = forward(DenseLayer(w, b, act), x)
    np.testing.assert_allclose(got, scalar_forward(w.tolist(), b.tolist(), act, x.tolist()), rtol=1e-12, atol=1e-12)


def test_forward_batch_equals_rowwise(rng):
    layer = init_dense(5, 3, RELU, rng, "l")
    X = rng.normal(size=(7, 5))
    batch = forward(layer, X)
    for k in range(7):
        np.testing.assert_allclose(batch[k], forward(layer, X[k]), rtol=0, atol=1e-15)


def test_forward_dimension_mismatch_names_both_dims():
    layer = DenseLayer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ShapeError, match="4.*3"):
        forward(layer, np.zeros(4))


def test_forward_rejects_scalar_input():
    with pytest.raises(ShapeError):
        forward(DenseLayer(np.zeros((1, 1)), np.zeros(1)), 1.0)


def test_layer_rejects_mismatched_bias():
    with pytest.raises(ShapeError):
        DenseLayer(np.zeros((2, 3)), np.zeros(3))


def test_backward_identity_1x1():
    layer = DenseLayer([[2.5]], [0.0], IDENTITY)
    tape = GradientTape()
    forward(layer, [4.0], tape)
    g = backward(layer, np.array([1.0]), tape)
    np.testing.assert_array_equal(g, [2.5])
    np.testing.assert_array_equal(tape.weight_grads["dense"], [[4.0]])
    np.testing.assert_array_equal(tape.bias_grads["dense"], [1.0])


def test_backward_dead_relu_gives_zero_gradients():
    layer = DenseLayer([[1.0, 1.0], [2.0, -1.0]], [-100.0, -100.0], RELU)
    tape = GradientTape()
    forward(layer, [1.0, 2.0], tape)
    g = backward(layer, np.ones(2), tape)
    assert not g.any()
    assert not tape.weight_grads["dense"].any()
    assert not tape.bias_grads["dense"].any()


def test_backward_relu_tie_at_zero_has_zero_gradient():
    layer = DenseLayer([[1.0]], [-1.0], RELU)
    tape = GradientTape()
    forward(layer, [1.0], tape)
    assert backward(layer, np.array([1.0]), tape)[0] == 0.0


def test_backward_without_forward_is_state_error():
    layer = DenseLayer([[1.0]], [0.0])
    with pytest.raises(StateError):
        backward(layer, np.array([1.0]), GradientTape())


def _loss(layer, x, target):
    return mse_loss(forward(layer, x), target)[0]


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 16),
    st.integers(1, 16),
    st.sampled_from([RELU, IDENTITY]),
    st.integers(0, 2**32 - 1),
)
def test_gradients_match_central_differences(n_in, n_out, act, seed):
    r = np.random.default_rng(seed)
    layer = DenseLayer(r.normal(size=(n_out, n_in)), r.normal(size=n_out), act)
    x, target = r.normal(size=n_in), r.normal(size=n_out)
    tape = GradientTape()
    _, g = mse_loss(forward(layer, x, tape), target)
    gx = backward(layer, g, tape)
    eps = 1e-5

    def check(analytic, param, wiggle):
        num = np.empty_like(analytic)
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + eps
            up = wiggle()
            param[idx] = old - eps
            down = wiggle()
            param[idx] = old
            num[idx] = (up - down) / (2 * eps)
        scale = np.maximum(np.abs(num), np.abs(analytic))
        rel = np.abs(num - analytic) / np.maximum(scale, 1.0)
        assert rel.max() < 1e-4

    check(tape.weight_grads["dense"], layer.weights, lambda: _loss(layer, x, target))
    check(tape.bias_grads["dense"], layer.bias, lambda: _loss(layer, x, target))
    check(gx, x, lambda: _loss(layer, x, target))


def test_mse_examples():
    assert mse_loss([1, 2], [1, 2])[0] == 0.0
    np.testing.assert_array_equal(mse_loss([1, 2], [1, 2])[1], [0, 0])
    loss, g = mse_loss([3.0], [1.0])
    assert loss == 4.0
    np.testing.assert_array_equal(g, [4.0])


def test_mse_hand_sum_matches_scalar_loop():
    pred, target = [1.0, 0.0, 2.0], [0.0, 0.0, 0.0]
    expected = sum((p - t) ** 2 for p, t in zip(pred, target))
    loss, g = mse_loss(pred, target)
    assert loss == expected == 5.0
    np.testing.assert_array_equal(g, [2.0 * (p - t) for p, t in zip(pred, target)])


def test_mse_length_mismatch():
    with pytest.raises(ShapeError):
        mse_loss([1.0, 2.0], [1.0])


def _scalar_layer(value):
    return DenseLayer([[value]], [0.0], IDENTITY, name="p")


def _tape_with(layer, gw, gb):
    tape = GradientTape()
    tape.weight_grads[layer.name] = np.array([[gw]])
    tape.bias_grads[layer.name] = np.array([gb])
    return tape


def test_adam_zero_gradient_leaves_params_and_counts_step():
    layer = _scalar_layer(0.7)
    state = AdamState()
    adam_step([layer], _tape_with(layer, 0.0, 0.0), state)
    assert layer.weights[0, 0] == 0.7
    assert state.step == 1


def test_adam_first_step_closed_form():
    layer = _scalar_layer(1.0)
    hyper = AdamHyper(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step([layer], _tape_with(layer, 1.0, 0.0), AdamState(), hyper)
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    m_hat = (1 - 0.9) * 1.0 / (1 - 0.9)
    v_hat = (1 - 0.999) * 1.0 / (1 - 0.999)
    expected = 1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert layer.weights[0, 0] == pytest.approx(expected, abs=1e-15)
    assert 1.0 - layer.weights[0, 0] == pytest.approx(0.1, rel=1e-6)


def test_adam_skips_frozen_layer():
    layer = _scalar_layer(0.3)
    layer.frozen = True
    before = layer.weights.copy()
    adam_step([layer], _tape_with(layer, 5.0, 5.0), AdamState())
    assert layer.weights.tobytes() == before.tobytes()


def test_adam_non_finite_gradient_names_layer():
    layer = _scalar_layer(0.3)
    with pytest.raises(TrainingError, match="'p'"):
        adam_step([layer], _tape_with(layer, np.nan, 0.0), AdamState())


def test_seed_determinism():
    a = init_dense(4, 3, RELU, seed_rng(0), "a")
    b = init_dense(4, 3, RELU, seed_rng(0), "a")
    c = init_dense(4, 3, RELU, seed_rng(1), "a")
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)


def test_init_ranges(rng):
    relu = init_dense(100, 50, RELU, rng, "r")
    ident = init_dense(100, 50, IDENTITY, rng, "i")
    assert np.abs(relu.weights).max() <= np.sqrt(6 / 100)
    assert np.abs(ident.weights).max() <= np.sqrt(6 / 150)
    assert not relu.bias.any() and not ident.bias.any()
    assert relu.weights.dtype == np.float64
