import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from learnpool import verify
from learnpool.classifier import ClassifierState, backward, forward, one_hot, predict, sgd_step
from learnpool.errors import StateError


def zeros_state(inputs=3, hidden=2, outputs=4, b2=None):
    return ClassifierState(np.zeros((hidden, inputs)), np.zeros(hidden), np.zeros((outputs, hidden)),
                           np.zeros(outputs) if b2 is None else np.asarray(b2, float))


def test_forward_zero_and_bias_only():
    assert np.all(forward(zeros_state(), np.ones(3)) == 0)
    y = np.array([0.1, -2.0, 3.0, 0.0])
    assert np.array_equal(forward(zeros_state(b2=y), np.arange(3.0)), y)


def test_forward_hand_network():
    st_ = ClassifierState([[0.5, -1.0]], [0.2], [[2.0]], [-0.3])
    s = 1.0 / (1.0 + math.exp(1.3))
    assert forward(st_, np.array([1.0, 2.0]))[0] == pytest.approx(2 * s - 0.3, rel=1e-12, abs=1e-12)


def test_forward_tanh_hand_network():
    st_ = ClassifierState([[0.5, -1.0]], [0.2], [[2.0]], [-0.3], activation="tanh")
    assert forward(st_, np.array([1.0, 2.0]))[0] == pytest.approx(2 * math.tanh(-1.3) - 0.3, rel=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(zeros_state(), np.ones(4))


def test_predict_ties_lowest_index():
    assert predict(zeros_state(b2=[1.0, 3.0, 3.0, 0.0]), np.zeros(3)) == 1
    assert predict(zeros_state(), np.zeros(3)) == 0


def test_backward_perfect_fit():
    target = one_hot(2, 4)
    res = backward(zeros_state(b2=target), np.array([0.3, -1.0, 2.0]), target)
    assert res.loss == 0.0
    assert all(np.all(g == 0) for g in res.grads.values())
    assert np.all(res.delta0 == 0)


def test_backward_rejects_non_one_hot():
    with pytest.raises(ValueError):
        backward(zeros_state(), np.zeros(3), np.array([0.5, 0.5, 0.0, 0.0]))
    with pytest.raises(ValueError):
        backward(zeros_state(), np.zeros(3), np.array([1.0, 1.0, 0.0, 0.0]))


@given(st.integers(1, 12), st.integers(1, 7), st.integers(1, 3), st.sampled_from(["sigmoid", "tanh"]),
       st.integers(0, 2**32 - 1))
def test_backward_matches_finite_differences(inputs, hidden, outputs, activation, seed):
    rng = np.random.default_rng(seed)
    state = ClassifierState.init(inputs, hidden, outputs, rng, activation)
    state = ClassifierState(state.v1, rng.normal(0, 0.3, hidden), state.v2, rng.normal(0, 0.3, outputs),
                            activation)
    x = rng.normal(size=inputs)
    target = one_hot(rng.integers(outputs), outputs)
    res = backward(state, x, target)
    fd = verify.fd_classifier_gradients(state, x, target, 1e-6)
    for name in ("v1", "b1", "v2", "b2"):
        assert verify.rel_error(res.grads[name], fd[name]).max() <= 1e-5, name
    assert verify.rel_error(res.delta0, fd["delta0"]).max() <= 1e-5
    np.testing.assert_array_equal(res.delta0, state.v1.T @ res.delta1)


def test_backward_batch_is_mean_of_samples(rng):
    state = ClassifierState.init(5, 4, 3, rng)
    X = rng.normal(size=(6, 5))
    T = one_hot(rng.integers(3, size=6), 3)
    batch = backward(state, X, T)
    singles = [backward(state, x, t) for x, t in zip(X, T)]
    for name in ("v1", "b1", "v2", "b2"):
        np.testing.assert_allclose(batch.grads[name], np.mean([s.grads[name] for s in singles], axis=0),
                                   rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(batch.delta0, [s.delta0 for s in singles], rtol=1e-12, atol=1e-15)
    assert batch.loss == pytest.approx(np.mean([s.loss for s in singles]), rel=1e-12)


def test_sgd_step_bias_as_linear_model():
    # output bias b2[1] behaves as a 1-parameter linear model with input 1:
    # w=0, target=1 -> dJ/dw = -1, so w <- 0 + eta
    state = zeros_state(inputs=1, hidden=1, outputs=2)
    new, loss = sgd_step(state, np.zeros(1), one_hot(1, 2), 0.1)
    assert loss == pytest.approx(0.5)
    assert new.b2.tolist() == pytest.approx([0.0, 0.1])


def test_sgd_step_zero_gradient_and_duplicates(rng):
    target = one_hot(0, 4)
    perfect = zeros_state(b2=target)
    same, _ = sgd_step(perfect, np.ones(3), target, 0.5)
    assert same.checksum() == perfect.checksum()

    state = ClassifierState.init(3, 2, 4, rng)
    x = rng.normal(size=3)
    one, _ = sgd_step(state, x, target, 0.1)
    two, _ = sgd_step(state, np.stack([x, x]), np.stack([target, target]), 0.1)
    for name in ("v1", "b1", "v2", "b2"):
        np.testing.assert_allclose(getattr(one, name), getattr(two, name), rtol=1e-14, atol=1e-16)


def test_sgd_step_errors(rng):
    state = ClassifierState.init(3, 2, 2, rng)
    with pytest.raises(ValueError):
        sgd_step(state, np.zeros((0, 3)), np.zeros((0, 2)), 0.1)
    with pytest.raises(StateError):
        sgd_step(state.copy().freeze(), np.zeros(3), one_hot(0, 2), 0.1)


def test_loss_decreases_on_separable_toy(rng):
    X = np.concatenate([rng.normal(2, 0.5, (20, 2)), rng.normal(-2, 0.5, (20, 2))])
    T = one_hot(np.repeat([0, 1], 20), 2)
    state = ClassifierState.init(2, 4, 2, rng)
    initial = backward(state, X, T).loss
    for _ in range(100):
        idx = rng.integers(0, 40, size=10)
        state, _ = sgd_step(state, X[idx], T[idx], 0.1)
    assert backward(state, X, T).loss < initial


def test_init_scale(rng):
    state = ClassifierState.init(100, 16, 10, rng)
    assert np.abs(state.v1).max() <= 0.1
    assert np.abs(state.v2).max() <= 0.25
    assert np.all(state.b1 == 0) and np.all(state.b2 == 0)
