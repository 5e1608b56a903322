import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragilis.nn import (
    DivergenceError, MlpParams, MlpSpec, NonFiniteError, TrainConfig, evaluate_accuracy, forward, grad_input,
    grad_params, init_params, loss, predict_labels, train,
)


def numeric_grad(p, X, T, step=1e-5):
    base = p.flat()
    out = np.empty_like(base)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = step
        out[i] = (loss(p.with_flat(base + e), X, T) - loss(p.with_flat(base - e), X, T)) / (2 * step)
    return out


def assert_close_rel(analytic, numeric, tol=1e-4, floor=1e-6):
    for a, n in zip(analytic.ravel(), numeric.ravel()):
        if abs(a) > floor:
            assert abs(a - n) / max(abs(a), abs(n)) <= tol, (a, n)
        else:
            assert abs(n) <= 1e-5


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((3, 4, 2), ("softmax", "linear"), "mse")
    with pytest.raises(ValueError):
        MlpSpec((3, 2), ("softmax",), "mse")
    with pytest.raises(ValueError):
        MlpSpec((3, 2), ("linear",), "cross_entropy")
    with pytest.raises(ValueError):
        MlpSpec((3, 2), ("linear", "linear"))
    spec = MlpSpec((3, 2), ("relu",))
    assert MlpSpec.from_dict(spec.to_dict()) == spec


def test_forward_examples():
    spec = MlpSpec((4, 3, 2), ("sigmoid", "sigmoid"))
    zero = MlpParams(spec, (np.zeros((3, 4)), np.zeros((2, 3))), (np.zeros(3), np.zeros(2)))
    np.testing.assert_array_equal(forward(zero, np.ones(4)), [0.5, 0.5])
    ident = MlpParams(MlpSpec((3, 3), ("linear",)), (np.eye(3),), (np.zeros(3),))
    np.testing.assert_array_equal(forward(ident, [1.0, -2.0, 3.0]), [1.0, -2.0, 3.0])
    soft = MlpParams(MlpSpec((3, 3), ("softmax",), "cross_entropy"), (np.eye(3),), (np.zeros(3),))
    np.testing.assert_allclose(forward(soft, [1.0, 1.0, 1.0]), [1 / 3] * 3, atol=1e-15)
    y = forward(soft, np.random.default_rng(0).standard_normal((5, 3)) * 50)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)


def test_non_finite_reports_layer():
    spec = MlpSpec((2, 2, 1), ("linear", "linear"))
    p = MlpParams(spec, (np.full((2, 2), 1e200), np.full((1, 2), 1e200)), (np.zeros(2), np.zeros(1)))
    with pytest.raises(NonFiniteError, match="layer 1"):
        forward(p, [1.0, 1.0])
    with pytest.raises(NonFiniteError, match="layer 0"):
        forward(p, [1e200, 1e200])
    with pytest.raises(NonFiniteError):
        MlpParams(spec, (np.full((2, 2), np.nan), np.ones((1, 2))), (np.zeros(2), np.zeros(1)))


def test_gradient_at_minimum_is_zero():
    p = init_params(MlpSpec((3, 4, 2), ("tanh", "linear")), 0)
    X = np.random.default_rng(0).standard_normal((5, 3))
    T = forward(p, X)
    assert np.max(np.abs(grad_params(p, X, T).flat())) <= 1e-12


@pytest.mark.parametrize("acts", [("sigmoid", "linear"), ("tanh", "sigmoid"), ("relu", "tanh"), ("tanh", "softmax")])
def test_param_gradients_match_finite_differences(acts):
    loss_name = "cross_entropy" if acts[-1] == "softmax" else "mse"
    p = init_params(MlpSpec((5, 10, 3), acts, loss_name), 1)
    rng = np.random.default_rng(2)
    X = rng.standard_normal((6, 5))
    T = rng.integers(0, 3, 6) if loss_name == "cross_entropy" else rng.standard_normal((6, 3))
    assert_close_rel(grad_params(p, X, T).flat(), numeric_grad(p, X, T))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["sigmoid", "tanh", "linear"]), st.integers(1, 4))
def test_random_instances_gradient_check(seed, act, batch):
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in rng.integers(1, 6, 3))
    p = init_params(MlpSpec(sizes, (act, "sigmoid")), seed)
    X = rng.standard_normal((batch, sizes[0]))
    T = rng.uniform(0, 1, (batch, sizes[-1]))
    assert_close_rel(grad_params(p, X, T).flat(), numeric_grad(p, X, T))


def test_duplicated_batch_keeps_mean_gradient():
    p = init_params(MlpSpec((4, 6, 2), ("tanh", "linear")), 3)
    rng = np.random.default_rng(4)
    X, T = rng.standard_normal((5, 4)), rng.standard_normal((5, 2))
    g1 = grad_params(p, X, T).flat()
    g2 = grad_params(p, np.vstack([X, X]), np.vstack([T, T])).flat()
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_grad_input_cases():
    W = np.array([[1.0, 2.0, 0.0], [0.5, -1.0, 0.0]])
    b = np.array([0.1, -0.2])
    p = MlpParams(MlpSpec((3, 2), ("linear",)), (W,), (b,))
    x, t = np.array([0.3, -0.7, 2.0]), np.array([1.0, 0.0])
    g = grad_input(p, x, t)
    np.testing.assert_allclose(g, W.T @ (W @ x + b - t), atol=1e-14)
    assert g[2] == 0.0
    q = init_params(MlpSpec((4, 7, 3), ("tanh", "softmax"), "cross_entropy"), 5)
    x = np.random.default_rng(6).standard_normal(4)
    num = np.array([(loss(q, x + e, 2) - loss(q, x - e, 2)) / 2e-5 for e in np.eye(4) * 1e-5])
    assert_close_rel(grad_input(q, x, 2), num)


def test_softmax_output_gradient_closed_form():
    p = MlpParams(MlpSpec((3, 3), ("softmax",), "cross_entropy"), (np.eye(3),), (np.zeros(3),))
    x = np.array([0.2, -1.0, 3.0])
    probs = forward(p, x)
    # with W = I, dL/dx equals dL/d(logits) = p - onehot
    np.testing.assert_allclose(grad_input(p, x, 1), probs - np.eye(3)[1], atol=1e-10)


def test_accuracy_and_tie_rule():
    spec = MlpSpec((2, 3), ("linear",))
    zero = MlpParams(spec, (np.zeros((3, 2)),), (np.zeros(3),))
    assert evaluate_accuracy(zero, np.ones((4, 2)), [0, 0, 0, 0]) == 1.0
    ident = MlpParams(MlpSpec((3, 3), ("linear",)), (np.eye(3),), (np.zeros(3),))
    assert evaluate_accuracy(ident, np.eye(3), [0, 1, 2]) == 1.0
    assert list(predict_labels(ident, np.eye(3))) == [0, 1, 2]


def test_xor_is_learned():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    T = np.array([[0], [1], [1], [0]], dtype=float)
    p = train(MlpSpec((2, 8, 1), ("sigmoid", "sigmoid")), X, T, TrainConfig(0.05, 4, 2000, 0))
    assert np.sum((forward(p, X) > 0.5) == (T > 0.5)) >= 3


def test_training_is_deterministic_and_descends():
    rng = np.random.default_rng(0)
    X, T = rng.standard_normal((64, 5)), np.zeros((64, 2))
    spec = MlpSpec((5, 8, 2), ("tanh", "linear"))
    h1, h2 = [], []
    a = train(spec, X, T, TrainConfig(0.01, 16, 3, 9), history=h1)
    b = train(spec, X, T, TrainConfig(0.01, 16, 3, 9), history=h2)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert h1 == h2 and h1[-1] <= h1[0]
    sgd = train(spec, X, T, TrainConfig(0.05, 16, 1, 9, optimizer="sgd"))
    assert loss(sgd, X, T) < loss(init_params(spec, 9), X, T)


def test_divergence_names_epoch():
    X = np.ones((4, 1)) * 1e150
    T = np.zeros((4, 1))
    with pytest.raises(DivergenceError, match="epoch 0"):
        train(MlpSpec((1, 1), ("linear",)), X, T, TrainConfig(9.0, 2, 3, 0, optimizer="sgd"))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(10.0, 1, 1, 0)
    with pytest.raises(ValueError):
        TrainConfig(0.1, 1, 0, 0)


def test_untrained_net_is_near_chance(mnist):
    _, test_set = mnist
    p = init_params(MlpSpec((784, 300, 100, 10), ("relu", "relu", "softmax"), "cross_entropy"), 0)
    assert 0.05 <= evaluate_accuracy(p, test_set.flat, test_set.labels) <= 0.20


def test_trained_classifier_accuracy(mnist, classifier):
    _, test_set = mnist
    assert evaluate_accuracy(classifier, test_set.flat, test_set.labels) >= 0.95
