import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smartcrop.neural import (
    OptimizerConfig,
    ParamStore,
    gradient_check,
    log_softmax,
    masked_cross_entropy,
    matmul,
    optimizer_step,
    row_softmax,
)


def test_matmul_against_loops():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    expected = [[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(2)] for i in range(3)]
    np.testing.assert_allclose(matmul(a, b), expected, rtol=1e-14)


def test_matmul_shape_errors():
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_softmax_hand_values():
    p = row_softmax([[0.0, math.log(3.0)]])
    np.testing.assert_allclose(p, [[0.25, 0.75]], rtol=1e-15)


def test_softmax_is_shift_invariant_and_stable():
    x = np.array([[1000.0, 1001.0, 999.0]])
    np.testing.assert_allclose(row_softmax(x), row_softmax(x - 1000.0), rtol=1e-14)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        row_softmax([[0.0, np.inf]])
    with pytest.raises(ValueError):
        log_softmax([[np.nan, 0.0]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    p = row_softmax(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(np.log(p), log_softmax(x), atol=1e-10)


def test_cross_entropy_hand_value():
    logits = np.array([[0.0, math.log(3.0)], [5.0, 5.0]])
    loss, grad = masked_cross_entropy(logits, [1, 0], [True, False])
    assert loss == pytest.approx(-math.log(0.75))
    np.testing.assert_allclose(grad, [[0.25, -0.25], [0.0, 0.0]], atol=1e-15)


def test_cross_entropy_gradient_by_differences():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(5, 7))
    targets = rng.integers(0, 7, 5)
    mask = np.array([True, False, True, True, False])
    _, grad = masked_cross_entropy(logits, targets, mask)
    h = 1e-6
    for i in range(5):
        for j in range(7):
            e = np.zeros_like(logits)
            e[i, j] = h
            fd = (masked_cross_entropy(logits + e, targets, mask)[0]
                  - masked_cross_entropy(logits - e, targets, mask)[0]) / (2 * h)
            assert fd == pytest.approx(grad[i, j], abs=1e-8)


def test_cross_entropy_validation():
    with pytest.raises(ValueError):
        masked_cross_entropy(np.zeros((2, 3)), [0, 1], [False, False])
    with pytest.raises(ValueError):
        masked_cross_entropy(np.zeros((2, 3)), [0, 3], [True, True])


def test_param_store_bookkeeping():
    s = ParamStore()
    s.add("w", np.ones((2, 3)))
    s.add("b", np.zeros(3))
    assert s.num_parameters() == 9
    assert list(s) == ["w", "b"]
    with pytest.raises(ValueError):
        s.add("w", np.ones(1))
    s.grads["w"] += 1.0
    c = s.copy()
    s.zero_grad()
    assert c.grads["w"].sum() == 6.0 and s.grads["w"].sum() == 0.0


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first step lr * sign(g)
    s = ParamStore()
    s.add("x", np.array([1.0, -2.0, 0.0]))
    s.grads["x"][:] = [0.3, -5.0, 0.0]
    cfg = OptimizerConfig(learning_rate=0.1)
    optimizer_step(s, cfg)
    np.testing.assert_allclose(s.params["x"], [0.9, -1.9, 0.0], atol=1e-6)
    assert cfg.step == 1


def test_adam_against_reference_loop():
    rng = np.random.default_rng(2)
    s = ParamStore()
    s.add("x", rng.normal(size=4))
    cfg = OptimizerConfig(learning_rate=0.01, beta1=0.8, beta2=0.99)
    x = s.params["x"].copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        s.grads["x"][:] = g
        optimizer_step(s, cfg)
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        x = x - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
    np.testing.assert_allclose(s.params["x"], x, rtol=1e-12)


def test_adam_minimises_quadratic():
    s = ParamStore()
    s.add("x", np.array([3.0, -4.0]))
    cfg = OptimizerConfig(learning_rate=0.05)
    for _ in range(2000):
        s.grads["x"][:] = 2 * s.params["x"]
        optimizer_step(s, cfg)
    assert np.abs(s.params["x"]).max() < 1e-2


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=-1)


def test_gradient_check_accepts_correct_and_flags_wrong():
    s = ParamStore()
    s.add("w", np.array([[0.5, -1.0], [2.0, 0.3]]))

    def good(store):
        w = store.params["w"]
        return float((w**3).sum()), {"w": 3 * w**2}

    def bad(store):
        w = store.params["w"]
        return float((w**3).sum()), {"w": 2 * w**2}

    assert gradient_check(good, s) < 1e-8
    assert gradient_check(bad, s) > 0.1
    np.testing.assert_array_equal(s.params["w"], [[0.5, -1.0], [2.0, 0.3]])


def test_gradient_check_non_finite():
    s = ParamStore()
    s.add("w", np.array([1.0]))
    with pytest.raises(FloatingPointError):
        gradient_check(lambda st_: (float("nan"), {"w": np.zeros(1)}), s)
