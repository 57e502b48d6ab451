import numpy as np
import pytest

from shared import tensor as T
from shared.errors import GradientError
from shared.optim import Adam, adam_step
from shared.tensor import Parameter, backward


def test_first_step_moves_by_learning_rate():
    """With |g| >> eps the bias-corrected first step is lr * sign(g)."""
    p = Parameter(np.ones(3))
    p.grad = np.ones(3)
    adam_step({"p": p}, {}, lr=0.001)
    np.testing.assert_allclose(p.data, np.ones(3) - 0.001, atol=1e-10)


def test_zero_gradient_leaves_parameter_unchanged():
    p = Parameter([1.5, -2.0])
    p.grad = np.zeros(2)
    adam_step({"p": p}, {}, lr=0.001)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_step_counter_advances_and_bias_correction_changes_update():
    p = Parameter([0.0])
    states = {}
    p.grad = np.array([1.0])
    adam_step({"p": p}, states, lr=0.1)
    first = -p.data[0]
    assert states["p"].t == 1

    before = p.data.copy()
    p.grad = np.array([1.0])
    adam_step({"p": p}, states, lr=0.1)
    assert states["p"].t == 2
    # m_hat = v_hat = 1 again, so only eps makes the two updates differ
    second = before[0] - p.data[0]
    m = 0.9 * (1 - 0.9) + (1 - 0.9)
    v = 0.999 * (1 - 0.999) + (1 - 0.999)
    expected = 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert second == pytest.approx(expected, abs=1e-12)
    assert first == pytest.approx(0.1 / (1.0 + 1e-8), abs=1e-12)


def test_gradients_are_cleared_after_step():
    p = Parameter([1.0])
    p.grad = np.array([0.5])
    adam_step({"p": p}, {}, lr=0.01)
    assert p.grad is None


def test_missing_gradient_on_trainable_parameter_raises():
    p = Parameter([1.0], name="w")
    with pytest.raises(GradientError, match="w"):
        adam_step({"w": p}, {}, lr=0.01)


def test_frozen_parameter_is_skipped():
    frozen = Parameter([1.0], trainable=False)
    live = Parameter([1.0])
    live.grad = np.array([1.0])
    adam_step({"frozen": frozen, "live": live}, {}, lr=0.01)
    np.testing.assert_array_equal(frozen.data, [1.0])


@pytest.mark.parametrize("lr", [0.0, -1e-3])
def test_non_positive_learning_rate_raises(lr):
    p = Parameter([1.0])
    p.grad = np.array([1.0])
    with pytest.raises(ValueError):
        adam_step({"p": p}, {}, lr=lr)


def test_adam_minimises_a_quadratic():
    p = Parameter([0.0, 10.0])
    target = T.Tensor([3.0, -1.0])
    opt = Adam({"p": p}, lr=0.1)
    for _ in range(2000):
        diff = T.sub(p, target)
        backward(T.dot(diff, diff))
        opt.step()
    np.testing.assert_allclose(p.data, [3.0, -1.0], atol=0.05)
