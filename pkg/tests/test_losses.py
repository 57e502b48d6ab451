import numpy as np
import pytest

from model.losses import LossWeights, info_nce, rec_loss, total_loss
from shared import tensor as T
from shared.tensor import Parameter, Tensor, backward


# ------------------------
# Recommendation loss
# ------------------------


def test_uniform_scores_give_log_n():
    assert rec_loss(Tensor(np.zeros((1, 7))), np.array([3])).item() == pytest.approx(np.log(7), abs=1e-12)


def test_softmax_mode_matches_cross_entropy():
    scores = np.array([[1.0, 2.0, 3.0]])
    expected = -np.log(np.exp(3.0) / np.exp(scores).sum())
    assert rec_loss(Tensor(scores), np.array([2])).item() == pytest.approx(expected, abs=1e-12)


def test_dominant_target_score_drives_loss_to_zero():
    assert rec_loss(Tensor([[0.0, 60.0, 0.0]]), np.array([1])).item() < 1e-12


def test_translation_does_not_change_softmax_loss(rng):
    scores = rng.standard_normal((3, 5))
    targets = np.array([0, 4, 2])
    base = rec_loss(Tensor(scores), targets).item()
    assert rec_loss(Tensor(scores + 11.0), targets).item() == pytest.approx(base, abs=1e-10)


def test_loss_decreases_with_target_margin():
    losses = [rec_loss(Tensor([[0.0, margin, 0.5]]), np.array([1])).item() for margin in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_binary_mode_sums_per_item_cross_entropy():
    scores = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]])
    targets = np.array([0, 2])
    probs = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    y = np.zeros_like(probs)
    y[[0, 1], targets] = 1.0
    expected = -(y * np.log(probs) + (1 - y) * np.log(1 - probs)).sum() / 2
    assert rec_loss(Tensor(scores), targets, mode="binary").item() == pytest.approx(expected, abs=1e-12)


def test_unknown_mode_raises():
    with pytest.raises(ValueError, match="binary, softmax"):
        rec_loss(Tensor(np.zeros((1, 2))), np.array([0]), mode="hinge")


# ------------------------
# InfoNCE
# ------------------------


def test_info_nce_closed_form():
    tau = 0.3
    rows = Tensor([[1.0, 0.0], [0.0, 1.0]])
    expected = -np.log(np.exp(1 / tau) / (np.exp(1 / tau) + 1.0))
    assert info_nce(rows, rows, tau).item() == pytest.approx(expected, abs=1e-12)


def test_info_nce_of_one_pair_is_zero(rng):
    a = Tensor(rng.standard_normal((1, 4)))
    assert info_nce(a, Tensor(rng.standard_normal((1, 4))), 0.3).item() == pytest.approx(0.0, abs=1e-12)


# ------------------------
# Joint objective
# ------------------------


def test_weighted_total():
    weights = LossWeights(gamma=7.0, delta=0.05)
    total = total_loss(
        Tensor(1.0), weights, retriever=Tensor(0.1), self_diffusion=Tensor(0.2), contrastive=Tensor(0.5)
    )
    assert total.item() == pytest.approx(3.125, abs=1e-12)


def test_total_without_auxiliary_terms_is_rec():
    assert total_loss(Tensor(0.7), LossWeights()).item() == 0.7


def test_zero_weights_reduce_to_rec():
    weights = LossWeights(gamma=0.0, delta=0.0, align_weight=0.0)
    total = total_loss(Tensor(0.7), weights, retriever=Tensor(3.0), contrastive=Tensor(2.0), diffusion=Tensor(1.0))
    assert total.item() == pytest.approx(0.7)


def test_negative_weight_is_rejected():
    with pytest.raises(ValueError, match="delta"):
        LossWeights(delta=-0.1)


def test_total_gradient_is_weighted_sum_of_component_gradients(rng):
    x = Parameter(rng.standard_normal(4))
    weights = LossWeights(gamma=7.0, delta=0.05, align_weight=0.1)
    parts = {
        "rec": lambda: T.dot(x, x),
        "retriever": lambda: T.sum(T.sigmoid(x)),
        "contrastive": lambda: T.sum(T.mul(x, Tensor(np.arange(4.0)))),
        "align": lambda: T.sum(T.silu(x)),
    }
    coefficient = {"rec": 1.0, "retriever": 7.0, "contrastive": 0.05, "align": 0.1}

    expected = np.zeros(4)
    for name, build in parts.items():
        backward(build())
        expected += coefficient[name] * x.grad
        x.zero_grad()

    backward(
        total_loss(
            parts["rec"](),
            weights,
            retriever=parts["retriever"](),
            contrastive=parts["contrastive"](),
            align=parts["align"](),
        )
    )
    np.testing.assert_allclose(x.grad, expected, atol=1e-12)
