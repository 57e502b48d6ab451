# model/losses.py
from dataclasses import dataclass

import numpy as np

from shared import tensor as T
from shared.errors import ShapeError
from shared.tensor import Tensor


def info_nce(anchors: Tensor, positives: Tensor, tau: float) -> Tensor:
    """
    In-batch InfoNCE over cosine similarity. Row i of ``anchors`` is paired
    with row i of ``positives``; every other row is a negative. Zero rows
    have cosine 0 against everything.
    """
    if anchors.shape != positives.shape:
        raise ShapeError("info_nce", anchors.shape, positives.shape)
    sims = T.matmul(T.l2_normalize(anchors), T.transpose(T.l2_normalize(positives)))
    return T.softmax_cross_entropy(sims * (1.0 / tau), np.arange(anchors.shape[0]))


def rec_loss(scores: Tensor, targets: np.ndarray, mode: str = "softmax") -> Tensor:
    """
    Next-item loss averaged over the batch. ``softmax`` is cross-entropy over
    the whole vocabulary. ``binary`` sums per-item binary cross-entropy over
    softmax-normalised scores.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if mode == "softmax":
        return T.softmax_cross_entropy(scores, targets)
    if mode != "binary":
        raise ValueError(f"Invalid rec_loss mode '{mode}'. Allowed values: binary, softmax")
    probs = T.softmax(scores)
    onehot = np.zeros(scores.shape)
    onehot[np.arange(scores.shape[0]), targets] = 1.0
    y = Tensor(onehot)
    per_item = T.mul(y, T.log(probs)) + T.mul(1.0 - y, T.log(1.0 - probs))
    return -T.sum(per_item) / float(scores.shape[0])


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 7.0
    delta: float = 0.05
    align_weight: float = 0.1

    def __post_init__(self):
        for name in ("gamma", "delta", "align_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def total_loss(
    rec: Tensor,
    weights: LossWeights,
    retriever: Tensor | None = None,
    self_diffusion: Tensor | None = None,
    contrastive: Tensor | None = None,
    align: Tensor | None = None,
    diffusion: Tensor | None = None,
) -> Tensor:
    """L_e + gamma (L_d + L_r + L_s) + delta L_m + align_weight L_align. Missing terms count as zero."""
    total = rec
    for term, weight in (
        (diffusion, weights.gamma),
        (retriever, weights.gamma),
        (self_diffusion, weights.gamma),
        (contrastive, weights.delta),
        (align, weights.align_weight),
    ):
        if term is not None:
            total = total + term * weight
    return total
