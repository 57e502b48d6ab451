"""
Learnable neighbour retrieval over a per-epoch snapshot of encoded training
sessions, and the feedback loss that trains the scorer from the generator's
per-neighbour diffusion losses.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from shared import tensor as T
from shared.errors import ShapeError
from shared.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


class ScoreNet:
    """[s_id || s_D] (2d) -> SiLU hidden (d) -> scalar."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "score"):
        self.dim = dim
        b1 = 1.0 / np.sqrt(2 * dim)
        b2 = 1.0 / np.sqrt(dim)
        self.w1 = Parameter(rng.uniform(-b1, b1, size=(2 * dim, dim)), name=f"{name}.w1")
        self.b1 = Parameter(rng.uniform(-b1, b1, size=(dim,)), name=f"{name}.b1")
        self.w2 = Parameter(rng.uniform(-b2, b2, size=(dim, 1)), name=f"{name}.w2")
        self.b2 = Parameter(rng.uniform(-b2, b2, size=(1,)), name=f"{name}.b2")

    def parameters(self) -> dict:
        return {p.name: p for p in (self.w1, self.b1, self.w2, self.b2)}

    def __call__(self, pairs: Tensor) -> Tensor:
        if pairs.ndim != 2 or pairs.shape[1] != 2 * self.dim:
            raise ShapeError("score_net", pairs.shape, (None, 2 * self.dim))
        hidden = T.silu(T.matmul(pairs, self.w1) + self.b1)
        return T.reshape(T.matmul(hidden, self.w2) + self.b2, (pairs.shape[0],))

    def score_against(self, query: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Scores of one query against many candidate rows, without recording a tape."""
        d = self.dim
        hidden = query @ self.w1.data[:d] + candidates @ self.w1.data[d:] + self.b1.data
        hidden = hidden * expit(hidden)
        return (hidden @ self.w2.data).ravel() + self.b2.data[0]


def score_pair(score_net: ScoreNet, s_id: Tensor, s_D: Tensor) -> Tensor:
    pair = T.reshape(T.concat([s_id, s_D]), (1, 2 * score_net.dim))
    return T.reshape(score_net(pair), ())


@dataclass(frozen=True)
class SessionBank:
    reps: np.ndarray  # one encoded training session per row
    sources: np.ndarray  # training-split index of each row
    epoch: int = 0

    @property
    def size(self) -> int:
        return self.reps.shape[0]


@dataclass
class RetrievedNeighbors:
    indices: np.ndarray  # (B, k) bank rows
    rows: np.ndarray  # (B, k, d) neighbour representations
    scores: Tensor  # (B, k) raw scores
    weights: Tensor  # (B, k) softmax over the k scores

    @property
    def k(self) -> int:
        return self.indices.shape[1]


def candidate_pool(
    bank: SessionBank, pool_size: int, rng: np.random.Generator, exclude: int = -1
) -> np.ndarray:
    """Ascending bank rows to score: the whole bank, or a uniform sample of ``pool_size``."""
    candidates = np.flatnonzero(bank.sources != exclude) if exclude >= 0 else np.arange(bank.size)
    if candidates.size <= pool_size:
        return candidates
    return np.sort(rng.choice(candidates, size=pool_size, replace=False))


def top_k(scores: np.ndarray, rows: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best scores; equal scores prefer the lower bank row."""
    return np.lexsort((rows, -scores))[:k]


def retrieve_topk(
    queries: Tensor,
    bank: SessionBank,
    score_net: ScoreNet,
    k: int,
    pool_size: int,
    rng: np.random.Generator,
    exclude: Optional[np.ndarray] = None,
) -> RetrievedNeighbors:
    """
    Select the top-k bank rows per query and weight them by a softmax over
    their scores. Queries enter the scorer detached, so gradients from the
    weights reach only the ScoreNet.
    """
    q = queries.data
    B = q.shape[0]
    exclude = np.full(B, -1) if exclude is None else np.asarray(exclude)
    if k > min(pool_size, bank.size):
        raise ValueError(f"cannot retrieve k={k} neighbours from a bank of {bank.size} (pool {pool_size})")

    chosen = np.zeros((B, k), dtype=np.int64)
    for b in range(B):
        pool = candidate_pool(bank, pool_size, rng, int(exclude[b]))
        if pool.size < k:
            raise ValueError(f"bank has {pool.size} candidates after exclusion, need k={k}")
        scores = score_net.score_against(q[b], bank.reps[pool])
        chosen[b] = pool[top_k(scores, pool, k)]

    rows = bank.reps[chosen]
    pairs = np.concatenate([np.repeat(q[:, None, :], k, axis=1), rows], axis=-1)
    raw = T.reshape(score_net(Tensor(pairs.reshape(B * k, -1))), (B, k))
    logger.debug(f"Retrieved {k} neighbours for {B} sessions from bank epoch {bank.epoch}")
    return RetrievedNeighbors(chosen, rows, raw, T.softmax(raw))


def feedback_loss(weights: Tensor, neighbor_losses: np.ndarray) -> Tensor:
    """sum_j L_d_j * omega_j per session, batch-averaged. L_d_j are constants."""
    neighbor_losses = np.asarray(neighbor_losses, dtype=np.float64)
    if neighbor_losses.shape != weights.shape:
        raise ShapeError("feedback_loss", weights.shape, neighbor_losses.shape)
    return T.sum(T.mul(weights, Tensor(neighbor_losses))) / float(weights.shape[0])


def build_bank(reps: np.ndarray, epoch: int) -> SessionBank:
    return SessionBank(np.array(reps, dtype=np.float64), np.arange(len(reps)), epoch)
