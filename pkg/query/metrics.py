"""
Ranking metrics for next-item prediction and the evaluation loop that
produces them. Ranks are 1-based; equal scores rank the lower item index
first.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ingest.sessions import PrefixTarget
from model.diffsbr import BatchOutput, DiffSBR
from shared.config import rng_for
from shared.errors import EmptyDatasetError, ShapeError
from shared.schemas import EpochLosses, MetricsReport, NeighborDistance

logger = logging.getLogger(__name__)

DEFAULT_KS = (10, 20)


def rank_of_target(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Rank of each row's target: items scoring higher, plus ties at a lower index, plus one."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if scores.shape[0] != targets.shape[0]:
        raise ShapeError("rank_of_target", scores.shape, targets.shape)
    target_scores = scores[np.arange(len(targets)), targets][:, None]
    columns = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target_scores) | ((scores == target_scores) & (columns < targets[:, None]))
    return ahead.sum(axis=1) + 1


def metrics_from_ranks(
    ranks: np.ndarray, ks: Sequence[int] = DEFAULT_KS
) -> Tuple[Dict[int, float], Dict[int, float]]:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EmptyDatasetError("cannot compute metrics without test pairs")
    p_at, mrr_at = {}, {}
    for k in ks:
        hit = ranks <= k
        p_at[k] = float(hit.mean() * 100.0)
        mrr_at[k] = float(np.where(hit, 1.0 / ranks, 0.0).mean() * 100.0)
    return p_at, mrr_at


def metrics_from_scores(
    scores: np.ndarray, targets: np.ndarray, ks: Sequence[int] = DEFAULT_KS
) -> Tuple[Dict[int, float], Dict[int, float]]:
    """P@K and MRR@K in percent."""
    return metrics_from_ranks(rank_of_target(scores, targets), ks)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise 1 - cos(a, b); a zero row has cosine 0 to everything."""
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    dots = (a * b).sum(axis=1)
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return 1.0 - cos


@dataclass
class NeighborDistances:
    """
    Running cosine distances from each session to its generated neighbour and
    to its top-1 retrieved neighbour. Reports None when nothing was retrieved.
    """

    latent: List[np.ndarray] = field(default_factory=list)
    observable: List[np.ndarray] = field(default_factory=list)

    def add(self, out: BatchOutput) -> None:
        if out.neighbors is None or out.s_n0 is None:
            return
        s_id = out.s_id.data
        self.latent.append(cosine_distance(s_id, out.s_n0.data))
        self.observable.append(cosine_distance(s_id, out.neighbors.rows[:, 0, :]))

    def report(self) -> Optional[NeighborDistance]:
        if not self.latent:
            return None
        return NeighborDistance(
            latent=float(np.concatenate(self.latent).mean()),
            observable=float(np.concatenate(self.observable).mean()),
        )


def evaluate(
    model: DiffSBR,
    pairs: Sequence[PrefixTarget],
    train_sessions: Sequence[Sequence[int]],
    ks: Sequence[int] = DEFAULT_KS,
    losses: Optional[List[EpochLosses]] = None,
) -> MetricsReport:
    """
    Score every test prefix with deterministic generation and retrieval from
    a bank of the training sessions encoded with the current parameters.
    """
    if not pairs:
        raise EmptyDatasetError("test split has no prefix/target pairs")
    cfg = model.config
    bank = model.encode_bank(train_sessions) if model.flags.retrieval else None
    rng = rng_for(cfg.seed, "eval")

    ranks, distances = [], NeighborDistances()
    for start in range(0, len(pairs), cfg.batch_size):
        batch = pairs[start : start + cfg.batch_size]
        out = model.infer([p.prefix for p in batch], bank, rng)
        ranks.append(rank_of_target(out.scores.data, np.array([p.target for p in batch])))
        distances.add(out)

    p_at, mrr_at = metrics_from_ranks(np.concatenate(ranks), ks)
    logger.info(
        f"Evaluated {cfg.variant} on {len(pairs)} pairs: "
        + " ".join(f"P@{k}={p_at[k]:.2f} MRR@{k}={mrr_at[k]:.2f}" for k in ks)
    )
    return MetricsReport(
        variant=cfg.variant,
        seed=cfg.seed,
        epochs=len(losses or []),
        p_at=p_at,
        mrr_at=mrr_at,
        losses=list(losses or []),
        neighbor_distance=distances.report(),
        config=cfg.model_dump(mode="json"),
    )
