# query/sknn.py
import logging
from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy import sparse
from sklearn.metrics import pairwise

from ingest.sessions import PrefixTarget
from query.metrics import DEFAULT_KS, metrics_from_ranks, rank_of_target
from shared.errors import EmptyDatasetError
from shared.schemas import MetricsReport

logger = logging.getLogger(__name__)

QUERY_BATCH = 1024


def incidence_matrix(sessions: Sequence[Sequence[int]], n: int) -> sparse.csr_matrix:
    """Binary session x item matrix; repeated items count once."""
    rows = np.repeat(np.arange(len(sessions)), [len(s) for s in sessions])
    cols = np.array([], dtype=np.int64)
    if sessions:
        cols = np.concatenate([np.asarray(s, dtype=np.int64) for s in sessions])
    matrix = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(sessions), n))
    matrix.data[:] = 1.0
    return matrix


def top_neighbours(sims: sparse.csr_matrix, k_nn: int) -> sparse.csr_matrix:
    """
    Keep the k_nn largest stored similarities of every row. Among equal
    similarities the lower training index wins.
    """
    sims = sparse.csr_matrix(sims)
    sims.sort_indices()
    rows, cols, vals = [], [], []
    for i in range(sims.shape[0]):
        lo, hi = sims.indptr[i], sims.indptr[i + 1]
        row_cols, row_vals = sims.indices[lo:hi], sims.data[lo:hi]
        keep = np.lexsort((row_cols, -row_vals))[:k_nn]
        rows.append(np.full(len(keep), i))
        cols.append(row_cols[keep])
        vals.append(row_vals[keep])
    if not rows:
        return sparse.csr_matrix(sims.shape)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=sims.shape
    )


def neighbour_votes(corpus: sparse.csr_matrix, queries: sparse.csr_matrix, k_nn: int) -> np.ndarray:
    """Dense (Q, n) item scores; only the score matrix itself is dense."""
    sims = pairwise.cosine_similarity(queries, corpus, dense_output=False)
    weights = top_neighbours(sims, k_nn)
    scores = np.asarray((weights @ corpus).toarray())
    scores[queries.nonzero()] = -np.inf
    return scores


def sknn_scores(
    train_sessions: Sequence[Sequence[int]],
    prefixes: Sequence[Sequence[int]],
    n: int,
    k_nn: int = 100,
) -> np.ndarray:
    """
    Item scores per query: summed similarity of the k_nn most similar training
    sessions that contain the item. Items already in the query score -inf.
    """
    corpus = incidence_matrix(train_sessions, n)
    return neighbour_votes(corpus, incidence_matrix(prefixes, n), k_nn)


def sknn_baseline(
    train_sessions: Sequence[Sequence[int]],
    pairs: Sequence[PrefixTarget],
    n: int,
    k_nn: int = 100,
    ks: Sequence[int] = DEFAULT_KS,
    seed: int = 0,
    config: Optional[Dict[str, Any]] = None,
) -> MetricsReport:
    if not train_sessions or not pairs:
        raise EmptyDatasetError("the SKNN baseline needs training sessions and test pairs")
    corpus = incidence_matrix(train_sessions, n)
    ranks = []
    for start in range(0, len(pairs), QUERY_BATCH):
        batch = pairs[start : start + QUERY_BATCH]
        scores = neighbour_votes(corpus, incidence_matrix([p.prefix for p in batch], n), k_nn)
        ranks.append(rank_of_target(scores, np.array([p.target for p in batch])))
    p_at, mrr_at = metrics_from_ranks(np.concatenate(ranks), ks)
    logger.info(f"SKNN (k_nn={k_nn}) on {len(pairs)} pairs: P@{ks[0]}={p_at[ks[0]]:.2f}")
    return MetricsReport(
        variant="sknn",
        seed=seed,
        epochs=0,
        p_at=p_at,
        mrr_at=mrr_at,
        config=config or {"k_nn": k_nn},
    )
