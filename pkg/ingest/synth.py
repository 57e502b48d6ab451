"""
Planted-cluster session generator used by the acceptance benchmark.

Items are partitioned into clusters. A session picks one cluster, draws its
items from it, and each non-final item is swapped for an out-of-cluster item
with probability ``leak_prob``. The final item, the prediction target, always
stays in the cluster. Modality features are the cluster centroid plus
Gaussian noise.
"""

import logging

import numpy as np

from ingest.dataset import SessionDataset
from ingest.features import FeatureMatrix
from ingest.sessions import ItemVocab, SessionRecord, temporal_split
from shared.config import rng_for

logger = logging.getLogger(__name__)

FEATURE_NOISE = 0.1


def cluster_of(item: int, items_per_cluster: int) -> int:
    return item // items_per_cluster


def synth_dataset(
    n_clusters: int,
    items_per_cluster: int,
    n_sessions: int,
    session_len: int,
    leak_prob: float,
    seed: int,
    feature_dim: int = 100,
    test_fraction: float = 0.1,
) -> SessionDataset:
    for name, value in (
        ("n_clusters", n_clusters),
        ("items_per_cluster", items_per_cluster),
        ("n_sessions", n_sessions),
        ("session_len", session_len),
        ("feature_dim", feature_dim),
    ):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if session_len < 2:
        raise ValueError("session_len must be at least 2")
    if not 0.0 <= leak_prob <= 1.0:
        raise ValueError(f"leak_prob must lie in [0, 1], got {leak_prob}")

    rng = rng_for(seed, "data")
    n_items = n_clusters * items_per_cluster
    width = len(str(n_items - 1))
    vocab = ItemVocab.from_ids(f"item{i:0{width}d}" for i in range(n_items))

    sessions = []
    for s in range(n_sessions):
        cluster = int(rng.integers(n_clusters))
        members = np.arange(cluster * items_per_cluster, (cluster + 1) * items_per_cluster)
        items = rng.choice(members, size=session_len, replace=session_len > items_per_cluster)
        if n_clusters > 1:
            leaks = rng.random(session_len - 1) < leak_prob
            for pos in np.flatnonzero(leaks):
                other = int(rng.integers(n_items - items_per_cluster))
                items[pos] = other if other < members[0] else other + items_per_cluster
        sessions.append(SessionRecord(f"s{s}", tuple(int(i) for i in items), start=s))

    centroids = rng.standard_normal((n_clusters, feature_dim))
    labels = np.arange(n_items) // items_per_cluster
    values = centroids[labels] + FEATURE_NOISE * rng.standard_normal((n_items, feature_dim))

    train, test = temporal_split(sessions, test_fraction)
    split = {
        "policy": "temporal",
        "test_fraction": test_fraction,
        "synthetic": {
            "n_clusters": n_clusters,
            "items_per_cluster": items_per_cluster,
            "n_sessions": n_sessions,
            "session_len": session_len,
            "leak_prob": leak_prob,
            "seed": seed,
        },
    }
    logger.info(f"Generated {n_sessions} synthetic sessions over {n_items} items")
    return SessionDataset(train, test, vocab, FeatureMatrix(values, np.zeros(n_items, dtype=bool)), split)
