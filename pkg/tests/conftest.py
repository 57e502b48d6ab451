# Test configuration
import os
import sys

# Add project root to PYTHONPATH
ROOT_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, ROOT_DIR)

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from ingest.synth import synth_dataset  # noqa: E402
from shared.schemas import RunConfig  # noqa: E402


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep the caller's seed and ledger settings out of every test."""
    monkeypatch.delenv("DSBR_SEED", raising=False)
    monkeypatch.delenv("DSBR_DATABASE_URL", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_dataset():
    """3 clusters x 6 items, 60 sessions of length 4, 8-dim features."""
    return synth_dataset(
        n_clusters=3,
        items_per_cluster=6,
        n_sessions=60,
        session_len=4,
        leak_prob=0.1,
        seed=3,
        feature_dim=8,
    )


@pytest.fixture
def tiny_config():
    return RunConfig(
        dim=8,
        layers=2,
        steps=8,
        reverse_steps=4,
        k=2,
        pool_size=16,
        batch_size=16,
        epochs=2,
        seed=5,
    )
