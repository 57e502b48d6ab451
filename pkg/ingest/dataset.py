# ingest/dataset.py
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from ingest.features import FeatureMatrix, align_features, read_features, reduce_to_dim, write_features
from ingest.sessions import (
    ItemVocab,
    PrefixTarget,
    SessionRecord,
    load_sessions,
    read_split,
    split_last_item,
    temporal_split,
    write_split,
)
from shared.errors import EmptyDatasetError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SessionDataset:
    train: Tuple[SessionRecord, ...]
    test: Tuple[SessionRecord, ...]
    vocab: ItemVocab
    features: FeatureMatrix
    split: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.train or not self.test:
            raise EmptyDatasetError("both the train and the test split need sessions")
        if self.features.n != self.vocab.n:
            raise ValueError(f"feature rows {self.features.n} do not match {self.vocab.n} items")
        train_ids = {s.session_id for s in self.train}
        overlap = train_ids.intersection(s.session_id for s in self.test)
        if overlap:
            raise ValueError(f"{len(overlap)} sessions appear in both splits")

    @property
    def sessions(self) -> Tuple[SessionRecord, ...]:
        return self.train + self.test

    def train_pairs(self) -> List[PrefixTarget]:
        return split_last_item(self.train, augment=True)

    def test_pairs(self) -> List[PrefixTarget]:
        return split_last_item(self.test, augment=False)


def prepare_dataset(
    sessions_path,
    features_path=None,
    dim: int = 100,
    min_item_count: int = 5,
    test_fraction: float = 0.1,
) -> SessionDataset:
    loaded = load_sessions(sessions_path, min_item_count=min_item_count)
    train, test = temporal_split(loaded.sessions, test_fraction)

    if features_path:
        ids, values = read_features(features_path)
        features = reduce_to_dim(align_features(loaded.vocab, ids, values), dim)
    else:
        logger.warning("No feature file given; modality features are zero-filled")
        features = FeatureMatrix.zeros(loaded.vocab.n, dim)

    split = {"policy": "temporal", "test_fraction": test_fraction, "min_item_count": min_item_count}
    return SessionDataset(train, test, loaded.vocab, features, split)


def save_dataset(dataset: SessionDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_split(dataset.train, directory / "train.tsv")
    write_split(dataset.test, directory / "test.tsv")
    (directory / "items.txt").write_text("".join(f"{i}\n" for i in dataset.vocab.ids), encoding="utf-8")
    write_features(directory / "features.bin", dataset.vocab.ids, dataset.features.values)
    meta = dict(dataset.split, zero_filled=dataset.features.zero_filled.nonzero()[0].tolist())
    (directory / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Saved dataset to {directory}")
    return directory


def load_dataset(directory) -> SessionDataset:
    directory = Path(directory)
    for name in ("train.tsv", "test.tsv", "items.txt", "features.bin", "dataset.json"):
        if not (directory / name).exists():
            raise FileNotFoundError(f"dataset file not found: {directory / name}")

    vocab = ItemVocab.from_ids(
        line for line in (directory / "items.txt").read_text(encoding="utf-8").splitlines() if line
    )
    _, values = read_features(directory / "features.bin")
    meta = json.loads((directory / "dataset.json").read_text(encoding="utf-8"))
    zero_filled = [False] * vocab.n
    for idx in meta.pop("zero_filled", []):
        zero_filled[idx] = True

    features = FeatureMatrix(values, np.array(zero_filled, dtype=bool))
    train, test = read_split(directory / "train.tsv"), read_split(directory / "test.tsv")
    return SessionDataset(train, test, vocab, features, meta)
