"""
Session log loading, frequency filtering, temporal splitting and prefix
expansion.
"""

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from shared.errors import DataFormatError, EmptyDatasetError

logger = logging.getLogger(__name__)

COLUMNS = ["session_id", "item_id", "timestamp"]


@dataclass(frozen=True)
class ItemVocab:
    ids: Tuple[str, ...]
    index: Mapping[str, int] = field(repr=False)

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "ItemVocab":
        ordered = tuple(ids)
        index = {item: i for i, item in enumerate(ordered)}
        if len(index) != len(ordered):
            raise ValueError("vocabulary ids must be unique")
        return cls(ids=ordered, index=index)

    @property
    def n(self) -> int:
        return len(self.ids)

    def encode(self, items: Iterable[str]) -> Tuple[int, ...]:
        return tuple(self.index[item] for item in items)

    def decode(self, indices: Iterable[int]) -> Tuple[str, ...]:
        return tuple(self.ids[i] for i in indices)


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    items: Tuple[int, ...]
    start: int = 0

    @property
    def m(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class PrefixTarget:
    prefix: Tuple[int, ...]
    target: int
    # index of the originating session in the training split, -1 for test
    source: int = -1


@dataclass(frozen=True)
class LoadedSessions:
    sessions: Tuple[SessionRecord, ...]
    vocab: ItemVocab
    dropped_items: int = 0
    dropped_sessions: int = 0


def _line_from_parser_error(message: str) -> int | None:
    match = re.search(r"line (\d+)", message)
    return int(match.group(1)) if match else None


def _first_undecodable_line(path: Path) -> int | None:
    for number, raw in enumerate(path.read_bytes().split(b"\n"), start=1):
        try:
            raw.decode("utf-8")
        except UnicodeDecodeError:
            return number
    return None


def _read_interactions(path: Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path,
            sep="\t",
            header=None,
            names=COLUMNS,
            dtype=str,
            keep_default_na=False,
            na_values=[],
            skip_blank_lines=False,
            quoting=csv.QUOTE_NONE,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"{path}: no interactions") from None
    except pd.errors.ParserError as e:
        raise DataFormatError(path, _line_from_parser_error(str(e)), "expected 3 tab-separated fields") from None
    except UnicodeDecodeError:
        raise DataFormatError(path, _first_undecodable_line(Path(path)), "not valid UTF-8") from None

    frame["line"] = np.arange(1, len(frame) + 1)
    blank = frame[COLUMNS].apply(lambda col: col.fillna("").str.strip() == "").all(axis=1)
    frame = frame[~blank]

    missing = frame[COLUMNS].isna().any(axis=1) | (frame[COLUMNS].fillna("") == "").any(axis=1)
    if missing.any():
        line = int(frame.loc[missing, "line"].iloc[0])
        raise DataFormatError(path, line, "expected session_id, item_id and timestamp")

    timestamps = pd.to_numeric(frame["timestamp"], errors="coerce")
    bad = timestamps.isna() | (timestamps != timestamps.round())
    if bad.any():
        line = int(frame.loc[bad, "line"].iloc[0])
        raise DataFormatError(path, line, f"timestamp is not an integer: {frame.loc[bad, 'timestamp'].iloc[0]!r}")
    frame["timestamp"] = timestamps.astype(np.int64)
    return frame


def filter_sessions(
    sessions: Sequence[Sequence[str]], min_item_count: int = 5
) -> Tuple[List[int], List[List[str]]]:
    """
    Repeatedly drop rare items and sessions shorter than two until nothing
    changes. Returns the indices of surviving sessions and their items.
    """
    kept = list(range(len(sessions)))
    current = [list(s) for s in sessions]
    while True:
        counts = Counter(item for s in current for item in s)
        filtered = [[item for item in s if counts[item] >= min_item_count] for s in current]
        survivors = [(i, s) for i, s in zip(kept, filtered) if len(s) >= 2]
        changed = len(survivors) != len(current) or any(
            len(s) != len(c) for (_, s), c in zip(survivors, current)
        )
        kept = [i for i, _ in survivors]
        current = [s for _, s in survivors]
        if not changed:
            return kept, current


def load_sessions(path, min_item_count: int = 5) -> LoadedSessions:
    """
    Read ``session_id TAB item_id TAB timestamp`` lines, group them by
    session in timestamp order (file order breaks ties) and filter.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sessions file not found: {path}")

    frame = _read_interactions(path).sort_values("timestamp", kind="mergesort")
    ids: List[str] = []
    starts: List[int] = []
    raw: List[List[str]] = []
    for session_id, group in frame.groupby("session_id", sort=False):
        ids.append(str(session_id))
        starts.append(int(group["timestamp"].iloc[0]))
        raw.append(group["item_id"].tolist())

    kept, items = filter_sessions(raw, min_item_count)
    if not items:
        raise EmptyDatasetError(f"{path}: no sessions left after filtering")

    before = {item for s in raw for item in s}
    vocab = ItemVocab.from_ids(sorted({item for s in items for item in s}))
    dropped_items = len(before) - vocab.n
    dropped_sessions = len(raw) - len(items)
    if dropped_items or dropped_sessions:
        logger.warning(f"Filtering removed {dropped_items} items and {dropped_sessions} sessions")

    records = tuple(
        SessionRecord(session_id=ids[i], items=vocab.encode(s), start=starts[i])
        for i, s in zip(kept, items)
    )
    logger.info(f"Loaded {len(records)} sessions over {vocab.n} items from {path}")
    return LoadedSessions(records, vocab, dropped_items, dropped_sessions)


def temporal_split(
    sessions: Sequence[SessionRecord], test_fraction: float = 0.1
) -> Tuple[Tuple[SessionRecord, ...], Tuple[SessionRecord, ...]]:
    """Hold out the latest ``test_fraction`` of sessions by start time."""
    if len(sessions) < 2:
        raise EmptyDatasetError("need at least two sessions to split")
    order = sorted(range(len(sessions)), key=lambda i: (sessions[i].start, i))
    n_test = min(len(sessions) - 1, max(1, int(np.ceil(test_fraction * len(sessions)))))
    cut = len(order) - n_test
    train = tuple(sessions[i] for i in order[:cut])
    test = tuple(sessions[i] for i in order[cut:])
    return train, test


def split_last_item(sessions: Sequence[SessionRecord], augment: bool = False) -> List[PrefixTarget]:
    """
    Turn sessions into (prefix, next item) pairs. Without ``augment`` only
    the final item is a target. With it, every position after the first is.
    """
    pairs: List[PrefixTarget] = []
    for idx, session in enumerate(sessions):
        if session.m < 2:
            raise ValueError(f"session {session.session_id} has length {session.m}, need at least 2")
        source = idx if augment else -1
        positions = range(1, session.m) if augment else (session.m - 1,)
        for cut in positions:
            pairs.append(PrefixTarget(session.items[:cut], session.items[cut], source))
    return pairs


def write_split(sessions: Sequence[SessionRecord], path) -> Path:
    path = Path(path)
    rows = [
        (s.session_id, item, s.start + pos)
        for s in sessions
        for pos, item in enumerate(s.items)
    ]
    pd.DataFrame(rows, columns=COLUMNS).to_csv(path, sep="\t", header=False, index=False)
    return path


def read_split(path) -> Tuple[SessionRecord, ...]:
    """Read a split written by :func:`write_split` (item column holds indices)."""
    frame = _read_interactions(Path(path))
    records: Dict[str, List] = {}
    for session_id, item, ts in frame[COLUMNS].itertuples(index=False):
        entry = records.setdefault(session_id, [int(ts), []])
        entry[1].append(int(item))
    return tuple(SessionRecord(sid, tuple(items), start) for sid, (start, items) in records.items())
