# ingest/stats.py
from ingest.dataset import SessionDataset
from shared.errors import EmptyDatasetError
from shared.schemas import StatsReport


def stats(dataset: SessionDataset) -> StatsReport:
    """Item, interaction and session counts over both splits."""
    sessions = dataset.sessions
    if not sessions:
        raise EmptyDatasetError("dataset has no sessions")
    interactions = sum(s.m for s in sessions)
    return StatsReport(
        items=dataset.vocab.n,
        interactions=interactions,
        sessions=len(sessions),
        avg_length=interactions / len(sessions),
        zero_filled_rows=dataset.features.zero_filled_rows,
    )
