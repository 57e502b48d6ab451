import logging
from typing import Any, Dict, List, Optional, Sequence

from sqlalchemy import func
from sqlalchemy.exc import SQLAlchemyError

from shared.database import session_scope
from shared.errors import DiffSBRError
from shared.models import RunMetric
from shared.schemas import MetricsReport

logger = logging.getLogger(__name__)


class LedgerError(DiffSBRError):
    pass


STAT_FUNC_MAP = {
    "min": func.min,
    "max": func.max,
    "avg": func.avg,
}


def report_rows(report: MetricsReport) -> Dict[str, float]:
    """Flat metric name -> value, e.g. ``P@10``, ``MRR@20``, ``final_rec``."""
    rows = {f"P@{k}": v for k, v in report.p_at.items()}
    rows.update({f"MRR@{k}": v for k, v in report.mrr_at.items()})
    if report.losses:
        rows["final_rec"] = report.losses[-1].rec
        rows["final_total"] = report.losses[-1].total
    if report.neighbor_distance is not None:
        rows["distance_latent"] = report.neighbor_distance.latent
        rows["distance_observable"] = report.neighbor_distance.observable
    return rows


def record_report(report: MetricsReport, run_name: str, url: Optional[str] = None) -> int:
    """Append one ledger row per metric. Returns the row count."""
    rows = report_rows(report)
    try:
        with session_scope(url) as db:
            db.add_all(
                RunMetric(run_name=run_name, variant=report.variant, seed=report.seed, metric=name, value=value)
                for name, value in rows.items()
            )
    except SQLAlchemyError as e:
        logger.error(f"Database error while recording run {run_name}: {str(e)}", exc_info=True)
        raise LedgerError(f"could not record run {run_name}") from e
    logger.info(f"Recorded {len(rows)} metrics for run {run_name}")
    return len(rows)


def summarize(
    url: Optional[str] = None,
    variants: Optional[Sequence[str]] = None,
    metrics: Optional[Sequence[str]] = None,
) -> List[Dict[str, Any]]:
    """
    Aggregate the ledger per (variant, metric): run count plus avg, min and max.
    """
    try:
        with session_scope(url) as db:
            query = db.query(
                RunMetric.variant,
                RunMetric.metric,
                func.count(RunMetric.id).label("runs"),
                *(agg(RunMetric.value).label(name) for name, agg in STAT_FUNC_MAP.items()),
            )
            if variants:
                query = query.filter(RunMetric.variant.in_(list(variants)))
            if metrics:
                query = query.filter(RunMetric.metric.in_(list(metrics)))
            rows = (
                query.group_by(RunMetric.variant, RunMetric.metric)
                .order_by(RunMetric.variant, RunMetric.metric)
                .all()
            )
    except SQLAlchemyError as e:
        logger.error(f"Database error while summarizing runs: {str(e)}", exc_info=True)
        raise LedgerError("could not read the run ledger") from e

    return [
        {
            "variant": row.variant,
            "metric": row.metric,
            "runs": int(row.runs),
            **{name: float(getattr(row, name)) for name in STAT_FUNC_MAP},
        }
        for row in rows
    ]
