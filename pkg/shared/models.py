# shared/models.py
from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, Integer, String

from .database import Base


class RunMetric(Base):
    __tablename__ = "run_metrics"

    id = Column(Integer, primary_key=True, index=True)
    run_name = Column(String(200), index=True, nullable=False)
    variant = Column(String(50), index=True, nullable=False)
    seed = Column(Integer, nullable=False)
    metric = Column(String(50), index=True, nullable=False)
    value = Column(Float, nullable=False)
    created_at = Column(DateTime, nullable=False, default=lambda: datetime.now(timezone.utc), index=True)
