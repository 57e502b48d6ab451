# shared/database.py
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

logger = logging.getLogger(__name__)

DATABASE_URL_ENV = "DSBR_DATABASE_URL"

# One engine and session factory per database URL (cached per process)
_engines: Dict[str, Engine] = {}
_session_factories: Dict[str, sessionmaker] = {}

Base = declarative_base()


def get_database_url(out_dir=None) -> str:
    """DSBR_DATABASE_URL if set, else a SQLite file ``runs.db`` under ``out_dir``."""
    url = os.getenv(DATABASE_URL_ENV)
    if url:
        return url
    directory = Path(out_dir) if out_dir is not None else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    return f"sqlite:///{(directory / 'runs.db').as_posix()}"


def get_engine(url: str) -> Engine:
    """Get SQLAlchemy engine (lazy initialization, tables created on first use)"""
    engine = _engines.get(url)
    if engine is None:
        engine = create_engine(
            url,
            connect_args={"check_same_thread": False} if url.startswith("sqlite") else {},
        )
        # registers the ledger table on Base.metadata
        import shared.models  # noqa: F401

        Base.metadata.create_all(bind=engine, checkfirst=True)
        _engines[url] = engine
        logger.debug(f"Opened run ledger at {url}")
    return engine


def get_session_local(url: str) -> sessionmaker:
    factory = _session_factories.get(url)
    if factory is None:
        factory = _session_factories[url] = sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))
    return factory


@contextmanager
def session_scope(url: Optional[str] = None) -> Iterator[Session]:
    """Commit on success, roll back on error, always close."""
    db = get_session_local(url or get_database_url())()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()


def dispose_engines() -> None:
    for engine in _engines.values():
        engine.dispose()
    _engines.clear()
    _session_factories.clear()
