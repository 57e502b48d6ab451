# shared/config.py
import logging
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from shared.schemas import RunConfig

logger = logging.getLogger(__name__)

SEED_ENV = "DSBR_SEED"

# Named random sub-streams, all derived from the run seed.
STREAMS = ("data", "init", "shuffle", "noise", "retrieval", "eval")


def rng_for(seed: int, stream: str) -> np.random.Generator:
    if stream not in STREAMS:
        raise ValueError(f"Unknown random stream '{stream}'. Known: {', '.join(STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS.index(stream),)))


def read_config_file(path) -> dict[str, str]:
    """Parse a flat ``key=value`` file. Blank lines and ``#`` comments are skipped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def build_config(
    config_file=None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """File values, then ``DSBR_SEED``, then explicit overrides (flags win)."""
    values: dict[str, Any] = {}
    if config_file:
        values.update(read_config_file(config_file))
    if "seed" not in values and os.getenv(SEED_ENV):
        values["seed"] = os.environ[SEED_ENV]
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def write_config_file(config: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={value}" for key, value in config.model_dump(mode="json").items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
