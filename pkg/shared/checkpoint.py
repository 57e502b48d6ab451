"""
DSBR tensor archive.

Layout, little-endian throughout: magic ``DSBR``, u32 version, u32 record
count, then per record a u32 name length, the UTF-8 name, a u32 rank, ``rank``
u64 dimensions and the float64 payload in row-major order.
"""

import logging
from pathlib import Path
from typing import Mapping

import numpy as np

from shared.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DSBR"
VERSION = 1


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array([VERSION, len(tensors)], dtype="<u4").tobytes())
        for name, array in tensors.items():
            # ascontiguousarray would promote rank 0 to rank 1
            array = np.asarray(array, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(np.array([len(encoded)], dtype="<u4").tobytes())
            f.write(encoded)
            f.write(np.array([array.ndim], dtype="<u4").tobytes())
            f.write(np.array(array.shape, dtype="<u8").tobytes())
            f.write(array.tobytes(order="C"))
    logger.info(f"Wrote {len(tensors)} tensors to {path}")
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated archive at byte {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def ints(self, dtype: str, count: int) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(width * count), dtype=dtype)


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a DSBR archive")
    version, count = (int(x) for x in reader.ints("<u4", 2))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.ints("<u4", 1)
        name = reader.take(int(name_len)).decode("utf-8")
        (rank,) = reader.ints("<u4", 1)
        dims = tuple(int(d) for d in reader.ints("<u8", int(rank)))
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = reader.ints("<f8", size).reshape(dims).astype(np.float64)
    if reader.pos != len(reader.raw):
        raise CheckpointError(f"{path}: trailing bytes after {count} records")
    return tensors
