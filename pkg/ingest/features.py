"""
Per-item modality features: the DSFT binary format, alignment to the item
vocabulary, and PCA reduction to the model dimension.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from ingest.sessions import ItemVocab
from shared.errors import DataFormatError

logger = logging.getLogger(__name__)

MAGIC = b"DSFT"
VERSION = 1
PCA_TOL = 1e-9
PCA_MAX_ITER = 1000


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    zero_filled: np.ndarray  # bool per row, True where no feature row was supplied

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def zero_filled_rows(self) -> int:
        return int(self.zero_filled.sum())

    @classmethod
    def zeros(cls, n: int, dim: int) -> "FeatureMatrix":
        return cls(np.zeros((n, dim)), np.ones(n, dtype=bool))


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids")


def write_features(path, ids: Sequence[str], values: np.ndarray) -> Path:
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2 or values.shape[0] != len(ids):
        raise ValueError(f"feature matrix shape {values.shape} does not match {len(ids)} ids")
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array([VERSION], dtype="<u4").tobytes())
        f.write(np.array(values.shape, dtype="<u8").tobytes())
        f.write(values.tobytes())
    return path


def read_features(path) -> Tuple[Tuple[str, ...], np.ndarray]:
    path = Path(path)
    ids_path = manifest_path(path)
    for p in (path, ids_path):
        if not p.exists():
            raise FileNotFoundError(f"feature file not found: {p}")

    raw = path.read_bytes()
    header = 4 + 4 + 16
    if len(raw) < header or raw[:4] != MAGIC:
        raise DataFormatError(path, None, "not a DSFT feature file")
    (version,) = np.frombuffer(raw[4:8], dtype="<u4")
    if version != VERSION:
        raise DataFormatError(path, None, f"unsupported version {int(version)}")
    n, d_feat = (int(x) for x in np.frombuffer(raw[8:24], dtype="<u8"))
    payload = raw[header:]
    if len(payload) != n * d_feat * 8:
        raise DataFormatError(path, None, f"expected {n}x{d_feat} float64 payload")
    values = np.frombuffer(payload, dtype="<f8").reshape(n, d_feat).astype(np.float64)

    ids = tuple(line for line in ids_path.read_text(encoding="utf-8").splitlines() if line)
    if len(ids) != n:
        raise DataFormatError(ids_path, None, f"manifest lists {len(ids)} ids, feature file has {n} rows")
    return ids, values


def align_features(vocab: ItemVocab, ids: Sequence[str], values: np.ndarray) -> FeatureMatrix:
    """Reorder feature rows into vocabulary order, zero-filling items without a row."""
    position = {item: row for row, item in enumerate(ids)}
    aligned = np.zeros((vocab.n, values.shape[1]))
    zero_filled = np.ones(vocab.n, dtype=bool)
    for idx, item in enumerate(vocab.ids):
        row = position.get(item)
        if row is not None:
            aligned[idx] = values[row]
            zero_filled[idx] = False
    if zero_filled.any():
        logger.warning(f"{int(zero_filled.sum())} of {vocab.n} items have no feature row; zero-filled")
    return FeatureMatrix(aligned, zero_filled)


@dataclass(frozen=True)
class PrincipalComponents:
    mean: np.ndarray
    components: np.ndarray  # d x d_feat, unit rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) @ self.components.T


def fit_pca(X: np.ndarray, d: int, tol: float = PCA_TOL, max_iter: int = PCA_MAX_ITER) -> PrincipalComponents:
    """
    Top-``d`` principal components by power iteration with deflation. Each
    component is re-orthogonalised against the previous ones and its sign
    is fixed so the largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d_feat = X.shape
    if d > min(n, d_feat):
        raise ValueError(f"cannot keep {d} components from a {n}x{d_feat} matrix")
    mean = X.mean(axis=0)
    centered = X - mean
    rank = int(np.linalg.matrix_rank(centered))
    if d > rank:
        raise ValueError(f"requested {d} components but the centred data has rank {rank}")

    cov = centered.T @ centered / max(n - 1, 1)
    total = float(np.trace(cov))
    rng = np.random.default_rng(0)
    components = np.zeros((d, d_feat))
    variances = np.zeros(d)
    work = cov.copy()
    for c in range(d):
        v = rng.standard_normal(d_feat)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = work @ v
            w -= components[:c].T @ (components[:c] @ w)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            if w @ v < 0:
                w = -w
            delta = np.linalg.norm(w - v)
            v = w
            if delta < tol:
                break
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[c] = v
        variances[c] = float(v @ cov @ v)
        work = work - variances[c] * np.outer(v, v)
    return PrincipalComponents(mean, components, variances, total)


def pca_reduce(X: np.ndarray, d: int) -> np.ndarray:
    return fit_pca(X, d).transform(np.asarray(X, dtype=np.float64))


def reduce_to_dim(features: FeatureMatrix, dim: int) -> FeatureMatrix:
    """Bring a feature matrix to the model dimension, keeping provenance."""
    if features.dim == dim:
        return features
    if features.dim < dim:
        raise ValueError(f"features have {features.dim} dimensions, cannot reach {dim}")
    if features.zero_filled.all():
        return FeatureMatrix.zeros(features.n, dim)
    logger.info(f"PCA-reducing features from {features.dim} to {dim} dimensions")
    return FeatureMatrix(pca_reduce(features.values, dim), features.zero_filled.copy())
