# model/encoder.py
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from model.losses import info_nce
from shared import tensor as T
from shared.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTables:
    id: Parameter
    mo: Parameter

    @classmethod
    def create(
        cls,
        n: int,
        dim: int,
        features: np.ndarray,
        rng: np.random.Generator,
        train_modality: bool = True,
    ) -> "EmbeddingTables":
        if features.shape != (n, dim):
            raise ValueError(f"modality features have shape {features.shape}, expected {(n, dim)}")
        bound = 1.0 / np.sqrt(dim)
        return cls(
            id=Parameter(rng.uniform(-bound, bound, size=(n, dim)), name="E_id"),
            mo=Parameter(features, name="E_mo", trainable=train_modality),
        )


@dataclass
class AttentionParams:
    w1: Parameter
    w2: Parameter

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, name: str) -> "AttentionParams":
        bound = 1.0 / np.sqrt(dim)
        return cls(
            w1=Parameter(rng.uniform(-bound, bound, size=(1, dim)), name=f"{name}.w1"),
            w2=Parameter(rng.uniform(-bound, bound, size=(1, dim)), name=f"{name}.w2"),
        )

    def parameters(self) -> dict:
        return {self.w1.name: self.w1, self.w2.name: self.w2}


def attention_weights(items: Sequence[int], X: Tensor, attn: AttentionParams) -> Tensor:
    """alpha_i = sigmoid(w1 . x_last + w2 . x_i), one scalar per item."""
    items = np.asarray(items, dtype=np.int64)
    last = T.gather(X, np.full(items.shape, items[-1]))
    x = T.gather(X, items)
    logits = T.matmul(last, T.transpose(attn.w1)) + T.matmul(x, T.transpose(attn.w2))
    return T.reshape(T.sigmoid(logits), (len(items),))


def encode_session(items: Sequence[int], X: Tensor, attn: AttentionParams) -> Tensor:
    if len(items) == 0:
        raise ValueError("cannot encode an empty session")
    return T.reshape(encode_batch([items], X, attn), (X.shape[1],))


def encode_batch(sessions: Sequence[Sequence[int]], X: Tensor, attn: AttentionParams) -> Tensor:
    """Attention-pooled representation per session, shape (B, d)."""
    lengths = np.array([len(s) for s in sessions], dtype=np.int64)
    if lengths.size == 0 or (lengths == 0).any():
        raise ValueError("cannot encode an empty session")
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in sessions])
    segments = np.repeat(np.arange(len(sessions)), lengths)
    last = np.repeat([s[-1] for s in sessions], lengths)

    x = T.gather(X, flat)
    logits = T.matmul(T.gather(X, last), T.transpose(attn.w1)) + T.matmul(x, T.transpose(attn.w2))
    alpha = T.sigmoid(logits)
    return T.segment_sum(T.mul(x, alpha), segments, len(sessions))


def align_loss(s_id: Tensor, s_mo: Tensor, tau: float) -> Tensor:
    """Symmetric in-batch InfoNCE between the ID and modality session views."""
    return (info_nce(s_id, s_mo, tau) + info_nce(s_mo, s_id, tau)) * 0.5
