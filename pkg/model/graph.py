"""
Directed item co-occurrence graph and the L-layer graph convolution applied
to both the ID and the modality embedding tables.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from shared import tensor as T
from shared.errors import ShapeError
from shared.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoGraph:
    adjacency: sparse.csr_matrix
    out_degree: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.nnz)

    @cached_property
    def _transitions(self) -> dict:
        inv = np.zeros_like(self.out_degree)
        live = self.out_degree > 0
        inv[live] = 1.0 / self.out_degree[live]
        plain = sparse.csr_matrix(sparse.diags(inv) @ self.adjacency)
        looped = sparse.csr_matrix(plain + sparse.diags((~live).astype(np.float64)))
        return {False: plain, True: looped}

    def transition(self, self_loops: bool = False) -> sparse.csr_matrix:
        """D^-1 A. Rows without out-edges are zero, or identity rows with ``self_loops``."""
        return self._transitions[bool(self_loops)]


def build_graph(sessions: Iterable[Sequence[int]], n: int) -> CoGraph:
    """Count every consecutive (v_i, v_i+1) transition as a directed edge."""
    src: List[int] = []
    dst: List[int] = []
    for items in sessions:
        src.extend(items[:-1])
        dst.extend(items[1:])
    rows = np.asarray(src, dtype=np.int64)
    cols = np.asarray(dst, dtype=np.int64)
    adjacency = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adjacency.sum_duplicates()
    out_degree = np.asarray(adjacency.sum(axis=1)).ravel()
    logger.info(f"Built item graph with {adjacency.nnz} edges over {n} items")
    return CoGraph(adjacency, out_degree)


def write_graph_tsv(graph: CoGraph, path, ids: Sequence[str] | None = None) -> Path:
    coo = graph.adjacency.tocoo()
    order = np.lexsort((coo.col, coo.row))
    rows, cols, weights = coo.row[order], coo.col[order], coo.data[order]
    label = (lambda i: ids[i]) if ids is not None else (lambda i: i)
    frame = pd.DataFrame(
        {
            "src": [label(int(r)) for r in rows],
            "dst": [label(int(c)) for c in cols],
            "weight": weights.astype(np.int64),
        }
    )
    frame.to_csv(path, sep="\t", header=False, index=False)
    return Path(path)


class GcnStack:
    """L square weight matrices for one channel."""

    def __init__(self, dim: int, layers: int, rng: np.random.Generator, name: str):
        if layers < 1:
            raise ValueError(f"GCN needs at least one layer, got {layers}")
        bound = 1.0 / np.sqrt(dim)
        self.dim = dim
        self.weights = [
            Parameter(rng.uniform(-bound, bound, size=(dim, dim)), name=f"{name}.{l}")
            for l in range(layers)
        ]

    @property
    def layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> dict:
        return {w.name: w for w in self.weights}


def gcn_layer(X: Tensor, graph: CoGraph, W: Tensor, self_loops: bool = False) -> Tensor:
    """Norm(D^-1 A X W) with row-wise L2 normalisation."""
    if graph.n != X.shape[0]:
        raise ShapeError("gcn_layer", (graph.n, graph.n), X.shape)
    return T.l2_normalize(T.sparse_matmul(graph.transition(self_loops), T.matmul(X, W)))


def gcn_forward(X0: Tensor, graph: CoGraph, stack: GcnStack, self_loops: bool = False) -> Tensor:
    """Average of the input and every layer output."""
    outputs = [X0]
    for W in stack.weights:
        outputs.append(gcn_layer(outputs[-1], graph, W, self_loops))
    total = outputs[0]
    for out in outputs[1:]:
        total = total + out
    return total / float(len(outputs))
