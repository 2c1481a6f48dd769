"""Exact cosine K-NN graphs, row-normalized adjacency and vertex confidences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import EmbeddingSet
from .errors import InvalidArgumentError, ShapeError


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Directed K-NN graph.

    ``neighbor_ids[i]`` lists the ``k`` nearest vertices to ``i`` by descending
    cosine similarity (ties by ascending index) and ``affinities[i]`` the
    matching similarities. ``norm_adjacency`` is ``D^-1 (A + I)`` in CSR form.
    """

    neighbor_ids: np.ndarray
    affinities: np.ndarray
    norm_adjacency: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.neighbor_ids.shape[0]

    @property
    def k(self) -> int:
        return self.neighbor_ids.shape[1]


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        return x.as_float64()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("expected an (n, d) feature matrix")
    return x


def cosine_similarity_matrix(x) -> np.ndarray:
    x = _as_matrix(x)
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    return np.clip(unit @ unit.T, -1.0, 1.0)


def normalized_adjacency(neighbor_ids: np.ndarray, affinities: np.ndarray) -> sp.csr_matrix:
    """``D^-1 (A + I)`` for a directed K-NN adjacency.

    Negative cosines are clamped to zero in ``A`` so every degree is >= 1.
    """
    n, k = neighbor_ids.shape
    rows = np.concatenate([np.repeat(np.arange(n), k), np.arange(n)])
    cols = np.concatenate([neighbor_ids.ravel(), np.arange(n)])
    vals = np.concatenate([np.maximum(affinities, 0.0).ravel(), np.ones(n)])
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    degree = np.asarray(adj.sum(axis=1)).ravel()
    return sp.csr_matrix(sp.diags(1.0 / degree) @ adj)


def build_knn_graph(embeddings, k: int = 10) -> KnnGraph:
    x = _as_matrix(embeddings)
    n = x.shape[0]
    if not 1 <= k < n:
        raise InvalidArgumentError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    sims = cosine_similarity_matrix(x)
    order_key = -sims
    np.fill_diagonal(order_key, np.inf)
    # stable sort keeps equal similarities in ascending index order
    neighbor_ids = np.argsort(order_key, axis=1, kind="stable")[:, :k]
    affinities = np.take_along_axis(sims, neighbor_ids, axis=1)
    return KnnGraph(neighbor_ids, affinities, normalized_adjacency(neighbor_ids, affinities))


def ground_truth_confidence(graph: KnnGraph, labels) -> np.ndarray:
    """Mean signed affinity: +a_ij for same-label neighbors, -a_ij otherwise."""
    labels = np.asarray(labels)
    if labels.shape != (graph.n,):
        raise ShapeError(f"need {graph.n} labels, got shape {labels.shape}")
    same = labels[graph.neighbor_ids] == labels[:, None]
    signed = np.where(same, graph.affinities, -graph.affinities)
    return signed.mean(axis=1)
