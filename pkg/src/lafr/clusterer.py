"""Pseudo-label extraction, the distance-threshold baseline and clustering F-scores."""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import FormatError, InvalidArgumentError, ShapeError
from .graph import KnnGraph, cosine_similarity_matrix
from .io import atomic_write_text

METHOD_TAGS = ("meta-gcn", "gcn", "distance", "ground-truth")


class UnionFind:
    def __init__(self, size):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, u):
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:  # path compression
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u, v):
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return
        if self.rank[ru] < self.rank[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        if self.rank[ru] == self.rank[rv]:
            self.rank[ru] += 1

    def labels(self) -> np.ndarray:
        """Component ids numbered by each component's smallest member."""
        roots = np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)
        return canonical_labels(roots)


@dataclass(frozen=True, eq=False)
class PseudoLabeling:
    cluster_id: np.ndarray
    method_tag: str
    tau: float | None = None

    def __post_init__(self):
        ids = np.asarray(self.cluster_id, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ShapeError("cluster_id must be a non-empty vector")
        present = np.unique(ids)
        if present[0] != 0 or present[-1] != present.size - 1:
            raise InvalidArgumentError("cluster ids must be contiguous 0..num_clusters-1")
        object.__setattr__(self, "cluster_id", ids)

    @property
    def num_clusters(self) -> int:
        return int(self.cluster_id.max()) + 1

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_id)


def canonical_labels(labels) -> np.ndarray:
    """Relabel so ids appear in order of first occurrence (0, 1, 2, ...)."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse]


def extract_pseudo_labels(graph: KnnGraph, confidences, tau: float = 0.8,
                          linking: str = "confidence", method_tag: str = "meta-gcn") -> PseudoLabeling:
    """Cut edges with affinity below ``tau`` and link vertices into trees.

    ``linking="confidence"``: each vertex points at its highest-affinity
    surviving neighbor ranked above it, where ``j`` ranks above ``i`` if
    ``conf[j] > conf[i]`` or the confidences tie and ``j < i``. Vertices with no
    such neighbor are roots; cluster ids follow ascending root index.

    ``linking="nearest"``: each vertex joins its highest-affinity surviving
    neighbor regardless of confidence (components of the resulting graph).
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.shape != (graph.n,):
        raise ShapeError(f"need {graph.n} confidences, got shape {conf.shape}")
    # tau above 1 is accepted and simply cuts every edge
    if not np.isfinite(tau) or tau < -1.0:
        raise InvalidArgumentError(f"tau must be a finite value >= -1, got {tau}")
    if linking not in ("confidence", "nearest"):
        raise InvalidArgumentError(f"unknown linking rule {linking!r}")

    n = graph.n
    parent = np.arange(n)
    for i in range(n):
        for j, a in zip(graph.neighbor_ids[i], graph.affinities[i]):
            if a < tau:
                break  # neighbor lists are sorted by descending affinity
            if linking == "nearest" or conf[j] > conf[i] or (conf[j] == conf[i] and j < i):
                parent[i] = j
                break

    if linking == "confidence":
        # a tree's root need not be its smallest member, so number by root index
        roots = np.array([_tree_root(parent, i) for i in range(n)])
        _, ids = np.unique(roots, return_inverse=True)
    else:
        # mutual nearest neighbors form 2-cycles, so take components instead
        uf = UnionFind(n)
        for i in np.flatnonzero(parent != np.arange(n)):
            uf.union(int(i), int(parent[i]))
        ids = uf.labels()
    return PseudoLabeling(ids, method_tag, float(tau))


def _tree_root(parent, i):
    seen = 0
    while parent[i] != i:
        i = parent[i]
        seen += 1
        if seen > len(parent):
            raise RuntimeError("cycle in confidence linking")
    return i


def distance_baseline(embeddings, threshold: float = 0.3) -> PseudoLabeling:
    """Connected components of pairs whose cosine distance is below ``threshold``."""
    if not 0.0 <= threshold <= 2.0:
        raise InvalidArgumentError(f"threshold must lie in [0, 2], got {threshold}")
    x = embeddings.as_float64() if hasattr(embeddings, "as_float64") else embeddings
    dist = 1.0 - cosine_similarity_matrix(x)
    n = dist.shape[0]
    uf = UnionFind(n)
    rows, cols = np.nonzero(np.triu(dist < threshold, k=1))
    for i, j in zip(rows, cols):
        uf.union(int(i), int(j))
    return PseudoLabeling(uf.labels(), "distance", float(threshold))


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f: float


@dataclass(frozen=True)
class ClusterScore:
    pairwise: PRF
    bcubed: PRF

    @property
    def pairwise_f(self) -> float:
        return self.pairwise.f

    @property
    def bcubed_f(self) -> float:
        return self.bcubed.f


def _as_ids(labels):
    if isinstance(labels, PseudoLabeling):
        return labels.cluster_id
    return np.asarray(labels)


def _contingency(pred, truth):
    pred, truth = _as_ids(pred), _as_ids(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"partitions cover different vertex sets: {pred.shape} vs {truth.shape}")
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def _pairs(counts) -> int:
    return int((counts * (counts - 1) // 2).sum())


def pairwise_f(pred, truth) -> PRF:
    """Precision/recall/F over unordered vertex pairs.

    A side with no same-cluster pairs scores 0 on its ratio, unless neither
    side has any, in which case all three values are 1.
    """
    table = _contingency(pred, truth)
    both = _pairs(table)
    same_pred = _pairs(table.sum(axis=1))
    same_truth = _pairs(table.sum(axis=0))
    if same_pred == 0 and same_truth == 0:
        return PRF(1.0, 1.0, 1.0)
    precision = both / same_pred if same_pred else 0.0
    recall = both / same_truth if same_truth else 0.0
    # harmonic mean of the two ratios, as one correctly rounded integer division
    return PRF(precision, recall, 2 * both / (same_pred + same_truth))


def bcubed_f(pred, truth) -> PRF:
    """Item-averaged overlap precision/recall, accumulated in exact rationals."""
    table = _contingency(pred, truth)
    n = int(table.sum())
    pred_sizes = table.sum(axis=1)
    truth_sizes = table.sum(axis=0)
    precision = Fraction(0)
    recall = Fraction(0)
    # each of the table[c, k] items in a cell has overlap table[c, k]
    for c, k in zip(*np.nonzero(table)):
        m = int(table[c, k])
        precision += Fraction(m * m, int(pred_sizes[c]))
        recall += Fraction(m * m, int(truth_sizes[k]))
    precision /= n
    recall /= n
    f = 2 * precision * recall / (precision + recall)
    return PRF(float(precision), float(recall), float(f))


def score_clustering(pred, truth) -> ClusterScore:
    return ClusterScore(pairwise_f(pred, truth), bcubed_f(pred, truth))


def labeling_to_csv(labeling: PseudoLabeling, source_ids) -> str:
    if len(source_ids) != labeling.cluster_id.size:
        raise ShapeError("source id count differs from labeling size")
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source_id", "cluster_id", "method_tag", "tau"])
    tau = "" if labeling.tau is None else repr(labeling.tau)
    for sid, cid in zip(source_ids, labeling.cluster_id):
        writer.writerow([sid, int(cid), labeling.method_tag, tau])
    return buf.getvalue()


def write_labeling(path, labeling: PseudoLabeling, source_ids) -> None:
    atomic_write_text(path, labeling_to_csv(labeling, source_ids))


def read_labeling(path) -> tuple[PseudoLabeling, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"source_id", "cluster_id", "method_tag", "tau"}:
        raise FormatError(f"{path}: not a pseudo-labeling CSV")
    tags = {r["method_tag"] for r in rows}
    if len(tags) != 1:
        raise FormatError(f"{path}: mixed method tags {sorted(tags)}")
    tau = rows[0]["tau"]
    labeling = PseudoLabeling(
        np.array([int(r["cluster_id"]) for r in rows]), tags.pop(), float(tau) if tau else None
    )
    return labeling, [r["source_id"] for r in rows]
