"""Episodic meta-training of the confidence GCN across labelled domains.

Each outer iteration holds one domain out as meta-test, takes an inner step on
the remaining domains, and updates the shared parameters with the meta-train
gradient plus the (first-order) meta-test gradient at the inner-step point.
"""

from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingSet, make_rng
from .errors import InsufficientDomainsError, InvalidArgumentError, NumericError
from .gcn import GcnModel, gcn_backward, init_gcn
from .graph import KnnGraph, build_knn_graph, ground_truth_confidence
from .io import atomic_write_text

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.1
    beta: float = 0.1
    xi: float = 1.0
    max_iter: int = 2000
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (self.alpha >= 0 and self.beta > 0):
            # alpha == 0 is allowed: it is the documented zero-inner-step case
            raise InvalidArgumentError("alpha must be >= 0 and beta > 0")
        if not self.xi >= 0:
            raise InvalidArgumentError("xi must be >= 0")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class DomainData:
    """One labelled domain with its graph and ground-truth confidences."""

    embeddings: EmbeddingSet
    graph: KnnGraph
    confidence: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return self.embeddings.as_float64()


def prepare_domain(eset: EmbeddingSet, k: int = 10) -> DomainData:
    if eset.labels is None:
        raise InvalidArgumentError(f"domain {eset.domain_tag!r} has no labels")
    graph = build_knn_graph(eset, k)
    return DomainData(eset, graph, ground_truth_confidence(graph, eset.labels))


@dataclass
class LossHistory:
    iterations: list[int] = field(default_factory=list)
    meta_train: list[float] = field(default_factory=list)
    meta_test: list[float] = field(default_factory=list)
    held_out: list[int] = field(default_factory=list)

    def append(self, it, l_mtr, l_mte, held_out):
        self.iterations.append(it)
        self.meta_train.append(l_mtr)
        self.meta_test.append(l_mte)
        self.held_out.append(held_out)

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "L_mtr", "L_mte"])
        for row in zip(self.iterations, self.meta_train, self.meta_test):
            writer.writerow([row[0], repr(row[1]), repr(row[2])])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def split_meta(bundle: list[DomainData], rng: np.random.Generator):
    """Hold one domain out uniformly at random; returns (meta_train, meta_test, held_out_index)."""
    if len(bundle) < 2:
        raise InsufficientDomainsError(f"meta split needs >= 2 domains, got {len(bundle)}")
    held = int(rng.integers(len(bundle)))
    train = [d for i, d in enumerate(bundle) if i != held]
    return train, bundle[held], held


def mean_loss_and_grad(params: np.ndarray, dims, domains: list[DomainData]):
    model = GcnModel.from_vector(params, dims)
    loss = 0.0
    grad = np.zeros_like(params)
    for dom in domains:
        l, g = gcn_backward(model, dom.graph, dom.features, dom.confidence)
        loss += l
        grad += g
    return loss / len(domains), grad / len(domains)


def meta_step(model: GcnModel, meta_train, meta_test: DomainData, config: MetaConfig, velocity=None):
    """One outer update. Returns ``(model, velocity, L_mtr, L_mte)``.

    ``velocity`` is the outer momentum buffer; pass ``None`` to start fresh.
    The caller's model is never modified.
    """
    dims = model.dims
    phi = model.to_vector()
    l_mtr, g_mtr = mean_loss_and_grad(phi, dims, meta_train)
    phi_inner = phi - config.alpha * g_mtr
    l_mte, g_mte = mean_loss_and_grad(phi_inner, dims, [meta_test])
    if not (np.isfinite(l_mtr) and np.isfinite(l_mte)):
        raise NumericError(f"non-finite meta loss (L_mtr={l_mtr}, L_mte={l_mte})")
    direction = g_mtr + config.xi * g_mte
    velocity = direction if velocity is None else config.momentum * velocity + direction
    return GcnModel.from_vector(phi - config.beta * velocity, dims), velocity, l_mtr, l_mte


def train_meta_gcn(bundle: list[DomainData], config: MetaConfig, model: GcnModel | None = None,
                   hidden=(64,)):
    """Run ``config.max_iter`` meta steps with a fresh random split each iteration."""
    if len(bundle) < 2:
        raise InsufficientDomainsError(f"meta training needs >= 2 domains, got {len(bundle)}")
    if model is None:
        model = init_gcn(bundle[0].embeddings.d, hidden, seed=config.seed)
    rng = make_rng(config.seed, 0x3E7A)
    history = LossHistory()
    velocity = None
    for it in range(config.max_iter):
        train, test, held = split_meta(bundle, rng)
        try:
            model, velocity, l_mtr, l_mte = meta_step(model, train, test, config, velocity)
        except NumericError as exc:
            raise NumericError(f"iteration {it} (held-out domain {held}): {exc}") from exc
        history.append(it, l_mtr, l_mte, held)
        if it % 500 == 0:
            log.debug("meta iter %d: L_mtr=%.4f L_mte=%.4f", it, l_mtr, l_mte)
    return model, history


def pool_domains(bundle: list[DomainData]) -> EmbeddingSet:
    vectors = np.concatenate([d.embeddings.vectors for d in bundle])
    labels = []
    offset = 0
    for d in bundle:
        labels.append(d.embeddings.labels + offset)
        offset += d.embeddings.num_classes
    ids = tuple(i for d in bundle for i in d.embeddings.source_ids)
    return EmbeddingSet(vectors, np.concatenate(labels), "pooled", ids)


def train_pooled_gcn(bundle: list[DomainData], config: MetaConfig, k: int = 10,
                     model: GcnModel | None = None, hidden=(64,)):
    """Conventional baseline: one graph over all domains, full-batch momentum SGD.

    Uses ``config.beta`` as the learning rate and the same iteration budget and
    initialization as :func:`train_meta_gcn`.
    """
    pooled = prepare_domain(pool_domains(bundle), k)
    if model is None:
        model = init_gcn(pooled.embeddings.d, hidden, seed=config.seed)
    dims = model.dims
    phi = model.to_vector()
    velocity = np.zeros_like(phi)
    history = []
    for it in range(config.max_iter):
        loss, grad = mean_loss_and_grad(phi, dims, [pooled])
        if not np.isfinite(loss):
            raise NumericError(f"non-finite pooled GCN loss at iteration {it}")
        velocity = config.momentum * velocity + grad
        phi = phi - config.beta * velocity
        history.append(loss)
    return GcnModel.from_vector(phi, dims), history
