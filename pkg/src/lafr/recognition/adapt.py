"""Regularized center transfer, the plain fine-tune baseline, and base pre-training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..clusterer import PseudoLabeling, canonical_labels
from ..data import FeatureSet, l2_normalize, make_rng
from ..errors import InvalidArgumentError, InvalidLabelingError, NumericError
from .backbone import Backbone, init_backbone
from .losses import LOSS_KINDS, ClassifierBank, margin_loss, resolve_hyper

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RctConfig:
    loss_kind: str = "circle"
    gamma: float | None = None
    margin: float | None = None
    lam: float = 0.1
    lr: float = 0.001
    epochs: int = 50
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0
    min_class_size: int = 1

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"loss_kind must be one of {LOSS_KINDS}")
        gamma, margin = resolve_hyper(self.loss_kind, self.gamma, self.margin)
        if not gamma > 0:
            raise InvalidArgumentError("gamma must be > 0")
        if not 0 <= margin < 1:
            raise InvalidArgumentError("margin must lie in [0, 1)")
        if not self.lam >= 0:
            raise InvalidArgumentError("lambda must be >= 0")
        if not self.lr > 0 or self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("need lr > 0, epochs >= 0, batch_size >= 1")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        if self.min_class_size < 1:
            raise InvalidArgumentError("min_class_size must be >= 1")

    @property
    def hyper(self) -> tuple[float, float]:
        return resolve_hyper(self.loss_kind, self.gamma, self.margin)


@dataclass
class TrainingLog:
    epoch_loss: list[float] = field(default_factory=list)
    num_classes: int = 0
    num_samples: int = 0


def _features(data) -> np.ndarray:
    return data.features if isinstance(data, FeatureSet) else np.asarray(data, dtype=np.float64)


def _label_array(labels) -> np.ndarray:
    if isinstance(labels, PseudoLabeling):
        return labels.cluster_id
    return np.asarray(labels, dtype=np.int64)


def compute_class_centers(backbone: Backbone, data, labels):
    """Per-class mean of the backbone's embeddings.

    Returns ``(normalized, raw_mean)``, both ``(C, d)``.
    """
    y = _label_array(labels)
    x = _features(data)
    if y.shape != (x.shape[0],):
        raise InvalidLabelingError("one label per input row required")
    num = int(y.max()) + 1 if y.size else 0
    counts = np.bincount(y, minlength=num)
    if num == 0 or np.any(counts == 0):
        raise InvalidLabelingError(f"empty classes: {np.flatnonzero(counts == 0).tolist()}")
    emb = backbone.embed(x)
    sums = np.zeros((num, emb.shape[1]))
    np.add.at(sums, y, emb)
    raw = sums / counts[:, None]
    return l2_normalize(raw), raw


def prepare_labels(data, labels, min_class_size: int = 1):
    """Drop classes below ``min_class_size`` and renumber by first occurrence."""
    x = _features(data)
    y = _label_array(labels)
    if y.shape != (x.shape[0],):
        raise InvalidLabelingError("pseudo labeling must cover every input row")
    keep = np.bincount(y)[y] >= min_class_size
    if not keep.any():
        raise InvalidLabelingError(f"no class has >= {min_class_size} members")
    return x[keep], canonical_labels(y[keep])


def _train(backbone: Backbone, x, y, bank_weights, config: RctConfig, *, anchor, lam,
           train_bank: bool, stream: int):
    dims = backbone.dims
    params = backbone.to_vector()
    anchor = None if anchor is None else anchor.to_vector()
    weights = np.array(bank_weights, dtype=np.float64)
    velocity = np.zeros_like(params)
    w_velocity = np.zeros_like(weights)
    gamma, margin = config.hyper
    rng = make_rng(config.seed, stream)
    n = x.shape[0]
    history = TrainingLog(num_classes=weights.shape[0], num_samples=n)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            model = Backbone.from_vector(params, dims)
            emb, cache = model.forward(x[idx])
            loss, d_emb, d_w = margin_loss(emb, y[idx], weights, config.loss_kind, gamma, margin)
            grad = model.backward(cache, d_emb)
            if lam > 0:
                drift = params - anchor
                loss += lam * float(drift @ drift)
                grad = grad + 2.0 * lam * drift
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            velocity = config.momentum * velocity + grad
            params = params - config.lr * velocity
            if train_bank:
                w_velocity = config.momentum * w_velocity + d_w
                weights = l2_normalize(weights - config.lr * w_velocity)
            total += loss * idx.size
        history.epoch_loss.append(total / n)
        log.debug("epoch %d loss %.5f", epoch, history.epoch_loss[-1])
    return Backbone.from_vector(params, dims), weights, history


def rct_adapt(theta0: Backbone, data, pseudo, config: RctConfig, *, anchor: Backbone | None = None,
              bank: ClassifierBank | None = None):
    """Adapt ``theta0`` on (pseudo-)labelled target data with a frozen center bank.

    The classifier rows are the normalized ``theta0`` class centers and never
    change; the backbone minimizes the margin loss plus
    ``lam * ||theta - anchor||^2`` (anchor defaults to ``theta0``).
    Returns ``(adapted_backbone, bank, log)``.
    """
    x, y = prepare_labels(data, pseudo, config.min_class_size)
    if bank is None:
        bank = ClassifierBank(compute_class_centers(theta0, x, y)[0], frozen=True)
    elif bank.num_classes != int(y.max()) + 1:
        raise InvalidLabelingError("supplied bank does not match the labeling's class count")
    anchor = theta0 if anchor is None else anchor
    adapted, _, history = _train(theta0, x, y, bank.weights, config, anchor=anchor,
                                 lam=config.lam, train_bank=False, stream=0xAC7)
    return adapted, bank, history


def finetune_baseline(theta0: Backbone, data, pseudo, config: RctConfig):
    """Standard transfer learning: same start as RCT but the classifier is trained and no anchor."""
    x, y = prepare_labels(data, pseudo, config.min_class_size)
    centers = compute_class_centers(theta0, x, y)[0]
    adapted, weights, history = _train(theta0, x, y, centers, replace(config, lam=0.0), anchor=None,
                                       lam=0.0, train_bank=True, stream=0xAC7)
    return adapted, ClassifierBank(weights, frozen=False), history


def pretrain_backbone(data: FeatureSet, d_out: int, config: RctConfig, hidden: int = 128):
    """Train a backbone from scratch on the labelled base domain with a learnable classifier."""
    if data.labels is None:
        raise InvalidLabelingError("pre-training needs labels")
    x = data.features
    backbone = init_backbone(x.shape[1], d_out, hidden, seed=config.seed)
    rng = make_rng(config.seed, 0xC1F)
    weights = l2_normalize(rng.standard_normal((int(data.labels.max()) + 1, d_out)))
    adapted, weights, history = _train(backbone, x, data.labels, weights, replace(config, lam=0.0),
                                       anchor=None, lam=0.0, train_bank=True, stream=0x9E7)
    return adapted, ClassifierBank(weights, frozen=False), history
