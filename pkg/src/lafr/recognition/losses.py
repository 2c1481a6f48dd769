"""Margin-based classification losses over cosine logits.

Both losses return ``(loss, d_embeddings, d_weights)`` where the gradients are
exact derivatives of the returned batch-mean loss, treating embeddings and
class vectors as free variables (normalization is the caller's business).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from ..errors import ConfigurationError, ShapeError

LOSS_KINDS = ("am-softmax", "circle")
DEFAULTS = {"am-softmax": (30.0, 0.35), "circle": (32.0, 0.25)}


@dataclass(frozen=True)
class ClassifierBank:
    """Unit-norm class vectors; ``frozen`` banks are never updated by training."""

    weights: np.ndarray
    frozen: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError("classifier weights must be a (C, d) matrix")
        if np.any(np.abs(np.linalg.norm(w, axis=1) - 1.0) > 1e-9):
            raise ShapeError("classifier rows must be unit norm")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def resolve_hyper(kind: str, gamma=None, margin=None) -> tuple[float, float]:
    if kind not in LOSS_KINDS:
        raise ConfigurationError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    g0, m0 = DEFAULTS[kind]
    return float(g0 if gamma is None else gamma), float(m0 if margin is None else margin)


def _cosines(embeddings, labels, weights):
    f = np.asarray(embeddings, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if f.ndim != 2 or w.ndim != 2 or f.shape[1] != w.shape[1]:
        raise ShapeError(f"embeddings {f.shape} and weights {w.shape} disagree")
    if y.shape != (f.shape[0],):
        raise ShapeError("one label per embedding required")
    if y.size and (y.min() < 0 or y.max() >= w.shape[0]):
        raise ShapeError("label outside the classifier bank")
    return f, w, y, f @ w.T


def am_softmax_loss(embeddings, labels, weights, gamma=30.0, margin=0.35):
    f, w, y, cos = _cosines(embeddings, labels, weights)
    n = f.shape[0]
    rows = np.arange(n)
    logits = gamma * cos
    logits[rows, y] -= gamma * margin
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, y]))
    d_logits = softmax(logits, axis=1)
    d_logits[rows, y] -= 1.0
    d_cos = gamma * d_logits / n
    return loss, d_cos @ w, d_cos.T @ f


def circle_loss(embeddings, labels, weights, gamma=32.0, margin=0.25):
    """Proxy-form CircleLoss with one positive (own class vector) per sample.

    The adaptive weights ``relu(1 + m - s_p)`` and ``relu(s_n + m)`` are
    differentiated through, so the gradient is that of the loss as written.
    """
    f, w, y, cos = _cosines(embeddings, labels, weights)
    n, c = cos.shape
    if c < 2:
        raise ConfigurationError("circle loss needs at least two classes (negatives)")
    rows = np.arange(n)
    pos_mask = np.zeros_like(cos, dtype=bool)
    pos_mask[rows, y] = True

    s_p = cos[rows, y]
    a_p = np.maximum(1.0 + margin - s_p, 0.0)
    logit_p = -gamma * a_p * (s_p - (1.0 - margin))
    dlogit_p = -gamma * (a_p - (s_p - (1.0 - margin)) * (a_p > 0))

    a_n = np.maximum(cos + margin, 0.0)
    logit_n = gamma * a_n * (cos - margin)
    dlogit_n = gamma * (a_n + (cos - margin) * (a_n > 0))
    logit_n = np.where(pos_mask, -np.inf, logit_n)

    lse_n = logsumexp(logit_n, axis=1)
    z = lse_n + logit_p
    loss = float(np.mean(np.logaddexp(0.0, z)))

    sig = 0.5 * (1.0 + np.tanh(0.5 * z))  # numerically stable sigmoid
    p_n = softmax(logit_n, axis=1)
    d_cos = (sig[:, None] * p_n) * dlogit_n
    d_cos[rows, y] = sig * dlogit_p
    d_cos /= n
    return loss, d_cos @ w, d_cos.T @ f


def margin_loss(embeddings, labels, weights, kind="am-softmax", gamma=None, margin=None):
    if isinstance(weights, ClassifierBank):
        weights = weights.weights
    gamma, margin = resolve_hyper(kind, gamma, margin)
    if kind == "am-softmax":
        return am_softmax_loss(embeddings, labels, weights, gamma, margin)
    return circle_loss(embeddings, labels, weights, gamma, margin)
