"""Two-layer perceptron embedding backbone with a unit-norm output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import make_rng
from ..errors import FormatError, NumericError, ShapeError
from ..io import read_container, write_container


@dataclass(frozen=True, eq=False)
class Backbone:
    """``x -> normalize(relu(x @ w1 + b1) @ w2 + b2)``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d_in, h = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape[0] != h or self.b2.shape != (self.w2.shape[1],):
            raise ShapeError("inconsistent backbone layer shapes")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_vector(cls, vec, dims) -> "Backbone":
        d_in, h, d = dims
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [d_in * h, h, h * d, d]
        if vec.size != sum(sizes):
            raise ShapeError(f"parameter vector has {vec.size} entries, layout needs {sum(sizes)}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(d_in, h), parts[1], parts[2].reshape(h, d), parts[3])

    def forward(self, x):
        """Embeddings plus the cache :meth:`backward` needs."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ShapeError(f"inputs must be (n, {self.dims[0]}), got {x.shape}")
        pre = x @ self.w1 + self.b1
        hidden = np.maximum(pre, 0.0)
        z = hidden @ self.w2 + self.b2
        if not np.all(np.isfinite(z)):
            raise NumericError("backbone produced a non-finite pre-normalization output")
        norm = np.linalg.norm(z, axis=1, keepdims=True)
        # a fully dead row maps to the first basis vector and carries no gradient
        dead = norm[:, 0] == 0
        norm[dead] = np.inf
        f = z / norm
        f[dead, 0] = 1.0
        return f, (x, pre, hidden, f, norm)

    def embed(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, d_emb) -> np.ndarray:
        """Gradient of a scalar w.r.t. the flat parameters, given d(scalar)/d(embeddings)."""
        x, pre, hidden, f, norm = cache
        d_z = (d_emb - f * np.sum(f * d_emb, axis=1, keepdims=True)) / norm
        g_w2 = hidden.T @ d_z
        g_b2 = d_z.sum(axis=0)
        d_pre = (d_z @ self.w2.T) * (pre > 0)
        g_w1 = x.T @ d_pre
        g_b1 = d_pre.sum(axis=0)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


def init_backbone(d_in: int, d_out: int, hidden: int = 128, seed: int = 0) -> Backbone:
    rng = make_rng(seed, 0xBB)
    b1 = np.sqrt(6.0 / (d_in + hidden))
    b2 = np.sqrt(6.0 / (hidden + d_out))
    return Backbone(
        rng.uniform(-b1, b1, (d_in, hidden)), np.zeros(hidden),
        rng.uniform(-b2, b2, (hidden, d_out)), np.zeros(d_out),
    )


def save_backbone(path, backbone: Backbone, classifier: np.ndarray | None = None,
                  meta: dict | None = None) -> None:
    header = {"layer_dims": list(backbone.dims), "has_classifier": classifier is not None, **(meta or {})}
    arrays = {"params": backbone.to_vector().astype("<f8")}
    if classifier is not None:
        arrays["classifier"] = np.asarray(classifier, dtype="<f8")
    write_container(path, "backbone", header, arrays)


def load_backbone(path) -> tuple[Backbone, np.ndarray | None, dict]:
    _, meta, arrays = read_container(path, "backbone")
    if "layer_dims" not in meta or "params" not in arrays:
        raise FormatError(f"{path}: incomplete backbone checkpoint")
    backbone = Backbone.from_vector(arrays["params"], meta["layer_dims"])
    return backbone, arrays.get("classifier"), meta
