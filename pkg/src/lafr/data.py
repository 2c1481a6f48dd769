"""Embedding sets, synthetic multi-domain generation and embedding file I/O."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import CorruptDataError, FormatError, InvalidSpecError, ShapeError
from .io import read_container, write_container

NORM_TOL = 1e-6
RENORM_TOL = 1e-3


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a 64-bit seed and a stream path.

    Distinct ``stream`` tuples give independent generators for the same seed, so
    no component ever needs to share or advance another's state.
    """
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(seq))


def l2_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise CorruptDataError("cannot normalize a zero-norm vector")
    return x / norm


def _check_labels(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise CorruptDataError("labels must be integers")
    labels = labels.astype(np.int64)
    present = np.unique(labels)
    if present[0] != 0 or present[-1] != len(present) - 1:
        raise CorruptDataError("labels must be contiguous integers 0..C-1")
    return labels


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Unit-norm embeddings for one domain, optionally labelled.

    ``vectors`` is stored as float32 (the on-disk precision) so that save/load
    round-trips are bit-exact; numerical code should call :meth:`as_float64`.
    """

    vectors: np.ndarray
    labels: np.ndarray | None = None
    domain_tag: str = ""
    source_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ShapeError("vectors must be a 2-d matrix")
        n, d = vectors.shape
        if n < 1 or d < 2:
            raise ShapeError(f"need n >= 1 and d >= 2, got n={n}, d={d}")
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise CorruptDataError("every row must have unit L2 norm")
        object.__setattr__(self, "vectors", vectors)
        if self.labels is not None:
            object.__setattr__(self, "labels", _check_labels(self.labels, n))
        ids = tuple(self.source_ids) or tuple(
            f"{self.domain_tag or 'item'}-{i:06d}" for i in range(n)
        )
        if len(ids) != n:
            raise ShapeError(f"expected {n} source ids, got {len(ids)}")
        object.__setattr__(self, "source_ids", ids)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def as_float64(self) -> np.ndarray:
        return self.vectors.astype(np.float64)

    def subset(self, rows) -> "EmbeddingSet":
        rows = np.asarray(rows)
        labels = None
        if self.labels is not None:
            _, labels = np.unique(self.labels[rows], return_inverse=True)
        return EmbeddingSet(
            self.vectors[rows],
            labels,
            self.domain_tag,
            tuple(self.source_ids[i] for i in rows),
        )

    def unlabeled(self) -> "EmbeddingSet":
        return EmbeddingSet(self.vectors, None, self.domain_tag, self.source_ids)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Raw (pre-normalization) features: the backbone's input space."""

    features: np.ndarray
    labels: np.ndarray | None = None
    domain_tag: str = ""
    source_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ShapeError("features must be a non-empty 2-d matrix")
        if not np.all(np.isfinite(feats)):
            raise CorruptDataError("features contain non-finite values")
        object.__setattr__(self, "features", feats)
        n = feats.shape[0]
        if self.labels is not None:
            object.__setattr__(self, "labels", _check_labels(self.labels, n))
        ids = tuple(self.source_ids) or tuple(
            f"{self.domain_tag or 'item'}-{i:06d}" for i in range(n)
        )
        if len(ids) != n:
            raise ShapeError(f"expected {n} source ids, got {len(ids)}")
        object.__setattr__(self, "source_ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, rows) -> "FeatureSet":
        rows = np.asarray(rows)
        labels = None
        if self.labels is not None:
            _, labels = np.unique(self.labels[rows], return_inverse=True)
        return FeatureSet(
            self.features[rows], labels, self.domain_tag, tuple(self.source_ids[i] for i in rows)
        )

    def unlabeled(self) -> "FeatureSet":
        return FeatureSet(self.features, None, self.domain_tag, self.source_ids)

    def normalized(self) -> EmbeddingSet:
        return EmbeddingSet(l2_normalize(self.features), self.labels, self.domain_tag, self.source_ids)


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """Recipe for one synthetic domain.

    Each item of class ``k`` is ``scale * (R @ prototype_k + noise)``, renormalized,
    where ``R`` is a random rotation drawn from ``rotation_seed`` (identity when
    the seed is ``None``) and ``scale`` is ``exp(contrast_shift * z)`` per axis.
    """

    num_classes: int
    images_per_class: tuple[int, int] = (10, 10)
    rotation_seed: int | None = None
    rotation_strength: float = 1.0
    noise_sigma: float = 0.05
    contrast_shift: float = 0.0
    sample_seed: int = 0
    domain_tag: str = "domain"

    def validate(self, num_prototypes: int | None = None) -> None:
        lo, hi = self.images_per_class
        if self.num_classes < 1:
            raise InvalidSpecError("num_classes must be >= 1")
        if lo < 1 or hi < lo:
            raise InvalidSpecError(f"invalid images_per_class range {self.images_per_class}")
        if not self.noise_sigma >= 0:
            raise InvalidSpecError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.rotation_strength >= 0:
            raise InvalidSpecError("rotation_strength must be >= 0")
        if not np.isfinite(self.contrast_shift):
            raise InvalidSpecError("contrast_shift must be finite")
        if num_prototypes is not None and self.num_classes > num_prototypes:
            raise InvalidSpecError(
                f"spec needs {self.num_classes} prototypes, only {num_prototypes} given"
            )


def random_prototypes(num: int, d: int, seed: int, crowding: float = 0.0) -> np.ndarray:
    """``num`` unit-norm identity prototypes in R^d.

    With ``crowding=0`` they are uniform on the sphere. A positive value mixes
    in a shared direction so that distinct prototypes have expected cosine of
    about ``crowding``, mimicking the narrow cone real face embeddings occupy.
    """
    if not 0.0 <= crowding < 1.0:
        raise InvalidSpecError("crowding must lie in [0, 1)")
    rng = make_rng(seed, 0xC1A55)
    shared = l2_normalize(rng.standard_normal(d))
    own = l2_normalize(rng.standard_normal((num, d)))
    return l2_normalize(np.sqrt(crowding) * shared + np.sqrt(1.0 - crowding) * own)


def domain_transform(spec: SyntheticDomainSpec, d: int) -> tuple[np.ndarray, np.ndarray]:
    """The (rotation, per-axis scale) pair a spec applies to its prototypes."""
    if spec.rotation_seed is None:
        rotation = np.eye(d)
        rng = make_rng(0, 0x5CA1E)
    else:
        rng = make_rng(spec.rotation_seed, 0x0A7E)
        g = rng.standard_normal((d, d))
        # exp of a skew-symmetric matrix is orthogonal; strength ~1 is a generic rotation
        skew = (g - g.T) / np.sqrt(2.0 * d)
        rotation = expm(spec.rotation_strength * np.pi * skew)
    scale = np.exp(spec.contrast_shift * rng.standard_normal(d))
    return rotation, scale


def generate_raw(spec: SyntheticDomainSpec, prototypes: np.ndarray) -> FeatureSet:
    """Labelled pre-normalization features for one synthetic domain."""
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or prototypes.shape[1] < 2:
        raise ShapeError("prototypes must be a (C, d) matrix with d >= 2")
    if np.any(np.abs(np.linalg.norm(prototypes, axis=1) - 1.0) > NORM_TOL):
        raise InvalidSpecError("prototype rows must be unit norm")
    spec.validate(prototypes.shape[0])
    d = prototypes.shape[1]
    rotation, scale = domain_transform(spec, d)
    centers = prototypes[: spec.num_classes] @ rotation.T

    rng = make_rng(spec.sample_seed, 0xDA7A)
    lo, hi = spec.images_per_class
    counts = rng.integers(lo, hi + 1, size=spec.num_classes)
    labels = np.repeat(np.arange(spec.num_classes), counts)
    noise = rng.standard_normal((labels.size, d))
    # the per-axis gain acts like a sensor response: it scales signal and noise alike
    raw = (centers[labels] + spec.noise_sigma * noise) * scale
    ids = tuple(f"{spec.domain_tag}-{i:06d}" for i in range(labels.size))
    return FeatureSet(raw, labels, spec.domain_tag, ids)


def generate_domain(spec: SyntheticDomainSpec, prototypes: np.ndarray) -> EmbeddingSet:
    """Labelled unit-norm embeddings for one synthetic domain."""
    return generate_raw(spec, prototypes).normalized()


def save_embeddings(eset: EmbeddingSet, path) -> None:
    meta = {
        "n": eset.n,
        "d": eset.d,
        "domain_tag": eset.domain_tag,
        "has_labels": eset.labels is not None,
        "source_ids": list(eset.source_ids),
    }
    arrays = {"vectors": eset.vectors.astype("<f4")}
    if eset.labels is not None:
        arrays["labels"] = eset.labels.astype("<i4")
    write_container(path, "embeddings", meta, arrays)


def _check_layout(meta, arrays, key, width_key):
    try:
        n = int(meta["n"])
        width = int(meta[width_key])
        has_labels = bool(meta["has_labels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"header missing field: {exc}") from exc
    if key not in arrays or arrays[key].shape != (n, width):
        raise FormatError(f"header declares {n}x{width} but payload holds "
                          f"{arrays[key].shape if key in arrays else 'nothing'}")
    if has_labels != ("labels" in arrays):
        raise FormatError("label presence flag disagrees with payload")
    if has_labels and arrays["labels"].shape != (n,):
        raise FormatError("label array length disagrees with header")
    return n


def load_embeddings(path) -> EmbeddingSet:
    """Load an embedding file, re-checking unit norms.

    Rows off unit norm by more than 1e-6 but at most 1e-3 are renormalized;
    anything further off (including zero rows) is rejected as corrupt.
    """
    _, meta, arrays = read_container(path, "embeddings")
    n = _check_layout(meta, arrays, "vectors", "d")
    vectors = arrays["vectors"]
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    if np.any(norms == 0):
        raise CorruptDataError(f"{path}: zero-norm row {int(np.argmin(norms))}")
    off = np.abs(norms - 1.0)
    if np.any(off > RENORM_TOL):
        raise CorruptDataError(f"{path}: row {int(np.argmax(off))} is far from unit norm")
    if np.any(off > NORM_TOL):
        fix = off > NORM_TOL
        vectors = vectors.copy()
        vectors[fix] = (vectors[fix] / norms[fix, None]).astype(np.float32)
    ids = tuple(meta.get("source_ids") or ())
    if ids and len(ids) != n:
        raise FormatError("source id count disagrees with header")
    return EmbeddingSet(vectors, arrays.get("labels"), meta.get("domain_tag", ""), ids)


def save_features(fset: FeatureSet, path) -> None:
    meta = {
        "n": fset.n,
        "d_in": fset.features.shape[1],
        "domain_tag": fset.domain_tag,
        "has_labels": fset.labels is not None,
        "source_ids": list(fset.source_ids),
    }
    arrays = {"features": fset.features.astype("<f8")}
    if fset.labels is not None:
        arrays["labels"] = fset.labels.astype("<i4")
    write_container(path, "features", meta, arrays)


def load_features(path) -> FeatureSet:
    _, meta, arrays = read_container(path, "features")
    _check_layout(meta, arrays, "features", "d_in")
    return FeatureSet(
        arrays["features"], arrays.get("labels"), meta.get("domain_tag", ""),
        tuple(meta.get("source_ids") or ()),
    )
