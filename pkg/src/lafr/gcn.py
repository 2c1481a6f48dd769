"""GCN vertex-confidence model: forward pass, L1 loss and exact gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .data import make_rng
from .errors import FormatError, NumericError, ShapeError
from .graph import KnnGraph
from .io import read_container, write_container


@dataclass(frozen=True, eq=False)
class GcnModel:
    """Stack of graph-conv layers followed by a linear confidence head.

    Layer ``l`` has weight shape ``(2 * d_in_l, d_out_l)``: each vertex feeds
    its own features concatenated with the neighborhood average.
    """

    layers: tuple[np.ndarray, ...]
    head_weight: np.ndarray
    head_bias: float

    def __post_init__(self):
        layers = tuple(np.asarray(w, dtype=np.float64) for w in self.layers)
        head = np.asarray(self.head_weight, dtype=np.float64).reshape(-1, 1)
        prev = None
        for i, w in enumerate(layers):
            if w.ndim != 2 or w.shape[0] % 2:
                raise ShapeError(f"layer {i} weight must be (2*d_in, d_out), got {w.shape}")
            if prev is not None and w.shape[0] != 2 * prev:
                raise ShapeError(f"layer {i} expects input dim {w.shape[0] // 2}, previous gives {prev}")
            prev = w.shape[1]
        last = prev if layers else None
        if last is not None and head.shape[0] != last:
            raise ShapeError(f"head expects {head.shape[0]} inputs, last layer gives {last}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "head_weight", head)
        object.__setattr__(self, "head_bias", float(self.head_bias))

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].shape[0] // 2] + [w.shape[1] for w in self.layers]

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.layers) + self.head_weight.size + 1

    def to_vector(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers] + [self.head_weight.ravel(), [self.head_bias]])

    @classmethod
    def from_vector(cls, vec, dims) -> "GcnModel":
        vec = np.asarray(vec, dtype=np.float64)
        layers = []
        offset = 0
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            size = 2 * d_in * d_out
            layers.append(vec[offset : offset + size].reshape(2 * d_in, d_out))
            offset += size
        head = vec[offset : offset + dims[-1]].reshape(-1, 1)
        offset += dims[-1]
        if vec.size != offset + 1:
            raise ShapeError(f"parameter vector has {vec.size} entries, layout needs {offset + 1}")
        return cls(tuple(layers), head, vec[offset])


def init_gcn(d_in: int, hidden=(64,), seed: int = 0) -> GcnModel:
    """Glorot-uniform weights, zero bias."""
    rng = make_rng(seed, 0x6C)
    dims = [d_in, *hidden]
    layers = []
    for d0, d1 in zip(dims[:-1], dims[1:]):
        fan_in, fan_out = 2 * d0, d1
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    bound = np.sqrt(6.0 / (dims[-1] + 1))
    head = rng.uniform(-bound, bound, size=(dims[-1], 1))
    return GcnModel(tuple(layers), head, 0.0)


def _check_inputs(model: GcnModel, graph: KnnGraph, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.dims[0]:
        raise ShapeError(f"features must be (n, {model.dims[0]}), got {features.shape}")
    if features.shape[0] != graph.n:
        raise ShapeError(f"graph has {graph.n} vertices but features have {features.shape[0]} rows")
    return features


def _build(model: GcnModel, graph: KnnGraph, features: np.ndarray, tape: Tape, track: bool):
    leaf = tape.param if track else tape.const
    weights = [leaf(w, name=f"layer{i}") for i, w in enumerate(model.layers)]
    head_w = leaf(model.head_weight, name="head_weight")
    head_b = leaf(np.array(model.head_bias), name="head_bias")
    h = tape.const(features)
    for i, w in enumerate(weights):
        # non-finite inputs are reported by the check below, not as numpy warnings
        with np.errstate(invalid="ignore", over="ignore"):
            agg = tape.spmm(graph.norm_adjacency, h)
            h = tape.relu(tape.matmul(tape.concat(h, agg), w))
        if not np.all(np.isfinite(h.value)):
            raise NumericError(f"non-finite activations in GCN layer {i}")
    out = tape.add_bias(tape.matmul(h, head_w), head_b)
    if not np.all(np.isfinite(out.value)):
        raise NumericError(f"non-finite activations in GCN layer {len(weights)} (head)")
    return out, weights, head_w, head_b


def gcn_forward(model: GcnModel, graph: KnnGraph, features) -> np.ndarray:
    features = _check_inputs(model, graph, features)
    out, *_ = _build(model, graph, features, Tape(), track=False)
    return out.value.ravel()


def gcn_loss(predicted, target) -> float:
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if predicted.shape != target.shape:
        raise ShapeError(f"length mismatch: {predicted.size} vs {target.size}")
    return float(np.abs(target - predicted).mean())


def gcn_backward(model: GcnModel, graph: KnnGraph, features, target) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient, flattened in :meth:`GcnModel.to_vector` order."""
    features = _check_inputs(model, graph, features)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (graph.n,):
        raise ShapeError(f"target must have shape ({graph.n},), got {target.shape}")
    tape = Tape()
    out, weights, head_w, head_b = _build(model, graph, features, tape, track=True)
    loss = tape.l1_mean(out, target)
    tape.backward(loss)
    parts = [w.grad if w.grad is not None else np.zeros_like(w.value) for w in weights]
    parts += [head_w.grad, head_b.grad]
    grad = np.concatenate([np.ravel(p) for p in parts])
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite GCN gradient")
    return float(loss.value), grad


def save_gcn(model: GcnModel, path, extra: dict | None = None) -> None:
    meta = {"layer_dims": model.dims, **(extra or {})}
    write_container(path, "gcn", meta, {"params": model.to_vector().astype("<f8")})


def load_gcn(path) -> GcnModel:
    _, meta, arrays = read_container(path, "gcn")
    if "layer_dims" not in meta or "params" not in arrays:
        raise FormatError(f"{path}: incomplete gcn checkpoint")
    return GcnModel.from_vector(arrays["params"], meta["layer_dims"])
