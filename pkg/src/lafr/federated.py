"""In-process simulation of the federated adapt-then-average dual loop.

Clients hold private unlabeled shards, their cached pseudo labels and frozen
center banks. The only thing that crosses the client/server boundary is a
:class:`ModelMessage`: serialized backbone parameters plus scalar metrics.
"""

from __future__ import annotations

import csv
import io as _io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .clusterer import PseudoLabeling
from .data import FeatureSet
from .errors import ClientFailure, InvalidArgumentError, ShapeError
from .io import atomic_write_text, decode_container, encode_container
from .recognition import (
    Backbone,
    ClassifierBank,
    RctConfig,
    compute_class_centers,
    evaluate_verification,
    prepare_labels,
    rct_adapt,
)

log = logging.getLogger(__name__)


def encode_params(backbone: Backbone) -> bytes:
    return encode_container("param_vector", {"layer_dims": list(backbone.dims)},
                            {"params": backbone.to_vector().astype("<f8")})


def decode_params(blob: bytes) -> Backbone:
    _, meta, arrays = decode_container(blob)
    return Backbone.from_vector(arrays["params"], meta["layer_dims"])


@dataclass(frozen=True)
class ModelMessage:
    """Wire message between a client and the server. Nothing else is exchanged."""

    sender: str
    round: int
    params: bytes
    metrics: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if not isinstance(self.params, bytes):
            raise TypeError("params must be serialized bytes")
        for key, value in self.metrics:
            if not isinstance(key, str) or not isinstance(value, float):
                raise TypeError("metrics must be (str, float) pairs")


def fedpav_average(vectors) -> np.ndarray:
    """Elementwise mean of backbone parameter vectors.

    Each coordinate is ``m + fsum(v_i - m) / K`` with ``m`` the coordinate's
    minimum, so the result does not depend on client order and ``K`` equal
    vectors average to themselves bit for bit.
    """
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vectors:
        raise InvalidArgumentError("nothing to average")
    shape = vectors[0].shape
    for v in vectors:
        if v.shape != shape:
            raise ShapeError(f"parameter layout mismatch: {v.shape} vs {shape}")
    stacked = np.stack([v.ravel() for v in vectors])
    low = stacked.min(axis=0)
    spread = stacked - low
    sums = np.array([math.fsum(col) for col in spread.T])
    return (low + sums / len(vectors)).reshape(shape)


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 20
    rct: RctConfig = field(default_factory=RctConfig)
    # "server": anchor each round's RCT to the received server model;
    # "initial": anchor to the original pre-trained model
    anchor: str = "server"
    fmr_target: float = 1e-3
    seed: int = 0
    max_workers: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidArgumentError("rounds must be >= 1")
        if self.anchor not in ("server", "initial"):
            raise InvalidArgumentError("anchor must be 'server' or 'initial'")


@dataclass(eq=False)
class ClientState:
    client_id: str
    shard: FeatureSet
    pseudo: PseudoLabeling
    bank: ClassifierBank
    test_features: np.ndarray | None = None
    test_pairs: np.ndarray | None = None
    test_same: np.ndarray | None = None
    backbone: Backbone | None = None


def make_client(client_id: str, shard: FeatureSet, pseudo: PseudoLabeling, theta0: Backbone,
                test_features=None, test_pairs=None, test_same=None, min_class_size: int = 1) -> ClientState:
    """Cache the client's round-0 center bank computed with the pre-trained model."""
    x, y = prepare_labels(shard.unlabeled(), pseudo, min_class_size)
    bank = ClassifierBank(compute_class_centers(theta0, x, y)[0], frozen=True)
    return ClientState(client_id, shard.unlabeled(), pseudo, bank, test_features, test_pairs, test_same, theta0)


class Client:
    def __init__(self, state: ClientState, config: FederationConfig, theta0: Backbone):
        self.state = state
        self.config = config
        self._theta0 = theta0

    def local_round(self, message: ModelMessage) -> ModelMessage:
        server = decode_params(message.params)
        cfg = replace(self.config.rct, seed=self.config.rct.seed + message.round)
        anchor = server if self.config.anchor == "server" else self._theta0
        if self.state.bank.num_classes < 2:
            # a single pseudo class gives no negatives; the client keeps the server model
            log.warning("client %s has one pseudo class; skipping local training", self.state.client_id)
            adapted = server
        else:
            adapted, _, _ = rct_adapt(server, self.state.shard, self.state.pseudo, cfg,
                                      anchor=anchor, bank=self.state.bank)
        self.state.backbone = adapted
        metrics = ()
        if self.state.test_pairs is not None:
            target = self.config.fmr_target
            rep = evaluate_verification(adapted, self.state.test_features, self.state.test_pairs,
                                        self.state.test_same, (target,))
            metrics = (("accuracy", rep.accuracy), ("fnmr", rep.fnmr_at_fmr[target]))
        return ModelMessage(self.state.client_id, message.round, encode_params(adapted), metrics)


@dataclass
class FederationResult:
    server_checkpoints: list[Backbone]
    client_models: dict[str, Backbone]
    history: list[dict]

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "client_id", "accuracy", "fnmr"])
        for row in self.history:
            writer.writerow([row["round"], row["client_id"], repr(row.get("accuracy", float("nan"))),
                             repr(row.get("fnmr", float("nan")))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    def mean_metric(self, round_number: int, key: str) -> float:
        vals = [r[key] for r in self.history if r["round"] == round_number]
        return float(np.mean(vals))


def run_dual_loop(theta0: Backbone, clients: list[ClientState], config: FederationConfig) -> FederationResult:
    """Alternate local RCT on every client with server-side backbone averaging.

    Round ``t`` (1-based in the history) sends the current server model to each
    client, adapts locally, and averages the freshly adapted backbones.
    ``server_checkpoints[0]`` is ``theta0``.
    """
    if not clients:
        raise InvalidArgumentError("need at least one client")
    workers = [Client(state, config, theta0) for state in clients]
    server = theta0
    checkpoints = [theta0]
    history = []
    for t in range(config.rounds):
        outbound = ModelMessage("server", t, encode_params(server))

        def run(worker):
            try:
                return worker.local_round(outbound)
            except Exception as exc:  # noqa: BLE001 - re-raised with the client id
                raise ClientFailure(worker.state.client_id, exc) from exc

        if config.max_workers > 1:
            with ThreadPoolExecutor(config.max_workers) as pool:
                replies = list(pool.map(run, workers))
        else:
            replies = [run(w) for w in workers]

        server_vec = fedpav_average([decode_params(m.params).to_vector() for m in replies])
        server = Backbone.from_vector(server_vec, theta0.dims)
        checkpoints.append(server)
        for m in replies:
            history.append({"round": t + 1, "client_id": m.sender, **dict(m.metrics)})
        log.info("round %d done (%d clients)", t + 1, len(replies))
    return FederationResult(checkpoints, {w.state.client_id: w.state.backbone for w in workers}, history)
