"""Synthetic leave-one-domain-out protocols and the glue that runs the pipeline.

A protocol draws disjoint identity sets from one crowded prototype pool:

* a base domain (identity transform) to pre-train the recognizer on,
* several labelled clustering domains for GCN training,
* a target domain split into an adaptation set and a disjoint test set.

Every non-base domain gets its own partial rotation and per-axis gain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .clusterer import PseudoLabeling, distance_baseline, extract_pseudo_labels
from .data import EmbeddingSet, FeatureSet, SyntheticDomainSpec, domain_transform, generate_raw, random_prototypes
from .gcn import GcnModel, gcn_forward
from .graph import build_knn_graph
from .meta import DomainData, MetaConfig, prepare_domain, train_meta_gcn, train_pooled_gcn
from .recognition import Backbone, RctConfig, make_pairs, pretrain_backbone, rct_adapt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DomainShift:
    rotation_strength: float = 0.3
    contrast_shift: float = 0.8
    noise_sigma: float = 0.12


@dataclass(frozen=True)
class ProtocolConfig:
    dim: int = 32
    crowding: float = 0.3
    base_classes: int = 300
    base_images: tuple[int, int] = (8, 12)
    cluster_domains: int = 3
    cluster_classes: int = 50
    cluster_images: tuple[int, int] = (5, 20)
    target_classes: int = 10
    target_images: tuple[int, int] = (8, 12)
    test_classes: int = 60
    test_images: tuple[int, int] = (5, 8)
    num_clients: int = 0
    # clients share one sensor-family rotation and differ by a smaller one of their own
    client_spread: float = 0.1
    shift: DomainShift = field(default_factory=DomainShift)
    # the identity-only embedding protocol used for clustering studies
    cluster_noise: float = 0.07
    cluster_contrast: float = 0.3


@dataclass(frozen=True, eq=False)
class LafrProtocol:
    base: FeatureSet
    cluster_domains: tuple[FeatureSet, ...]
    target_adapt: FeatureSet
    target_test: FeatureSet
    test_pairs: np.ndarray
    test_same: np.ndarray
    seed: int
    clients: tuple["ClientDomain", ...] = ()


@dataclass(frozen=True, eq=False)
class ClientDomain:
    adapt: FeatureSet
    test: FeatureSet
    pairs: np.ndarray
    same: np.ndarray


def _spec(cfg: ProtocolConfig, seed: int, classes: int, images, tag: str,
          transform_index: int | None, sample_stream: int, shift: DomainShift | None = None):
    shift = shift or cfg.shift
    return SyntheticDomainSpec(
        num_classes=classes,
        images_per_class=tuple(images),
        rotation_seed=None if transform_index is None else seed * 1009 + transform_index,
        rotation_strength=shift.rotation_strength,
        noise_sigma=shift.noise_sigma,
        contrast_shift=0.0 if transform_index is None else shift.contrast_shift,
        sample_seed=seed * 7919 + sample_stream,
        domain_tag=tag,
    )


def make_protocol(seed: int, cfg: ProtocolConfig = ProtocolConfig()) -> LafrProtocol:
    """Base, clustering and target domains with disjoint identities."""
    per_target = cfg.target_classes + cfg.test_classes
    total = cfg.base_classes + cfg.cluster_domains * cfg.cluster_classes + per_target * (1 + cfg.num_clients)
    protos = random_prototypes(total, cfg.dim, seed, cfg.crowding)
    offset = 0

    def take(count):
        nonlocal offset
        block = protos[offset : offset + count]
        offset += count
        return block

    base = generate_raw(_spec(cfg, seed, cfg.base_classes, cfg.base_images, "base", None, 1),
                        take(cfg.base_classes))
    clusters = tuple(
        generate_raw(_spec(cfg, seed, cfg.cluster_classes, cfg.cluster_images, f"cluster{i}", 10 + i, 10 + i),
                     take(cfg.cluster_classes))
        for i in range(cfg.cluster_domains)
    )
    target_adapt = generate_raw(
        _spec(cfg, seed, cfg.target_classes, cfg.target_images, "target", 99, 50), take(cfg.target_classes))
    target_test = generate_raw(
        _spec(cfg, seed, cfg.test_classes, cfg.test_images, "test", 99, 51), take(cfg.test_classes))
    pairs, same = make_pairs(target_test.labels, seed)
    clients = []
    if cfg.num_clients:
        family = SyntheticDomainSpec(num_classes=1, rotation_seed=seed * 1009 + 300,
                                     rotation_strength=cfg.shift.rotation_strength)
        family_rot = domain_transform(family, cfg.dim)[0]
        own = replace(cfg.shift, rotation_strength=cfg.client_spread)
    for i in range(cfg.num_clients):
        adapt = generate_raw(_spec(cfg, seed, cfg.target_classes, cfg.target_images, f"client{i}", 200 + i,
                                   200 + 2 * i, own), take(cfg.target_classes) @ family_rot.T)
        test = generate_raw(_spec(cfg, seed, cfg.test_classes, cfg.test_images, f"client{i}-test", 200 + i,
                                  201 + 2 * i, own), take(cfg.test_classes) @ family_rot.T)
        clients.append(ClientDomain(adapt, test, *make_pairs(test.labels, seed + 1 + i)))
    return LafrProtocol(base, clusters, target_adapt, target_test, pairs, same, seed, tuple(clients))


def clustering_protocol(seed: int, cfg: ProtocolConfig = ProtocolConfig(), num_domains: int = 4):
    """Labelled embedding domains for the leave-one-out clustering study.

    Returns ``num_domains`` embedding sets; callers conventionally hold out the last.
    """
    protos = random_prototypes(num_domains * cfg.cluster_classes, cfg.dim, seed, cfg.crowding)
    shift = DomainShift(cfg.shift.rotation_strength, cfg.cluster_contrast, cfg.cluster_noise)
    sets = []
    for i in range(num_domains):
        spec = _spec(cfg, seed, cfg.cluster_classes, cfg.cluster_images, f"domain{i}", 10 + i, 10 + i, shift)
        block = protos[i * cfg.cluster_classes : (i + 1) * cfg.cluster_classes]
        sets.append(generate_raw(spec, block).normalized())
    return sets


def embed_set(backbone: Backbone, fset: FeatureSet) -> EmbeddingSet:
    return EmbeddingSet(backbone.embed(fset.features), fset.labels, fset.domain_tag, fset.source_ids)


def gcn_labels(model: GcnModel, eset: EmbeddingSet, k: int = 10, tau: float = 0.8,
               linking: str = "confidence", tag: str = "meta-gcn") -> PseudoLabeling:
    graph = build_knn_graph(eset, k)
    conf = gcn_forward(model, graph, eset.as_float64())
    return extract_pseudo_labels(graph, conf, tau, linking, tag)


def adapt_or_keep(theta0: Backbone, data: FeatureSet, labels, cfg: RctConfig):
    """RCT, except when the labeling has a single class (nothing to separate): keep ``theta0``."""
    ids = labels.cluster_id if isinstance(labels, PseudoLabeling) else np.asarray(labels)
    sizes = np.bincount(ids)
    if np.count_nonzero(sizes >= cfg.min_class_size) < 2:
        log.warning("labeling has fewer than two usable classes; adaptation skipped")
        return theta0
    return rct_adapt(theta0, data.unlabeled(), labels, cfg)[0]


@dataclass(frozen=True)
class PipelineSettings:
    k: int = 10
    tau: float = 0.8
    distance_threshold: float = 0.3
    gcn_hidden: tuple[int, ...] = (64,)
    meta: MetaConfig = field(default_factory=MetaConfig)
    pretrain: RctConfig = field(default_factory=lambda: RctConfig(
        loss_kind="am-softmax", lam=0.0, lr=0.05, epochs=30, batch_size=64))
    # desk-scale step size: target sets are tiny, so each epoch is only a few steps
    rct: RctConfig = field(default_factory=lambda: RctConfig(lr=0.03))


def pretrain(proto: LafrProtocol, settings: PipelineSettings) -> Backbone:
    cfg = replace(settings.pretrain, seed=proto.seed)
    return pretrain_backbone(proto.base, proto.base.features.shape[1], cfg)[0]


def cluster_bundle(theta0: Backbone, proto: LafrProtocol, settings: PipelineSettings) -> list[DomainData]:
    return [prepare_domain(embed_set(theta0, d), settings.k) for d in proto.cluster_domains]


def train_clusterers(bundle, settings: PipelineSettings, seed: int):
    meta_cfg = replace(settings.meta, seed=seed)
    meta_model, _ = train_meta_gcn(bundle, meta_cfg, hidden=settings.gcn_hidden)
    pooled_model, _ = train_pooled_gcn(bundle, meta_cfg, k=settings.k, hidden=settings.gcn_hidden)
    return meta_model, pooled_model


def pseudo_labelings(theta0: Backbone, target: FeatureSet, meta_model, pooled_model,
                     settings: PipelineSettings) -> dict[str, PseudoLabeling]:
    emb = embed_set(theta0, target.unlabeled())
    out = {"distance": distance_baseline(emb, settings.distance_threshold)}
    if meta_model is not None:
        out["meta-gcn"] = gcn_labels(meta_model, emb, settings.k, settings.tau, tag="meta-gcn")
    if pooled_model is not None:
        out["gcn"] = gcn_labels(pooled_model, emb, settings.k, settings.tau, tag="gcn")
    return out
