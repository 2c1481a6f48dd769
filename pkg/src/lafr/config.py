"""Run configuration: one JSON file per experiment, validated before any work starts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigurationError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    dim: int = Field(32, ge=2)
    crowding: float = Field(0.3, ge=0.0, lt=1.0)
    base_classes: int = Field(300, ge=2)
    base_images: tuple[int, int] = (8, 12)
    cluster_domains: int = Field(3, ge=2)
    cluster_classes: int = Field(50, ge=1)
    cluster_images: tuple[int, int] = (5, 20)
    target_classes: int = Field(10, ge=1)
    target_images: tuple[int, int] = (8, 12)
    test_classes: int = Field(60, ge=2)
    test_images: tuple[int, int] = (5, 8)
    rotation_strength: float = Field(0.3, ge=0.0)
    contrast_shift: float = Field(0.8, ge=0.0)
    noise_sigma: float = Field(0.12, ge=0.0)
    client_spread: float = Field(0.1, ge=0.0)

    @field_validator("base_images", "cluster_images", "target_images", "test_images")
    @classmethod
    def _range(cls, v):
        if not 1 <= v[0] <= v[1]:
            raise ValueError("image range must satisfy 1 <= lo <= hi")
        return v


class GraphSection(_Section):
    k: int = Field(10, ge=1)


class GcnSection(_Section):
    hidden: tuple[int, ...] = (64,)


class MetaSection(_Section):
    alpha: float = Field(0.1, ge=0.0)
    beta: float = Field(0.1, gt=0.0)
    xi: float = Field(1.0, ge=0.0)
    max_iter: int = Field(2000, ge=1)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)


class ClusterSection(_Section):
    tau: float = Field(0.8, ge=-1.0)
    linking: Literal["confidence", "nearest"] = "confidence"
    baseline_threshold: float = Field(0.3, ge=0.0, le=2.0)


class PretrainSection(_Section):
    loss_kind: Literal["am-softmax", "circle"] = "am-softmax"
    hidden: int = Field(128, ge=1)
    lr: float = Field(0.05, gt=0.0)
    epochs: int = Field(30, ge=0)
    batch_size: int = Field(64, ge=1)


class RctSection(_Section):
    loss_kind: Literal["am-softmax", "circle"] = "circle"
    gamma: float | None = None
    margin: float | None = None
    lam: float = Field(0.1, ge=0.0)
    lr: float = Field(0.03, gt=0.0)
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(32, ge=1)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    min_class_size: int = Field(1, ge=1)


class FederatedSection(_Section):
    clients: int = Field(4, ge=1)
    rounds: int = Field(20, ge=1)
    anchor: Literal["server", "initial"] = "server"


class EvalSection(_Section):
    fmr_targets: tuple[float, ...] = (1e-2, 1e-3)
    balanced_pairs: bool = True

    @field_validator("fmr_targets")
    @classmethod
    def _targets(cls, v):
        if not v or any(not 0 < t < 1 for t in v):
            raise ValueError("FMR targets must lie in (0, 1)")
        return v


class RunConfig(_Section):
    seed: int = Field(0, ge=0, lt=2**64)
    data: DataSection = DataSection()
    graph: GraphSection = GraphSection()
    gcn: GcnSection = GcnSection()
    meta: MetaSection = MetaSection()
    cluster: ClusterSection = ClusterSection()
    pretrain: PretrainSection = PretrainSection()
    rct: RctSection = RctSection()
    federated: FederatedSection = FederatedSection()
    eval: EvalSection = EvalSection()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values parse as JSON when they can."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"override {item!r} is not key=value")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {item!r} descends into a non-section")
        node[parts[-1]] = _parse_value(value)
    return out


def build_config(raw: dict | None = None, overrides=(), seed: int | None = None) -> RunConfig:
    raw = apply_overrides(raw or {}, overrides)
    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration:\n{exc}") from exc


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a JSON object")
    return build_config(raw, overrides, seed)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
