"""Pair-based verification: best-threshold accuracy, ROC and FNMR at fixed FMR.

A pair is accepted as a match when its cosine score is strictly greater than
the threshold. Candidate thresholds are ``-inf`` followed by every distinct
score, so the sweep is exhaustive without interpolation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ..data import make_rng
from ..errors import FormatError, InvalidArgumentError
from ..io import atomic_write_text


@dataclass
class VerificationReport:
    accuracy: float
    threshold: float
    roc_thresholds: np.ndarray
    roc_fmr: np.ndarray
    roc_fnmr: np.ndarray
    fnmr_at_fmr: dict[float, float] = field(default_factory=dict)
    threshold_at_fmr: dict[float, float] = field(default_factory=dict)
    # targets below 1/num_impostors: the reported FNMR is only an upper bound
    resolution_limited: dict[float, bool] = field(default_factory=dict)
    num_genuine: int = 0
    num_impostor: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "threshold": self.threshold,
                "num_genuine": self.num_genuine,
                "num_impostor": self.num_impostor,
                "roc": [
                    [float(t), float(a), float(b)]
                    for t, a, b in zip(self.roc_thresholds, self.roc_fmr, self.roc_fnmr)
                ],
                "fnmr_at_fmr": {repr(k): v for k, v in self.fnmr_at_fmr.items()},
                "threshold_at_fmr": {repr(k): v for k, v in self.threshold_at_fmr.items()},
                "resolution_limited": {repr(k): v for k, v in self.resolution_limited.items()},
            },
            indent=1,
        )


def verification_from_scores(scores, same, fmr_targets=(1e-6,)) -> VerificationReport:
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if scores.size == 0:
        raise InvalidArgumentError("empty pair list")
    if scores.shape != same.shape:
        raise InvalidArgumentError("scores and same-flags differ in length")
    n_gen = int(same.sum())
    n_imp = int(same.size - n_gen)

    thresholds = np.concatenate([[-np.inf], np.unique(scores)])
    gen_sorted = np.sort(scores[same])
    imp_sorted = np.sort(scores[~same])
    # counts of scores <= threshold
    gen_le = np.searchsorted(gen_sorted, thresholds, side="right")
    imp_le = np.searchsorted(imp_sorted, thresholds, side="right")
    correct = (n_gen - gen_le) + imp_le
    best = int(np.argmax(correct))  # first maximum = lowest threshold
    fmr = (n_imp - imp_le) / n_imp if n_imp else np.zeros(thresholds.size)
    fnmr = gen_le / n_gen if n_gen else np.zeros(thresholds.size)

    report = VerificationReport(
        accuracy=float(correct[best] / scores.size),
        threshold=float(thresholds[best]),
        roc_thresholds=thresholds,
        roc_fmr=fmr,
        roc_fnmr=fnmr,
        num_genuine=n_gen,
        num_impostor=n_imp,
    )
    if n_gen and n_imp:
        for target in fmr_targets:
            target = float(target)
            idx = int(np.argmax(fmr <= target))  # fmr is non-increasing; last entry is 0
            report.fnmr_at_fmr[target] = float(fnmr[idx])
            report.threshold_at_fmr[target] = float(thresholds[idx])
            report.resolution_limited[target] = 0 < target < 1.0 / n_imp
    return report


def pair_scores(embeddings, pairs) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.einsum("ij,ij->i", emb[pairs[:, 0]], emb[pairs[:, 1]])


def evaluate_verification(backbone, features, pairs, same, fmr_targets=(1e-6,)) -> VerificationReport:
    """Embed ``features`` with ``backbone`` and score the index pairs."""
    if len(pairs) == 0:
        raise InvalidArgumentError("empty pair list")
    emb = backbone.embed(features)
    return verification_from_scores(pair_scores(emb, pairs), same, fmr_targets)


def make_pairs(labels, seed: int = 0, balanced: bool = True):
    """All genuine pairs plus impostor pairs.

    ``balanced=True`` samples as many distinct impostor pairs as there are
    genuine ones; otherwise every impostor pair is returned.
    """
    labels = np.asarray(labels)
    i, j = np.triu_indices(labels.size, k=1)
    same = labels[i] == labels[j]
    gen = np.flatnonzero(same)
    imp = np.flatnonzero(~same)
    if balanced and imp.size > gen.size:
        rng = make_rng(seed, 0x9A125)
        imp = np.sort(rng.choice(imp, size=gen.size, replace=False))
    keep = np.concatenate([gen, imp])
    return np.stack([i[keep], j[keep]], axis=1), same[keep]


def write_pairs_csv(path, source_ids, pairs, same) -> None:
    lines = ["id_a,id_b,same_flag"]
    for (a, b), s in zip(pairs, same):
        lines.append(f"{source_ids[a]},{source_ids[b]},{int(bool(s))}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_pairs_csv(path, source_ids):
    index = {sid: i for i, sid in enumerate(source_ids)}
    pairs, same = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id_a", "id_b", "same_flag"]:
            raise FormatError(f"{path}: expected header id_a,id_b,same_flag")
        for row in reader:
            try:
                pairs.append((index[row["id_a"]], index[row["id_b"]]))
            except KeyError as exc:
                raise FormatError(f"{path}: unknown source id {exc}") from exc
            same.append(row["same_flag"] == "1")
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(same, dtype=bool)
