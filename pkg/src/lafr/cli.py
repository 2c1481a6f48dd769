"""Command-line driver: every pipeline stage as a reproducible, config-driven command.

All artifacts live under ``--out`` (default ``run``)::

    config.json                      resolved configuration (written by gen)
    data/*.lafr, data/*-pairs.csv    synthetic domains and verification pairs
    models/theta0.lafr               pre-trained backbone
    models/gcn-{meta,pooled}.lafr    clustering GCNs
    labels/<tag>.csv                 pseudo labelings of the target adaptation set
    models/<labels>-<method>.lafr    adapted backbones
    models/fed-round<t>.lafr         federated server checkpoints
    reports/                         metric JSON/CSV and the summary table
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clusterer import (
    PseudoLabeling,
    canonical_labels,
    distance_baseline,
    read_labeling,
    score_clustering,
    write_labeling,
)
from .config import RunConfig, dump_config, load_config
from .data import load_features, save_features
from .errors import InvalidArgumentError, LafrError, MissingArtifactError
from .federated import FederationConfig, make_client, run_dual_loop
from .gcn import load_gcn, save_gcn
from .io import atomic_write_text
from .meta import MetaConfig, prepare_domain, train_meta_gcn, train_pooled_gcn
from .protocol import DomainShift, ProtocolConfig, embed_set, gcn_labels, make_protocol
from .recognition import (
    RctConfig,
    evaluate_verification,
    finetune_baseline,
    load_backbone,
    pretrain_backbone,
    rct_adapt,
    read_pairs_csv,
    save_backbone,
    write_pairs_csv,
)

log = logging.getLogger("lafr")

LABEL_METHODS = ("meta-gcn", "gcn", "distance", "gt")
ADAPT_METHODS = ("rct", "finetune")


class Run:
    """Paths of one run directory plus the artifact guard."""

    def __init__(self, out, cfg: RunConfig):
        self.root = Path(out)
        self.cfg = cfg

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, rel: str, command: str) -> Path:
        p = self.root / rel
        if not p.exists():
            raise MissingArtifactError(p, command)
        return p

    def features(self, name: str):
        return load_features(self.need(f"data/{name}.lafr", "gen"))

    def backbone(self, name: str):
        producer = {"theta0": "pretrain"}.get(name, "adapt" if not name.startswith("fed-") else "federate")
        return load_backbone(self.need(f"models/{name}.lafr", producer))[0]

    def pairs(self, name: str, fset):
        return read_pairs_csv(self.need(f"data/{name}-pairs.csv", "gen"), fset.source_ids)


def protocol_config(cfg: RunConfig) -> ProtocolConfig:
    d = cfg.data
    return ProtocolConfig(
        dim=d.dim, crowding=d.crowding, base_classes=d.base_classes, base_images=d.base_images,
        cluster_domains=d.cluster_domains, cluster_classes=d.cluster_classes, cluster_images=d.cluster_images,
        target_classes=d.target_classes, target_images=d.target_images, test_classes=d.test_classes,
        test_images=d.test_images, shift=DomainShift(d.rotation_strength, d.contrast_shift, d.noise_sigma),
        num_clients=cfg.federated.clients, client_spread=d.client_spread,
    )


def rct_config(cfg: RunConfig) -> RctConfig:
    r = cfg.rct
    return RctConfig(loss_kind=r.loss_kind, gamma=r.gamma, margin=r.margin, lam=r.lam, lr=r.lr, epochs=r.epochs,
                     batch_size=r.batch_size, momentum=r.momentum, seed=cfg.seed, min_class_size=r.min_class_size)


def meta_config(cfg: RunConfig) -> MetaConfig:
    m = cfg.meta
    return MetaConfig(alpha=m.alpha, beta=m.beta, xi=m.xi, max_iter=m.max_iter, momentum=m.momentum, seed=cfg.seed)


def cmd_gen(run: Run, args) -> None:
    proto = make_protocol(run.cfg.seed, protocol_config(run.cfg))
    save_features(proto.base, run.path("data", "base.lafr"))
    for i, dom in enumerate(proto.cluster_domains):
        save_features(dom, run.path("data", f"cluster{i}.lafr"))
    save_features(proto.target_adapt, run.path("data", "target.lafr"))
    save_features(proto.target_test, run.path("data", "test.lafr"))
    write_pairs_csv(run.path("data", "test-pairs.csv"), proto.target_test.source_ids, proto.test_pairs, proto.test_same)
    for i, c in enumerate(proto.clients):
        save_features(c.adapt, run.path("data", f"client{i}.lafr"))
        save_features(c.test, run.path("data", f"client{i}-test.lafr"))
        write_pairs_csv(run.path("data", f"client{i}-test-pairs.csv"), c.test.source_ids, c.pairs, c.same)
    atomic_write_text(run.path("config.json"), dump_config(run.cfg))
    print(f"generated {3 + len(proto.cluster_domains) + 2 * len(proto.clients)} domain files in {run.root / 'data'}")


def cmd_pretrain(run: Run, args) -> None:
    base = run.features("base")
    p = run.cfg.pretrain
    cfg = RctConfig(loss_kind=p.loss_kind, lam=0.0, lr=p.lr, epochs=p.epochs, batch_size=p.batch_size,
                    seed=run.cfg.seed)
    backbone, bank, history = pretrain_backbone(base, run.cfg.data.dim, cfg, hidden=p.hidden)
    save_backbone(run.path("models", "theta0.lafr"), backbone, bank.weights, {"role": "pretrained"})
    last = history.epoch_loss[-1] if history.epoch_loss else float("nan")
    print(f"pre-trained backbone on {base.n} samples, final loss {last:.4f}")


def _cluster_bundle(run: Run, theta0):
    bundle = []
    i = 0
    while (run.root / f"data/cluster{i}.lafr").exists():
        bundle.append(prepare_domain(embed_set(theta0, run.features(f"cluster{i}")), run.cfg.graph.k))
        i += 1
    if not bundle:
        raise MissingArtifactError(run.root / "data/cluster0.lafr", "gen")
    return bundle


def cmd_train_gcn(run: Run, args) -> None:
    method = args.method or "meta"
    if method not in ("meta", "pooled"):
        raise InvalidArgumentError("train-gcn --method must be 'meta' or 'pooled'")
    theta0 = run.backbone("theta0")
    bundle = _cluster_bundle(run, theta0)
    hidden = run.cfg.gcn.hidden
    if method == "meta":
        model, history = train_meta_gcn(bundle, meta_config(run.cfg), hidden=hidden)
        history.write_csv(run.path("reports", "gcn-meta-loss.csv"))
    else:
        model, losses = train_pooled_gcn(bundle, meta_config(run.cfg), k=run.cfg.graph.k, hidden=hidden)
        lines = ["iteration,loss"] + [f"{i},{v!r}" for i, v in enumerate(losses)]
        atomic_write_text(run.path("reports", "gcn-pooled-loss.csv"), "\n".join(lines) + "\n")
    save_gcn(model, run.path("models", f"gcn-{method}.lafr"), {"method": method})
    print(f"trained {method} GCN on {len(bundle)} domains")


def cmd_cluster(run: Run, args) -> None:
    method = args.method or "meta-gcn"
    if method not in LABEL_METHODS:
        raise InvalidArgumentError(f"cluster --method must be one of {LABEL_METHODS}")
    target = run.features("target")
    cl = run.cfg.cluster
    if method == "gt":
        labeling = PseudoLabeling(canonical_labels(target.labels), "gt")
    else:
        emb = embed_set(run.backbone("theta0"), target.unlabeled())
        if method == "distance":
            labeling = distance_baseline(emb, cl.baseline_threshold)
        else:
            name = "gcn-meta" if method == "meta-gcn" else "gcn-pooled"
            model = load_gcn(run.need(f"models/{name}.lafr", f"train-gcn --method {name[4:]}"))
            labeling = gcn_labels(model, emb, run.cfg.graph.k, cl.tau, cl.linking, method)
    write_labeling(run.path("labels", f"{method}.csv"), labeling, target.source_ids)
    score = score_clustering(labeling, target.labels)
    row = {"method": method, "num_clusters": labeling.num_clusters, "pairwise_f": score.pairwise_f,
           "bcubed_f": score.bcubed_f, "pairwise_p": score.pairwise.precision, "pairwise_r": score.pairwise.recall}
    atomic_write_text(run.path("reports", f"cluster-{method}.json"), json.dumps(row, indent=1) + "\n")
    print(f"{method}: {labeling.num_clusters} clusters, F_P {score.pairwise_f:.4f}, F_B {score.bcubed_f:.4f}")


def _read_labels(run: Run, tag: str, target):
    labeling, ids = read_labeling(run.need(f"labels/{tag}.csv", f"cluster --method {tag}"))
    if list(ids) != list(target.source_ids):
        raise InvalidArgumentError(f"labels/{tag}.csv does not match the target set")
    return labeling


def cmd_adapt(run: Run, args) -> None:
    method = args.method or "rct"
    if method not in ADAPT_METHODS:
        raise InvalidArgumentError(f"adapt --method must be one of {ADAPT_METHODS}")
    tag = args.labels
    target = run.features("target")
    labeling = _read_labels(run, tag, target)
    theta0 = run.backbone("theta0")
    cfg = rct_config(run.cfg)
    name = f"{tag}-{method}"
    if labeling.num_clusters < 2:
        # nothing to separate; the pre-trained model is the adapted model
        log.warning("labeling %s has a single cluster; keeping the pre-trained backbone", tag)
        model, weights = theta0, None
    elif method == "rct":
        model, bank, _ = rct_adapt(theta0, target.unlabeled(), labeling, cfg)
        weights = bank.weights
    else:
        model, bank, _ = finetune_baseline(theta0, target.unlabeled(), labeling, cfg)
        weights = bank.weights
    save_backbone(run.path("models", f"{name}.lafr"), model, weights, {"labels": tag, "method": method})
    print(f"adapted backbone written to models/{name}.lafr")


def cmd_federate(run: Run, args) -> None:
    tag = args.method or "meta-gcn"
    if tag not in ("meta-gcn", "gcn", "distance"):
        raise InvalidArgumentError("federate --method picks the client labeler: meta-gcn, gcn or distance")
    theta0 = run.backbone("theta0")
    cl = run.cfg.cluster
    model = None
    if tag != "distance":
        name = "gcn-meta" if tag == "meta-gcn" else "gcn-pooled"
        model = load_gcn(run.need(f"models/{name}.lafr", f"train-gcn --method {name[4:]}"))
    clients = []
    for i in range(run.cfg.federated.clients):
        shard = run.features(f"client{i}")
        test = run.features(f"client{i}-test")
        pairs, same = run.pairs(f"client{i}-test", test)
        emb = embed_set(theta0, shard.unlabeled())
        if model is None:
            labeling = distance_baseline(emb, cl.baseline_threshold)
        else:
            labeling = gcn_labels(model, emb, run.cfg.graph.k, cl.tau, cl.linking, tag)
        clients.append(make_client(f"client{i}", shard, labeling, theta0, test.features, pairs, same,
                                   run.cfg.rct.min_class_size))
    fed = FederationConfig(rounds=run.cfg.federated.rounds, rct=rct_config(run.cfg),
                           anchor=run.cfg.federated.anchor, fmr_target=min(run.cfg.eval.fmr_targets),
                           seed=run.cfg.seed)
    result = run_dual_loop(theta0, clients, fed)
    for t, ckpt in enumerate(result.server_checkpoints[1:], start=1):
        save_backbone(run.path("models", f"fed-round{t}.lafr"), ckpt, None, {"round": t, "labels": tag})
    result.write_csv(run.path("reports", "federated.csv"))
    first, last = result.mean_metric(1, "accuracy"), result.mean_metric(fed.rounds, "accuracy")
    print(f"{fed.rounds} rounds, mean client accuracy {first:.4f} (round 1) -> {last:.4f} (round {fed.rounds})")


def cmd_eval(run: Run, args) -> None:
    name = args.method or "theta0"
    model = run.backbone(name)
    test = run.features("test")
    pairs, same = run.pairs("test", test)
    report = evaluate_verification(model, test.features, pairs, same, run.cfg.eval.fmr_targets)
    atomic_write_text(run.path("reports", f"eval-{name}.json"), report.to_json() + "\n")
    fnmr = ", ".join(f"FNMR@{t:g}={report.fnmr_at_fmr[t]:.4f}" for t in run.cfg.eval.fmr_targets)
    print(f"{name}: accuracy {report.accuracy:.4f}, {fnmr}")


def summary_table(root: Path) -> str:
    """Join the per-method metric files into one CSV table."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["table", "method", "metric", "value"])
    reports = root / "reports"
    for path in sorted(reports.glob("cluster-*.json")):
        row = json.loads(path.read_text())
        writer.writerow(["clustering", row["method"], "pairwise_f", repr(row["pairwise_f"])])
        writer.writerow(["clustering", row["method"], "bcubed_f", repr(row["bcubed_f"])])
    for path in sorted(reports.glob("eval-*.json")):
        row = json.loads(path.read_text())
        method = path.stem[len("eval-"):]
        writer.writerow(["verification", method, "accuracy", repr(row["accuracy"])])
        for target, value in sorted(row["fnmr_at_fmr"].items()):
            writer.writerow(["verification", method, f"fnmr@{target}", repr(value)])
    fed = reports / "federated.csv"
    if fed.exists():
        rows = list(csv.DictReader(fed.open()))
        for rnd in sorted({int(r["round"]) for r in rows}):
            vals = [float(r["accuracy"]) for r in rows if int(r["round"]) == rnd]
            writer.writerow(["federated", f"round{rnd}", "mean_client_accuracy", repr(float(np.mean(vals)))])
    return buf.getvalue()


def cmd_report(run: Run, args) -> None:
    if not (run.root / "reports").is_dir():
        raise MissingArtifactError(run.root / "reports", "cluster / eval")
    table = summary_table(run.root)
    atomic_write_text(run.path("reports", "summary.csv"), table)
    print(table, end="")


COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "train-gcn": cmd_train_gcn,
    "cluster": cmd_cluster,
    "adapt": cmd_adapt,
    "federate": cmd_federate,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lafr", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"lafr {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="run", help="run directory (default: run)")
    common.add_argument("--method", help="method tag (meaning depends on the command)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. rct.lam=0")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate the synthetic domains and verification pairs",
        "pretrain": "train the base backbone on the labelled base domain",
        "train-gcn": "train the clustering GCN (--method meta|pooled)",
        "cluster": "pseudo-label the target set (--method meta-gcn|gcn|distance|gt)",
        "adapt": "adapt the backbone (--method rct|finetune --labels TAG)",
        "federate": "run the federated dual loop (--method picks the client labeler)",
        "eval": "verification metrics on the target test pairs (--method MODEL, e.g. theta0)",
        "report": "join all metric files into reports/summary.csv",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "adapt":
            p.add_argument("--labels", default="meta-gcn", choices=LABEL_METHODS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config_path = args.config
        if config_path is None and args.command != "gen" and (Path(args.out) / "config.json").exists():
            config_path = Path(args.out) / "config.json"
        cfg = load_config(config_path, args.overrides, args.seed)
        COMMANDS[args.command](Run(args.out, cfg), args)
    except LafrError as exc:
        print(f"lafr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
