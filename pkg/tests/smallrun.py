"""A tiny end-to-end CLI run shared by the CLI and determinism tests."""

from lafr.cli import main

SMALL = [
    "data.dim=8", "data.base_classes=20", "data.base_images=[4,5]", "data.cluster_classes=8",
    "data.cluster_images=[3,5]", "data.target_classes=5", "data.target_images=[4,6]", "data.test_classes=8",
    "data.test_images=[3,4]", "graph.k=4", "gcn.hidden=[6]", "meta.max_iter=5", "pretrain.hidden=16",
    "pretrain.epochs=2", "rct.epochs=2", "federated.clients=2", "federated.rounds=2",
]

STEPS = [
    ["gen"],
    ["pretrain"],
    ["train-gcn", "--method", "meta"],
    ["train-gcn", "--method", "pooled"],
    ["cluster", "--method", "meta-gcn"],
    ["cluster", "--method", "gcn"],
    ["cluster", "--method", "distance"],
    ["cluster", "--method", "gt"],
    ["adapt", "--method", "rct", "--labels", "gt"],
    ["adapt", "--method", "finetune", "--labels", "gt"],
    ["federate", "--method", "distance"],
    ["eval", "--method", "theta0"],
    ["eval", "--method", "gt-rct"],
    ["report"],
]


def run_small_pipeline(out, seed=0):
    """Run every command in order; return ``{relative path: bytes}`` of the outputs."""
    for step in STEPS:
        extra = [f"--set={s}" for s in SMALL] if step[0] == "gen" else []
        code = main(step + ["--out", str(out), "--seed", str(seed)] + extra)
        assert code == 0, f"step {step} failed"
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
