import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lafr.clusterer import (
    PseudoLabeling,
    UnionFind,
    bcubed_f,
    canonical_labels,
    distance_baseline,
    extract_pseudo_labels,
    pairwise_f,
    read_labeling,
    write_labeling,
)
from lafr.data import EmbeddingSet, l2_normalize
from lafr.errors import FormatError, InvalidArgumentError
from lafr.graph import KnnGraph, build_knn_graph, ground_truth_confidence, normalized_adjacency

from oracles import bcubed_brute, components_brute, pairwise_brute, same_partition

labelings = st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 6), min_size=n, max_size=n),
                        st.lists(st.integers(0, 6), min_size=n, max_size=n)))


def _graph(neighbors, affinities):
    neighbors, affinities = np.asarray(neighbors), np.asarray(affinities, dtype=float)
    return KnnGraph(neighbors, affinities, normalized_adjacency(neighbors, affinities))


def _random_graph(n, seed, k=4):
    x = l2_normalize(np.random.default_rng(seed).standard_normal((n, 3)))
    return build_knn_graph(EmbeddingSet(x), min(k, n - 1))


def test_tau_above_one_gives_singletons():
    g = _random_graph(20, 0)
    conf = np.random.default_rng(0).random(20)
    assert extract_pseudo_labels(g, conf, 1.0 + 1e-9).num_clusters == 20


def test_two_tight_groups_recovered():
    # vertices 0-2 and 3-5, intra affinity 0.95, the single cross neighbor at 0.2
    neighbors, affs = [], []
    for i in range(6):
        group = [j for j in range(6) if j // 3 == i // 3 and j != i]
        cross = 3 if i < 3 else 0
        neighbors.append(group + [cross])
        affs.append([0.95, 0.95, 0.2])
    g = _graph(neighbors, affs)
    truth = np.array([0, 0, 0, 1, 1, 1])
    pl = extract_pseudo_labels(g, ground_truth_confidence(g, truth), 0.8)
    assert pl.num_clusters == 2
    assert pairwise_f(pl, truth).f == 1.0


def test_confidence_chain_forms_one_cluster():
    # a -> b -> c with rising confidence; each one's best higher neighbor is the next
    g = _graph([[1, 2], [2, 0], [1, 0]], [[0.9, 0.85], [0.95, 0.9], [0.95, 0.85]])
    pl = extract_pseudo_labels(g, np.array([0.1, 0.5, 0.9]), 0.8)
    assert pl.num_clusters == 1


def test_nearest_linking_ignores_confidence():
    g = _graph([[1], [0], [1]], [[0.9], [0.9], [0.9]])
    conf = np.array([0.9, 0.1, 0.5])
    assert extract_pseudo_labels(g, conf, 0.8, linking="nearest").num_clusters == 1


@given(st.integers(2, 40), st.integers(0, 2**31), st.floats(-1, 1.2))
def test_output_is_valid_partition(n, seed, tau):
    g = _random_graph(n, seed)
    conf = np.random.default_rng(seed).standard_normal(n)
    for linking in ("confidence", "nearest"):
        pl = extract_pseudo_labels(g, conf, tau, linking)
        ids = pl.cluster_id
        assert ids.shape == (n,) and set(ids.tolist()) == set(range(pl.num_clusters))


@given(st.integers(2, 40), st.integers(0, 2**31), st.floats(-1, 1), st.floats(0, 0.5))
def test_raising_tau_never_merges(n, seed, tau, delta):
    g = _random_graph(n, seed)
    conf = np.random.default_rng(seed).standard_normal(n)
    low = extract_pseudo_labels(g, conf, tau).cluster_id
    high = extract_pseudo_labels(g, conf, tau + delta).cluster_id
    for i, j in itertools.combinations(range(n), 2):
        if high[i] == high[j]:
            assert low[i] == low[j]


def test_tau_validation():
    g = _random_graph(5, 0)
    for bad in (float("nan"), -1.5):
        with pytest.raises(InvalidArgumentError):
            extract_pseudo_labels(g, np.zeros(5), bad)


def test_distance_baseline_identical_and_far():
    same = EmbeddingSet(np.tile([[1.0, 0.0]], (4, 1)))
    assert distance_baseline(same).num_clusters == 1
    assert distance_baseline(EmbeddingSet(np.eye(4))).num_clusters == 4


def test_distance_baseline_transitive_closure():
    angles = np.radians([0.0, 40.0, 80.0])  # 1-cos40 = 0.234 < 0.3, 1-cos80 = 0.83
    x = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pl = distance_baseline(EmbeddingSet(x), 0.3)
    dist = 1 - x @ x.T
    edges = [(i, j) for i, j in itertools.combinations(range(3), 2) if dist[i, j] < 0.3]
    assert pl.num_clusters == 1
    assert same_partition(pl.cluster_id, components_brute(3, edges))


@given(st.integers(2, 30), st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_distance_baseline_matches_component_oracle_and_row_order(n, seed, thr):
    rng = np.random.default_rng(seed)
    x = l2_normalize(rng.standard_normal((n, 3)))
    pl = distance_baseline(EmbeddingSet(x), thr)
    x64 = EmbeddingSet(x).as_float64()
    sims = np.clip((x64 / np.linalg.norm(x64, axis=1, keepdims=True)) @
                   (x64 / np.linalg.norm(x64, axis=1, keepdims=True)).T, -1, 1)
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2) if 1 - sims[i, j] < thr]
    assert same_partition(pl.cluster_id, components_brute(n, edges))
    perm = rng.permutation(n)
    permuted = distance_baseline(EmbeddingSet(x[perm]), thr).cluster_id
    assert same_partition(permuted, pl.cluster_id[perm])


def test_pairwise_worked_example():
    prf = pairwise_f(np.array([0, 0, 0]), np.array([0, 0, 1]))
    assert (prf.precision, prf.recall, prf.f) == (1 / 3, 1.0, 0.5)


def test_bcubed_worked_examples():
    prf = bcubed_f(np.array([0, 0, 0]), np.array([0, 0, 1]))
    assert prf.precision == float(Fraction(5, 9)) and prf.recall == 1.0
    assert prf.f == float(Fraction(10, 14))
    single = bcubed_f(np.array([0, 1, 2]), np.array([0, 0, 1]))
    assert (single.precision, single.recall, single.f) == (1.0, float(Fraction(2, 3)), 0.8)


def test_identity_scores_one():
    y = np.array([0, 1, 1, 2, 0])
    assert pairwise_f(y, y).f == 1.0 and bcubed_f(y, y).f == 1.0


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force_exactly(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 201))
    pred = rng.integers(0, int(rng.integers(1, 30)), n)
    truth = rng.integers(0, int(rng.integers(1, 30)), n)
    p, r, f = pairwise_brute(pred.tolist(), truth.tolist())
    got = pairwise_f(pred, truth)
    assert (got.precision, got.recall, got.f) == (float(p), float(r), float(f))
    p, r, f = bcubed_brute(pred.tolist(), truth.tolist())
    got = bcubed_f(pred, truth)
    assert (got.precision, got.recall, got.f) == (float(p), float(r), float(f))


@given(labelings)
def test_metrics_symmetric_under_relabeling(pair):
    pred, truth = np.array(pair[0]), np.array(pair[1])
    perm = np.random.default_rng(len(pred)).permutation(7)
    for metric in (pairwise_f, bcubed_f):
        assert metric(pred, truth) == metric(perm[pred], truth) == metric(pred, perm[truth])


@given(labelings)
def test_metrics_equal_one_iff_identical_partition(pair):
    pred, truth = np.array(pair[0]), np.array(pair[1])
    identical = same_partition(pred, truth)
    assert (pairwise_f(pred, truth).f == 1.0) == identical
    assert (bcubed_f(pred, truth).f == 1.0) == identical


def test_pairwise_zero_pair_conventions():
    singletons = np.arange(4)
    assert pairwise_f(singletons, singletons).f == 1.0
    prf = pairwise_f(singletons, np.array([0, 0, 1, 2]))
    assert (prf.precision, prf.recall, prf.f) == (0.0, 0.0, 0.0)


def test_canonical_labels_first_occurrence():
    assert canonical_labels([5, 5, 2, 9, 2]).tolist() == [0, 0, 1, 2, 1]


def test_union_find():
    uf = UnionFind(5)
    uf.union(3, 4)
    uf.union(0, 4)
    assert same_partition(uf.labels(), [0, 1, 2, 0, 0])


def test_labeling_csv_round_trip(tmp_path):
    pl = PseudoLabeling(np.array([0, 1, 0]), "meta-gcn", 0.8)
    write_labeling(tmp_path / "l.csv", pl, ["a", "b", "c"])
    back, ids = read_labeling(tmp_path / "l.csv")
    assert ids == ["a", "b", "c"] and back.cluster_id.tolist() == [0, 1, 0]
    assert back.method_tag == "meta-gcn" and back.tau == 0.8
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(FormatError):
        read_labeling(tmp_path / "bad.csv")


def test_labeling_requires_contiguous_ids():
    with pytest.raises(InvalidArgumentError):
        PseudoLabeling(np.array([0, 2]), "x")
