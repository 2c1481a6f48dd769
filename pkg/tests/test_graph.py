import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lafr.data import EmbeddingSet, l2_normalize
from lafr.errors import InvalidArgumentError
from lafr.graph import KnnGraph, build_knn_graph, ground_truth_confidence, normalized_adjacency

from oracles import dense_knn, dense_norm_adjacency


def _random_set(n, d, seed):
    return EmbeddingSet(l2_normalize(np.random.default_rng(seed).standard_normal((n, d))))


def _graph(neighbors, affinities):
    neighbors, affinities = np.asarray(neighbors), np.asarray(affinities, dtype=float)
    return KnnGraph(neighbors, affinities, normalized_adjacency(neighbors, affinities))


def test_identical_vectors_have_unit_affinity():
    g = build_knn_graph(EmbeddingSet(np.tile([[0.6, 0.8]], (3, 1))), k=2)
    np.testing.assert_allclose(g.affinities, 1.0, atol=1e-7)


def test_orthogonal_neighbor_has_zero_affinity():
    g = build_knn_graph(EmbeddingSet(np.eye(3)), k=2)
    np.testing.assert_allclose(g.affinities, 0.0, atol=1e-12)


def test_neighbors_match_exhaustive_scan_50x8():
    eset = _random_set(50, 8, 0)
    g = build_knn_graph(eset, k=5)
    assert g.neighbor_ids.tolist() == dense_knn(eset.as_float64(), 5)


@given(st.integers(3, 40), st.integers(2, 6), st.integers(0, 2**31))
def test_neighbor_sets_match_oracle_property(n, d, seed):
    eset = _random_set(n, d, seed)
    k = min(4, n - 1)
    g = build_knn_graph(eset, k)
    oracle = dense_knn(eset.as_float64(), k)
    assert [sorted(r) for r in g.neighbor_ids.tolist()] == [sorted(r) for r in oracle]


@given(st.integers(3, 30), st.integers(0, 2**31))
def test_normalized_adjacency_is_row_stochastic(n, seed):
    g = build_knn_graph(_random_set(n, 4, seed), k=min(3, n - 1))
    dense = g.norm_adjacency.toarray()
    np.testing.assert_allclose(dense.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(dense, dense_norm_adjacency(g.neighbor_ids, g.affinities), atol=1e-15)


@given(st.integers(4, 30), st.integers(0, 2**31))
def test_permutation_leaves_neighbor_sets_invariant(n, seed):
    eset = _random_set(n, 5, seed)
    perm = np.random.default_rng(seed).permutation(n)
    g = build_knn_graph(eset, 3)
    gp = build_knn_graph(EmbeddingSet(eset.vectors[perm]), 3)
    for new_i, old_i in enumerate(perm):
        assert sorted(perm[gp.neighbor_ids[new_i]].tolist()) == sorted(g.neighbor_ids[old_i].tolist())


@given(st.integers(4, 30), st.integers(0, 2**31))
def test_confidence_bounded_by_max_affinity(n, seed):
    eset = _random_set(n, 4, seed)
    labels = np.random.default_rng(seed).integers(0, 3, n)
    g = build_knn_graph(eset, 3)
    c = ground_truth_confidence(g, labels)
    assert np.all(np.abs(c) <= np.abs(g.affinities).max(axis=1) + 1e-12)
    assert np.all(np.abs(c) <= 1.0)


def test_confidence_all_same_label():
    g = _graph([[1, 2], [0, 2], [0, 1]], [[0.8, 0.6]] * 3)
    assert ground_truth_confidence(g, np.array([0, 0, 0]))[0] == pytest.approx(0.7, abs=1e-12)


def test_confidence_mixed_labels():
    g = _graph([[1, 2], [0, 2], [0, 1]], [[0.9, 0.5]] * 3)
    assert ground_truth_confidence(g, np.array([0, 0, 1]))[0] == pytest.approx(0.2, abs=1e-12)


def test_confidence_all_other_labels():
    g = _graph([[1, 2], [0, 2], [0, 1]], [[0.4, 0.6]] * 3)
    assert ground_truth_confidence(g, np.array([0, 1, 1]))[0] == pytest.approx(-0.5, abs=1e-12)


def test_k_must_be_below_n():
    eset = _random_set(4, 3, 0)
    for k in (0, 4, 5):
        with pytest.raises(InvalidArgumentError):
            build_knn_graph(eset, k)
