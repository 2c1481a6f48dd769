import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lafr.errors import FormatError, InvalidArgumentError
from lafr.recognition import (
    evaluate_verification,
    init_backbone,
    make_pairs,
    pair_scores,
    read_pairs_csv,
    verification_from_scores,
    write_pairs_csv,
)

from oracles import fnmr_at_fmr_sweep, threshold_sweep

score_sets = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([round(v * 0.05, 2) for v in range(-20, 21)]), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )
).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


def test_perfect_separation():
    rep = verification_from_scores([0.9, 0.8, 0.1, 0.3], [True, True, False, False])
    assert rep.accuracy == 1.0
    assert 0.3 <= rep.threshold < 0.8


def test_fmr_zero_threshold_and_fnmr():
    rep = verification_from_scores([0.9, 0.8, 0.2, 0.1, 0.3], [True, True, True, False, False], (0.0,))
    assert rep.threshold_at_fmr[0.0] == 0.3  # accept iff score > 0.3
    assert rep.fnmr_at_fmr[0.0] == 1 / 3


def test_indistinguishable_scores_give_half():
    scores = [0.1, 0.5, 0.9] * 2
    rep = verification_from_scores(scores, [True] * 3 + [False] * 3)
    assert rep.accuracy == 0.5


def test_empty_pairs_rejected():
    with pytest.raises(InvalidArgumentError):
        verification_from_scores([], [])
    with pytest.raises(InvalidArgumentError):
        evaluate_verification(init_backbone(3, 2, 4), np.zeros((2, 3)), [], [])


@given(score_sets, st.sampled_from([0.0, 0.01, 0.1, 0.5]))
def test_matches_exhaustive_threshold_sweep(data, target):
    scores, same = np.array(data[0]), np.array(data[1])
    rep = verification_from_scores(scores, same, (target,))
    acc, t = threshold_sweep(scores, same)
    assert rep.accuracy == acc and rep.threshold == t
    fnmr, t_fmr = fnmr_at_fmr_sweep(scores, same, target)
    assert rep.fnmr_at_fmr[target] == fnmr and rep.threshold_at_fmr[target] == t_fmr


@given(score_sets)
def test_roc_is_monotone(data):
    rep = verification_from_scores(np.array(data[0]), np.array(data[1]))
    assert np.all(np.diff(rep.roc_fmr) <= 0) and np.all(np.diff(rep.roc_fnmr) >= 0)


def test_resolution_flag():
    rep = verification_from_scores([0.9, 0.1, 0.2, 0.3], [True, False, False, False], (1e-6, 0.5))
    assert rep.resolution_limited == {1e-6: True, 0.5: False}  # one impostor step is 1/3
    assert json.loads(rep.to_json())["accuracy"] == 1.0


def test_pair_scores_are_cosines():
    emb = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    np.testing.assert_allclose(pair_scores(emb, [(0, 1), (1, 2)]), [0.6, 0.8])


def test_make_pairs_balanced_and_exhaustive():
    labels = np.array([0, 0, 0, 1, 1, 2, 2, 2])
    pairs, same = make_pairs(labels, seed=1)
    assert same.sum() == 3 + 1 + 3 and (~same).sum() == same.sum()
    assert all((labels[a] == labels[b]) == s for (a, b), s in zip(pairs, same))
    assert len({tuple(p) for p in pairs.tolist()}) == len(pairs)
    full, full_same = make_pairs(labels, balanced=False)
    assert len(full) == 8 * 7 // 2 and full_same.sum() == 7
    again, _ = make_pairs(labels, seed=1)
    assert again.tobytes() == pairs.tobytes()


def test_pairs_csv_round_trip(tmp_path):
    ids = ["a", "b", "c"]
    pairs, same = np.array([[0, 1], [1, 2]]), np.array([True, False])
    write_pairs_csv(tmp_path / "p.csv", ids, pairs, same)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "id_a,id_b,same_flag"
    back, back_same = read_pairs_csv(tmp_path / "p.csv", ids)
    assert back.tolist() == pairs.tolist() and back_same.tolist() == same.tolist()
    with pytest.raises(FormatError):
        read_pairs_csv(tmp_path / "p.csv", ["a", "b"])
