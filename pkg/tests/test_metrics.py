import numpy as np
import pytest

from fskgc.metrics import EvalReport, filter_candidates, gold_rank


def brute_force_rank(scores, ids, gold):
    """Full sort by (-score, id); position of the gold, 1-based."""
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [ids[i] for i in order].index(gold) + 1


def test_example_mrr():
    rep = EvalReport.from_ranks([1, 2, 4])
    assert rep.mrr == pytest.approx((1 + 0.5 + 0.25) / 3)
    assert rep.hits_at == {1: pytest.approx(1 / 3), 5: 1.0, 10: 1.0}


def test_rank_eleven_misses_hits_at_ten():
    assert EvalReport.from_ranks([11]).hits_at[10] == 0.0


def test_ties_broken_by_candidate_id():
    scores = np.array([0.5, 0.9, 0.5, 0.5])
    ids = np.array([7, 3, 2, 9])
    assert gold_rank(scores, ids, 2) == 2
    assert gold_rank(scores, ids, 7) == 3
    assert gold_rank(scores, ids, 9) == 4


def test_missing_gold_is_an_error():
    with pytest.raises(KeyError):
        gold_rank(np.zeros(3), np.array([1, 2, 3]), 5)


def test_random_matrices_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        scores = rng.integers(0, 6, size=(20, 50)).astype(float)  # many ties
        golds = rng.integers(0, 50, size=20)
        ids = np.arange(50)
        ranks = [gold_rank(scores[q], ids, golds[q]) for q in range(20)]
        ref = [brute_force_rank(list(scores[q]), list(ids), golds[q]) for q in range(20)]
        assert ranks == ref


def test_filtering_removes_other_truths_only():
    out = filter_candidates([0, 1, 2, 3, 4], 2, {1, 2, 4})
    assert list(out) == [0, 2, 3]
    assert list(filter_candidates([0, 1], 1, set())) == [0, 1]


def test_empty_report_and_json():
    rep = EvalReport.from_ranks([])
    assert rep.n_queries == 0 and rep.mrr == 0.0
    assert '"MRR"' in EvalReport.from_ranks([1, 3]).to_json()
