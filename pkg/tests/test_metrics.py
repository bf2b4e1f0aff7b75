import itertools
import json
import math
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ref_ap, ref_ndcg, ref_recall, ref_rr
from reposearch.errors import DuplicateItems, EmptyGroundTruth, MalformedIdentifier, UnmatchedQuery
from reposearch.metrics import (
    GroundTruth,
    Prediction,
    RankedPrediction,
    average_precision,
    dcg_at_k,
    evaluate,
    idcg_at_k,
    load_predictions,
    load_truths,
    ndcg_at_k,
    recall_at_k,
    reciprocal_rank,
)

# hand arithmetic, done before the implementation:
#   DCG@5([x,a,y,b]) = 1/log2(3) + 1/log2(5) = 0.63093 + 0.43068 = 1.06161
#   IDCG@5 for |A|=2 = 1 + 1/log2(3) = 1.63093
#   nDCG@5 = 1.06161 / 1.63093 = 0.65093
HAND = {
    "idcg2": 1.63093,
    "idcg3": 2.13093,
    "ndcg_xayb": 0.6510,
    "ap_axb": 0.8333,
    "mrr_124": 0.58333,
    "map": 0.91667,
    "recall3_xayb": 0.5,
}


def test_hand_values():
    assert idcg_at_k({"a", "b"}, 5) == pytest.approx(HAND["idcg2"], abs=1e-5)
    assert idcg_at_k({"a", "b", "c"}, 5) == pytest.approx(HAND["idcg3"], abs=1e-5)
    assert dcg_at_k(["x", "a", "y", "b"], {"a", "b"}, 5) == pytest.approx(1.06161, abs=1e-5)
    assert ndcg_at_k(["x", "a", "y", "b"], {"a", "b"}, 5) == pytest.approx(HAND["ndcg_xayb"], abs=1e-4)
    assert average_precision(["a", "x", "b"], {"a", "b"}) == pytest.approx(HAND["ap_axb"], abs=1e-4)
    assert recall_at_k(["x", "a", "y", "b"], {"a", "b"}, 3) == HAND["recall3_xayb"]


def test_ndcg_examples():
    assert ndcg_at_k(["a", "b"], {"a", "b"}, 5) == pytest.approx(1.0)
    assert ndcg_at_k(["x", "a"], {"a", "b"}, 5) == pytest.approx(0.6309 / 1.6309, abs=1e-4)
    assert ndcg_at_k([], {"a"}, 5) == 0.0
    # hits past the cutoff do not count
    assert ndcg_at_k(["x", "y", "z", "w", "v", "a"], {"a"}, 5) == 0.0


def test_idcg_caps_at_k():
    assert idcg_at_k({"a", "b", "c"}, 1) == 1.0
    assert idcg_at_k(set(), 5) == 0.0


def test_reciprocal_rank_and_map():
    rrs = [
        reciprocal_rank(["a"], {"a"}),
        reciprocal_rank(["x", "a"], {"a"}),
        reciprocal_rank(["x", "y", "z", "a"], {"a"}),
    ]
    assert rrs == [1.0, 0.5, 0.25]
    assert sum(rrs) / 3 == pytest.approx(HAND["mrr_124"], abs=1e-4)
    assert reciprocal_rank(["x"], {"a"}) == 0.0
    aps = [average_precision(["a"], {"a"}), average_precision(["a", "x", "b"], {"a", "b"})]
    assert sum(aps) / 2 == pytest.approx(HAND["map"], abs=1e-4)


@pytest.mark.parametrize("fn", [recall_at_k, ndcg_at_k])
def test_empty_truth_raises(fn):
    with pytest.raises(EmptyGroundTruth):
        fn(["a"], set(), 5)


def test_empty_truth_raises_unranked():
    with pytest.raises(EmptyGroundTruth):
        average_precision(["a"], set())
    with pytest.raises(EmptyGroundTruth):
        reciprocal_rank(["a"], set())


def test_bad_k():
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a"}, 0)


def _all_lists(universe, max_len):
    for n in range(max_len + 1):
        yield from itertools.permutations(universe, n)


def _relevant_sets(universe):
    for size in (1, 2, 3):
        yield from (set(c) for c in itertools.combinations(universe, size))


def test_exhaustive_oracle_agreement():
    universe = "abcd"
    started = time.perf_counter()
    checked = 0
    # duplicate-free lists run to length 4 over four items; a never-relevant
    # distractor extends them to length 5
    for pool, max_len in ((universe, 4), (universe + "z", 5)):
        for relevant in _relevant_sets(universe):
            for ranked in _all_lists(pool, max_len):
                ranked = list(ranked)
                for k in (1, 3, 5):
                    assert abs(ndcg_at_k(ranked, relevant, k) - ref_ndcg(ranked, relevant, k)) <= 1e-9
                    assert abs(recall_at_k(ranked, relevant, k) - ref_recall(ranked, relevant, k)) <= 1e-9
                assert abs(average_precision(ranked, relevant) - ref_ap(ranked, relevant)) <= 1e-9
                assert abs(reciprocal_rank(ranked, relevant) - ref_rr(ranked, relevant)) <= 1e-9
                checked += 1
    assert checked > 0
    assert time.perf_counter() - started < 10


items = st.sampled_from("abcdefgh")
ranked_lists = st.lists(items, unique=True, max_size=8)
relevant_sets = st.sets(items, min_size=1, max_size=5)


@settings(max_examples=300, deadline=None)
@given(ranked_lists, relevant_sets, st.integers(1, 8))
def test_bounds(ranked, relevant, k):
    for value in (ndcg_at_k(ranked, relevant, k), recall_at_k(ranked, relevant, k),
                  average_precision(ranked, relevant), reciprocal_rank(ranked, relevant)):
        assert 0.0 <= value <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(relevant_sets, st.integers(1, 8))
def test_ideal_ranking_scores_one(relevant, k):
    ranked = sorted(relevant)
    assert ndcg_at_k(ranked, relevant, k) == pytest.approx(1.0)
    assert average_precision(ranked, relevant) == pytest.approx(1.0)
    assert reciprocal_rank(ranked, relevant) == 1.0


@settings(max_examples=200, deadline=None)
@given(ranked_lists, relevant_sets)
def test_recall_monotone_in_k(ranked, relevant):
    values = [recall_at_k(ranked, relevant, k) for k in range(1, 9)]
    assert values == sorted(values)


@settings(max_examples=200, deadline=None)
@given(ranked_lists, relevant_sets)
def test_appending_irrelevant_changes_nothing(ranked, relevant):
    extended = ranked + ["zz"]
    assert average_precision(extended, relevant) == average_precision(ranked, relevant)
    assert ndcg_at_k(extended, relevant, 5) == ndcg_at_k(ranked, relevant, 5)


@settings(max_examples=200, deadline=None)
@given(ranked_lists, relevant_sets)
def test_swapping_hit_forward_never_hurts_ndcg(ranked, relevant):
    for i in range(1, len(ranked)):
        if ranked[i] in relevant and ranked[i - 1] not in relevant:
            swapped = list(ranked)
            swapped[i - 1], swapped[i] = swapped[i], swapped[i - 1]
            assert ndcg_at_k(swapped, relevant, 5) >= ndcg_at_k(ranked, relevant, 5) - 1e-12


# --------------------------------------------------------------------------
# records and evaluation


def _truths():
    return [
        GroundTruth.build("q1", ["a.py::f"]),
        GroundTruth.build("q2", ["a.py::f", "pkg/b.py::C.m"]),
    ]


def test_ground_truth_build_adds_files():
    gt = GroundTruth.build("q", ["./pkg/b.py::C.m", "a.py:f"], files=["README.md"])
    assert gt.functions == {"pkg/b.py::C.m", "a.py::f"}
    assert gt.files == {"pkg/b.py", "a.py", "README.md"}


def test_ground_truth_rejects_inconsistent_sets():
    with pytest.raises(ValueError):
        GroundTruth("q", frozenset({"a.py::f"}), frozenset())


def test_ranked_prediction_rejects_duplicates():
    with pytest.raises(DuplicateItems):
        RankedPrediction("q", "function", ("a.py::f", "a.py::f"))


def test_evaluate_map_and_mrr():
    preds = [
        Prediction("q1", functions=("a.py::f",)),
        Prediction("q2", functions=("a.py::f", "x.py::g", "pkg/b.py::C.m")),
    ]
    report = evaluate(preds, _truths(), "function", 5)
    assert report.query_count == 2
    assert report.aggregates["MAP"] == pytest.approx(HAND["map"], abs=1e-4)
    assert report.aggregates["MRR"] == 1.0
    assert report.aggregates["Recall@1"] == pytest.approx(0.75)
    file_report = evaluate(preds, _truths(), "file", 5)
    # files derived by first appearance: [a.py, x.py, pkg/b.py]
    assert file_report.rows[1]["ap"] == pytest.approx((1 + 2 / 3) / 2)


def test_evaluate_missing_prediction_scores_zero():
    report = evaluate([Prediction("q1", functions=("a.py::f",))], _truths(), "function")
    assert report.rows[1]["ap"] == 0.0
    assert report.aggregates["MAP"] == 0.5


def test_evaluate_unmatched_query():
    with pytest.raises(UnmatchedQuery) as info:
        evaluate([Prediction("nope")], _truths())
    assert "nope" in str(info.value)


def test_evaluate_skips_empty_truth():
    truths = [GroundTruth.build("q1", ["a.py::f"]), GroundTruth.build("q3", [], files=["a.py"])]
    report = evaluate([], truths, "function")
    assert report.skipped == ["q3"]
    assert report.query_count == 1
    assert evaluate([], [GroundTruth.build("q3", [], files=["a.py"])], "function").aggregates["MAP"] == 0.0


def test_report_serialization():
    report = evaluate([Prediction("q1", functions=("a.py::f",))], _truths()[:1])
    data = json.loads(report.to_json())
    assert data["aggregates"]["nDCG@5"] == 1.0
    assert "nDCG@5" in report.to_table()


def test_load_predictions_normalizes(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"query_id": "q1", "functions": ["./a.py::f", "pkg\\\\b.py:C.m"]}\n')
    (pred,) = load_predictions(path)
    assert pred.functions == ("a.py::f", "pkg/b.py::C.m")


def test_load_predictions_duplicate_after_normalization(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"query_id": "q1", "functions": ["a.py::f"]}\n'
                    '{"query_id": "q2", "functions": ["a.py::f", "./a.py::f"]}\n')
    with pytest.raises(DuplicateItems, match=":2:"):
        load_predictions(path)


def test_load_predictions_malformed(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"query_id": "q1", "functions": ["::f"]}\n')
    with pytest.raises(MalformedIdentifier):
        load_predictions(path)


def test_load_truths_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "t.jsonl"
    row = json.dumps({"query_id": "q1", "functions": ["a.py::f"]})
    path.write_text(row + "\n" + row + "\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_truths(path)


def test_log_base():
    # discount at rank 2 is 1/log2(3)
    assert dcg_at_k(["x", "a"], {"a"}, 2) == pytest.approx(1 / math.log2(3))
