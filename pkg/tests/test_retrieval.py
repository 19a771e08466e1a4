from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, TOY_AP, TOY_MAP, feature_set, toy_store
from topoverify.retrieval import (
    FeatureStore,
    GroundTruth,
    MissingGroundTruthError,
    QueryTruth,
    RankedList,
    RetrievalFormatError,
    UndefinedQueryError,
    average_precision,
    format_eval_csv,
    format_rankings,
    load_ground_truth,
    load_rankings,
    map_eval,
    parse_ground_truth,
    parse_rankings,
    rerank,
)


def truth(qid, easy=(), hard=(), junk=(), bbox=None) -> QueryTruth:
    return QueryTruth(qid, frozenset(easy), frozenset(hard), frozenset(junk), bbox)


# -- average precision ------------------------------------------------------


def test_ap_hand_example():
    assert average_precision(["p1", "n", "p2"], {"p1", "p2"}) == pytest.approx((1 + 2 / 3) / 2, abs=1e-12)


def test_ap_junk_removed():
    assert average_precision(["p1", "j", "p2"], {"p1", "p2"}, {"j"}) == 1.0


def test_ap_all_miss():
    assert average_precision(["n1", "n2"], {"p"}) == 0.0


def test_ap_missing_positive_counts_zero():
    assert average_precision(["p1"], {"p1", "p2"}) == 0.5


def test_ap_duplicates_count_once():
    assert average_precision(["n", "n", "p"], {"p"}) == 0.5


def test_ap_requires_positives():
    with pytest.raises(UndefinedQueryError):
        average_precision(["a"], set())


ids = st.text(alphabet="abcdefgh", min_size=1, max_size=2)


@settings(max_examples=100, deadline=None)
@given(st.lists(ids, unique=True, max_size=12), st.sets(ids, min_size=1, max_size=5),
       st.lists(st.text(alphabet="xyz", min_size=1, max_size=2), max_size=5), st.data())
def test_junk_insertion_leaves_ap_unchanged(ranked, pos, junk, data):
    base = average_precision(ranked, pos, set(junk))
    noisy = list(ranked)
    for j in junk:
        noisy.insert(data.draw(st.integers(0, len(noisy))), j)
    assert average_precision(noisy, pos, set(junk)) == base


@settings(max_examples=100, deadline=None)
@given(st.lists(ids, unique=True, max_size=12), st.sets(ids, min_size=1, max_size=5))
def test_ap_bounds_and_perfect_order(ranked, pos):
    ap = average_precision(ranked, pos)
    assert 0.0 <= ap <= 1.0
    best = sorted(ranked, key=lambda x: x not in pos)
    assert average_precision(best, pos) >= ap


# -- mAP --------------------------------------------------------------------


def test_map_perfect_single_query():
    gt = GroundTruth({"q": truth("q", easy={"a"}, hard={"b"})})
    assert map_eval([RankedList("q", ["a", "b", "c"])], gt, "medium").mean_ap == 1.0


def test_hard_protocol_excludes_easy_only_queries():
    gt = GroundTruth({"q1": truth("q1", easy={"a"}), "q2": truth("q2", hard={"b"})})
    res = map_eval([RankedList("q1", ["a"]), RankedList("q2", ["x", "b"])], gt, "hard")
    assert res.excluded == ["q1"]
    assert res.mean_ap == 0.5


def test_hard_protocol_treats_easy_as_junk():
    gt = GroundTruth({"q": truth("q", easy={"e"}, hard={"h"})})
    assert map_eval([RankedList("q", ["e", "h"])], gt, "hard").mean_ap == 1.0
    assert map_eval([RankedList("q", ["e", "h"])], gt, "medium").mean_ap == 1.0
    assert map_eval([RankedList("q", ["n", "h"])], gt, "medium").mean_ap == 0.25


def test_every_query_excluded_gives_nan():
    gt = GroundTruth({"q": truth("q", easy={"a"})})
    assert math.isnan(map_eval([RankedList("q", ["a"])], gt, "hard").mean_ap)


def test_missing_ground_truth_names_query():
    with pytest.raises(MissingGroundTruthError, match="'lost'"):
        map_eval([RankedList("lost", ["a"])], GroundTruth(), "medium")


def test_unknown_protocol():
    with pytest.raises(ValueError):
        map_eval([], GroundTruth(), "easy")


@pytest.mark.parametrize("protocol", ["medium", "hard"])
def test_toy_benchmark_hand_values(protocol):
    gt = load_ground_truth(FIXTURES / "toy_ground_truth.json")
    lists = load_rankings(FIXTURES / "toy_ranking.txt")
    res = map_eval(lists, gt, protocol)
    assert dict(res.per_query) == pytest.approx(TOY_AP[protocol], abs=1e-12)
    assert abs(res.mean_ap - TOY_MAP[protocol]) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.permutations(["q1", "q2", "q3"]), st.sampled_from(["medium", "hard"]))
def test_map_permutation_invariant(order, protocol):
    gt = load_ground_truth(FIXTURES / "toy_ground_truth.json")
    lists = {rl.query_id: rl for rl in load_rankings(FIXTURES / "toy_ranking.txt")}
    res = map_eval([lists[q] for q in order], gt, protocol)
    assert res.mean_ap == map_eval(lists.values(), gt, protocol).mean_ap


# -- reranking --------------------------------------------------------------


def fake_store(names):
    return {n: feature_set([[1, 1], [2, 2]], image_id=n) for n in names}


QUERY = feature_set([[5, 5], [50, 50], [90, 90]], image_id="q")


def test_rerank_k_zero_is_identity():
    rl = RankedList("q", ["a", "b", "c"])
    out = rerank(QUERY, rl, fake_store("abc"), 0, scorer=lambda q, c: 1.0)
    assert out.ranked.candidates == ["a", "b", "c"]


def test_rerank_equal_scores_keep_order():
    rl = RankedList("q", list("abcde"))
    out = rerank(QUERY, rl, fake_store("abcde"), 5, scorer=lambda q, c: 3.0)
    assert out.ranked.candidates == list("abcde")


def test_rerank_sorts_block_and_keeps_tail():
    score = {"a": 1, "b": 5, "c": 3, "d": 9}
    rl = RankedList("q", list("abcd"))
    out = rerank(QUERY, rl, fake_store("abcd"), 3, scorer=lambda q, c: score[c.image_id])
    assert out.ranked.candidates == ["b", "c", "a", "d"]
    assert out.scores == {"a": 1, "b": 5, "c": 3}


def test_rerank_unresolvable_ids_hold_position():
    score = {"a": 1, "c": 5, "d": 3}
    rl = RankedList("q", list("abcd"))
    out = rerank(QUERY, rl, fake_store("acd"), 4, scorer=lambda q, c: score[c.image_id])
    assert out.ranked.candidates == ["c", "b", "d", "a"]
    assert out.skipped == ["b"]


def test_rerank_crops_query_to_bbox():
    seen = []
    rerank(QUERY, RankedList("q", ["a"]), fake_store("a"), 1,
           scorer=lambda q, c: seen.append(len(q)) or 0.0, bbox=(10, 10, 95, 95))
    assert seen == [2]


def test_rerank_threads_match_sequential():
    score = {c: float(i % 3) for i, c in enumerate("abcdefgh")}
    rl = RankedList("q", list("abcdefgh"))
    fn = lambda q, c: score[c.image_id]
    one = rerank(QUERY, rl, fake_store("abcdefgh"), 8, scorer=fn)
    four = rerank(QUERY, rl, fake_store("abcdefgh"), 8, scorer=fn, threads=4)
    assert one.ranked.candidates == four.ranked.candidates


@settings(max_examples=80, deadline=None)
@given(st.lists(ids, unique=True, min_size=1, max_size=10), st.data())
def test_perfect_scorer_never_lowers_ap(ranked, data):
    pos = data.draw(st.sets(st.sampled_from(ranked), min_size=1))
    out = rerank(QUERY, RankedList("q", ranked), fake_store(ranked), len(ranked),
                 scorer=lambda q, c: float(c.image_id in pos))
    assert average_precision(out.ranked.candidates, pos) >= average_precision(ranked, pos)
    assert average_precision(out.ranked.candidates, pos) == 1.0


@pytest.mark.parametrize("scorer", ["tp", "sp"])
def test_toy_store_partner_rises_to_top(tmp_path, scorer):
    store_dir, ranking = toy_store(tmp_path)
    store = FeatureStore(store_dir)
    (rl,) = load_rankings(ranking)
    out = rerank(store("q"), rl, store, 5, scorer=scorer)
    assert out.ranked.candidates[0] == "c3"
    assert out.skipped == []


def test_feature_store_resolution(tmp_path):
    store_dir, _ = toy_store(tmp_path)
    store = FeatureStore(store_dir)
    assert store("c1") is store("c1")
    assert store("nope") is None
    with pytest.raises(FileNotFoundError):
        FeatureStore(tmp_path / "missing")


# -- file formats -----------------------------------------------------------


def test_ranking_round_trip():
    text = "q1: a b c\nq2:\n"
    lists = parse_rankings(text)
    assert [(rl.query_id, rl.candidates) for rl in lists] == [("q1", ["a", "b", "c"]), ("q2", [])]
    assert format_rankings(lists) == "q1: a b c\nq2: \n"


@pytest.mark.parametrize("text", ["q1 a b\n", "q1: a\nq1: b\n", ": a\n"])
def test_malformed_rankings(text):
    with pytest.raises(RetrievalFormatError):
        parse_rankings(text)


@pytest.mark.parametrize(
    "data",
    [
        {},
        {"queries": [{"easy": []}]},
        {"queries": [{"id": "q", "easy": ["a"], "hard": ["a"]}]},
        {"queries": [{"id": "q", "bbox": [1, 2, 3]}]},
        {"queries": [{"id": "q", "bbox": [5, 5, 1, 9]}]},
        {"queries": [{"id": "q", "easy": "a"}]},
        {"queries": [{"id": "q"}, {"id": "q"}]},
    ],
)
def test_malformed_ground_truth(data):
    with pytest.raises(RetrievalFormatError):
        parse_ground_truth(data)


def test_ground_truth_bbox_parsed():
    gt = load_ground_truth(FIXTURES / "toy_ground_truth.json")
    assert gt["q3"].bbox == (10, 10, 200, 200)
    assert gt["q1"].bbox is None
    assert "q2" in gt and "q9" not in gt


def test_eval_csv_layout():
    gt = load_ground_truth(FIXTURES / "toy_ground_truth.json")
    res = map_eval(load_rankings(FIXTURES / "toy_ranking.txt"), gt, "hard")
    lines = format_eval_csv(res).splitlines()
    assert lines[0] == "query_id,ap"
    assert lines[1] == "q1,0.5"
    label, protocol, value = lines[-1].split()
    assert (label, protocol) == ("mAP", "hard")
    assert abs(float(value) - TOY_MAP["hard"]) <= 1e-9
