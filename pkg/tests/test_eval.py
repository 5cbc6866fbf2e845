"""Ranking metrics, evaluation aggregation, and the Markov baseline."""

import json
import math

import numpy as np
import pytest

from mobgt.data import Vocab
from mobgt.errors import DataError
from mobgt.eval import (
    METRIC_NAMES,
    MetricsReport,
    evaluate,
    hit_and_ndcg,
    iter_examples,
    mc_predict,
    mc_rank_fn,
    mc_train,
    metrics_for_example,
    metrics_from_rank,
)

from conftest import make_traj, toy_vocab


# --- per-rank metrics ---------------------------------------------------------


def test_rank_one_is_perfect():
    m = metrics_from_rank(1)
    assert m == {"acc1": 1.0, "acc5": 1.0, "acc10": 1.0, "ndcg5": 1.0, "ndcg10": 1.0, "mrr": 1.0}


def test_rank_three_frozen():
    m = metrics_from_rank(3)
    assert m["acc1"] == 0.0
    assert m["acc5"] == 1.0 and m["acc10"] == 1.0
    assert m["ndcg5"] == pytest.approx(0.5)  # 1 / log2(4)
    assert m["ndcg10"] == pytest.approx(0.5)
    assert m["mrr"] == pytest.approx(1.0 / 3.0)


def test_rank_eleven_outside_all_cutoffs():
    m = metrics_from_rank(11)
    assert m["acc10"] == 0.0 and m["ndcg10"] == 0.0
    assert m["mrr"] == pytest.approx(1.0 / 11.0)


def test_rank_boundaries():
    assert hit_and_ndcg(5, 5) == (1.0, 1.0 / math.log2(6))
    assert hit_and_ndcg(6, 5) == (0.0, 0.0)
    assert hit_and_ndcg(10, 10)[0] == 1.0


def test_ndcg1_equals_acc1_on_random_rankings():
    rng = np.random.default_rng(0)
    for _ in range(200):
        rank = int(rng.integers(1, 30))
        acc1, ndcg1 = hit_and_ndcg(rank, 1)
        assert acc1 == ndcg1  # log2(1 + 1) = 1 makes them identical at k=1


def test_metric_orderings_per_rank():
    for rank in range(1, 25):
        m = metrics_from_rank(rank)
        assert m["acc1"] <= m["ndcg5"] <= m["acc5"] <= m["acc10"]
        assert m["mrr"] >= m["acc1"] * 1.0
        assert m["ndcg10"] >= m["ndcg5"]


def test_metrics_for_example_absent_target():
    m = metrics_for_example([3, 1, 2], target=9)
    assert all(m[name] == 0.0 for name in METRIC_NAMES)
    assert metrics_for_example([3, 1, 2], target=1)["mrr"] == pytest.approx(0.5)


# --- evaluation loop -----------------------------------------------------------


def oracle_rank_fn(ranking):
    return lambda prefix: ranking


def test_evaluate_hand_aggregate():
    vocab = toy_vocab(poi_count=5)
    # one session of 4 visits: prefixes [0,1] -> 2 and [0,1,2] -> 3
    test = [make_traj([0, 1, 2, 3])]
    report = evaluate(oracle_rank_fn([2, 3, 0, 1, 4]), test, vocab)
    # targets 2 and 3 sit at ranks 1 and 2
    assert report.n_examples == 2
    assert report.acc1 == pytest.approx(0.5)
    assert report.acc5 == pytest.approx(1.0)
    assert report.mrr == pytest.approx((1.0 + 0.5) / 2)
    assert report.ndcg5 == pytest.approx((1.0 + 1.0 / math.log2(3)) / 2)
    assert report.n_unreachable == 0


def test_evaluate_last_mode_single_example():
    vocab = toy_vocab(poi_count=5)
    test = [make_traj([0, 1, 2, 3])]
    report = evaluate(oracle_rank_fn([3, 2, 1, 0, 4]), test, vocab, eval_mode="last")
    assert report.n_examples == 1
    assert report.acc1 == 1.0


def test_iter_examples_counts():
    test = [make_traj([0, 1, 2, 3, 4]), make_traj([1, 2, 3])]
    assert len(list(iter_examples(test, "prefix"))) == 3 + 1
    assert len(list(iter_examples(test, "last"))) == 2
    for prefix, target in iter_examples(test, "prefix"):
        assert len(prefix) >= 2
        assert target.timestamp > prefix[-1].timestamp


def test_evaluate_order_invariance():
    vocab = toy_vocab(poi_count=5)
    sessions = [make_traj([0, 1, 2], day_offset=d) for d in range(3)]
    sessions.append(make_traj([2, 1, 0, 3], day_offset=3))
    fn = oracle_rank_fn([1, 0, 3, 2, 4])
    a = evaluate(fn, sessions, vocab)
    b = evaluate(fn, sessions[::-1], vocab)
    # summation order may differ in the last float ulp
    for name in METRIC_NAMES:
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)
    assert (a.n_examples, a.n_unreachable) == (b.n_examples, b.n_unreachable)


def test_evaluate_empty_test_rejected():
    with pytest.raises(DataError, match="no evaluation"):
        evaluate(oracle_rank_fn([0]), [], toy_vocab())


def test_evaluate_unreachable_target_scores_zero():
    vocab = toy_vocab(poi_count=3)  # poi 7 is outside the catalog
    test = [make_traj([0, 1, 7])]
    calls = []

    def fn(prefix):
        calls.append(1)
        return [0, 1, 2]

    report = evaluate(fn, test, vocab)
    assert report.n_examples == 1
    assert report.n_unreachable == 1
    assert report.acc10 == 0.0
    assert calls == []  # never consulted


def test_evaluate_unknown_prefix_scores_zero_without_model():
    vocab = toy_vocab(poi_count=3)
    # prefix [0, 7] cannot be encoded; target 1 is in the catalog
    test = [make_traj([0, 7, 1])]
    calls = []

    def fn(prefix):
        calls.append(1)
        return [1, 0, 2]

    report = evaluate(fn, test, vocab)
    assert report.n_examples == 1
    assert report.n_unreachable == 0
    assert report.acc1 == 0.0
    assert calls == []


def test_report_json_roundtrip_sorted():
    report = MetricsReport(acc1=0.5, mrr=0.75, n_examples=4, config_digest="abc123")
    data = json.loads(report.to_json())
    assert data["acc1"] == 0.5
    assert data["config_digest"] == "abc123"
    assert list(data) == sorted(data)
    table = report.to_table()
    assert "acc1" in table and "0.5000" in table


# --- Markov baseline -------------------------------------------------------------


def test_mc_transition_probabilities():
    vocab = toy_vocab(poi_count=3, freq={0: 5, 1: 3, 2: 1})
    model = mc_train([make_traj([0, 1, 0, 1])], vocab)
    assert model.transitions[0] == {1: 1.0}
    assert model.transitions[1] == {0: 1.0}
    assert model.popularity == [0, 1, 2]


def test_mc_self_transitions_counted():
    vocab = toy_vocab(poi_count=2)
    model = mc_train([make_traj([0, 0, 1])], vocab)
    assert model.transitions[0] == {0: pytest.approx(0.5), 1: pytest.approx(0.5)}


def test_mc_rows_sum_to_one():
    rng = np.random.default_rng(4)
    trajs = [make_traj(list(rng.integers(0, 5, size=8)), day_offset=d) for d in range(6)]
    model = mc_train(trajs, toy_vocab(poi_count=5))
    for row in model.transitions.values():
        assert sum(row.values()) == pytest.approx(1.0)


def test_mc_predict_successors_then_popularity():
    # successors: B 60%, C 40%; popularity order A, C, B
    vocab = toy_vocab(poi_count=3, freq={0: 10, 1: 1, 2: 5})
    a, b, c = 0, 1, 2
    trajs = [make_traj([a, b], day_offset=i) for i in range(3)]
    trajs += [make_traj([a, c], day_offset=3 + i) for i in range(2)]
    model = mc_train(trajs, vocab)
    assert model.transitions[a] == {b: pytest.approx(0.6), c: pytest.approx(0.4)}
    assert model.popularity == [a, c, b]
    assert mc_predict(model, a, k=3) == [b, c, a]
    assert mc_predict(model, a, k=1) == [b]


def test_mc_probability_ties_break_by_popularity():
    vocab = toy_vocab(poi_count=4, freq={0: 1, 1: 2, 2: 9, 3: 9})
    trajs = [make_traj([0, 1], day_offset=0), make_traj([0, 2], day_offset=1)]
    model = mc_train(trajs, vocab)
    # 1 and 2 are equally likely; 2 is more popular
    assert mc_predict(model, 0, k=2) == [2, 1]


def test_mc_unseen_poi_falls_back_to_popularity():
    vocab = toy_vocab(poi_count=3, freq={0: 1, 1: 5, 2: 3})
    model = mc_train([make_traj([0, 1])], vocab)
    assert mc_predict(model, 2, k=3) == [1, 2, 0]


def test_mc_predict_never_repeats_and_clamps():
    vocab = toy_vocab(poi_count=4)
    model = mc_train([make_traj([0, 1, 0, 2])], vocab)
    out = mc_predict(model, 0, k=100)
    assert len(out) == 4
    assert len(set(out)) == 4


def test_mc_rank_fn_full_catalog():
    vocab = toy_vocab(poi_count=4)
    model = mc_train([make_traj([0, 1, 2, 3])], vocab)
    ranking = mc_rank_fn(model)(make_traj([3, 0]).checkins)
    assert sorted(ranking) == [0, 1, 2, 3]
    assert ranking[0] == 1  # observed successor of 0 comes first


def test_mc_end_to_end_beats_random_on_cyclic_data():
    vocab = toy_vocab(poi_count=4)
    train = [make_traj([0, 1, 2, 3, 0, 1], day_offset=d) for d in range(4)]
    test = [make_traj([0, 1, 2, 3, 0], day_offset=10)]
    model = mc_train(train, vocab)
    report = evaluate(mc_rank_fn(model), test, vocab)
    assert report.acc1 == 1.0
    assert report.mrr == 1.0
