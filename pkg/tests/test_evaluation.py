import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onlineclust.evaluation import (
    METRICS_HEADER,
    POINTS_HEADER,
    cluster_entropy,
    consistency_flags,
    contingency,
    emit_reports,
    evaluate,
    majority_map,
    majority_vote_f1,
    order_robustness,
)
from onlineclust.streams import Observation

labels = st.lists(st.integers(0, 4), min_size=1, max_size=60)


def test_majority_map_cases():
    t = contingency([0] * 10 + [1] * 3 + [2] * 10, [0] * 9 + [1] + [1] * 3 + [0] * 5 + [1] * 5)
    assert majority_map(t) == {0: 0, 1: 1, 2: 0}  # 5/5 tie goes to class 0


def test_majority_map_empty_cluster_flagged():
    from onlineclust.evaluation import Contingency
    t = Contingency(np.array([[3, 0], [0, 0]]), np.array([0, 1]), np.arange(2))
    with pytest.warns(UserWarning):
        assert majority_map(t) == {0: 0}


def test_perfect_clustering():
    y = np.array([0, 0, 1, 1, 2])
    assert majority_vote_f1(y, y)[0] == 1.0
    assert majority_vote_f1(y + 7, y)[0] == 1.0


def test_one_cluster_two_classes():
    f1, per = majority_vote_f1([0, 0, 0, 0], [0, 0, 1, 1])
    # majority class: P = 0.5, R = 1; other class: F1 = 0
    assert per.tolist() == pytest.approx([2 / 3, 0.0])
    assert f1 == pytest.approx(1 / 3)


def test_micro_average():
    f1, _ = majority_vote_f1([0, 0, 0, 1], [0, 0, 1, 1], average="micro")
    assert f1 == pytest.approx(0.75)


def test_no_labelled_points():
    with pytest.raises(ValueError):
        majority_vote_f1([0, 1], [-1, -1])


@given(labels, st.integers(0, 2**32 - 1))
def test_f1_invariant_to_cluster_relabelling(truth, seed):
    rng = np.random.default_rng(seed)
    truth = np.array(truth)
    pred = rng.integers(0, 6, truth.size)
    perm = rng.permutation(6) + 100
    assert majority_vote_f1(pred, truth)[0] == pytest.approx(majority_vote_f1(perm[pred], truth)[0])


@given(labels, st.integers(0, 2**32 - 1))
def test_pure_refinement_keeps_perfect_f1(truth, seed):
    truth = np.array(truth)
    sub = np.random.default_rng(seed).integers(0, 3, truth.size)
    assert majority_vote_f1(truth * 3 + sub, truth)[0] == 1.0


def _random_labelling_macro_f1(n_cls):
    # n -> infinity limit: each cluster is a uniform class mix and maps to a
    # uniformly random class; class c gathers m_c of the n_cls clusters
    total = 0.0
    for owners in itertools.product(range(n_cls), repeat=n_cls):
        f1 = 0.0
        for c in range(n_cls):
            m = owners.count(c)
            if m:
                p, r = 1 / n_cls, m / n_cls
                f1 += 2 * p * r / (p + r)
        total += f1 / n_cls
    return total / n_cls**n_cls


def test_random_labelling_near_analytic_baseline():
    expected = _random_labelling_macro_f1(3)
    rng = np.random.default_rng(0)
    vals = [majority_vote_f1(rng.integers(0, 3, 30000), rng.integers(0, 3, 30000))[0] for _ in range(200)]
    assert abs(np.mean(vals) - expected) < 0.01


def test_entropy_values():
    t = contingency([0, 0, 1, 1, 2, 2, 2, 2], [0, 0, 0, 1, 0, 0, 1, 2])
    np.testing.assert_allclose(cluster_entropy(t), [0.0, 1.0, 1.5])


@given(st.lists(st.integers(0, 20), min_size=2, max_size=6))
def test_entropy_bounds(row):
    from onlineclust.evaluation import Contingency
    counts = np.array([row])
    if counts.sum() == 0:
        return
    h = cluster_entropy(Contingency(counts, np.array([0]), np.arange(len(row))))[0]
    assert -1e-12 <= h <= math.log2(len(row)) + 1e-12
    assert (h == 0) == (np.count_nonzero(row) == 1)
    if len(set(row)) == 1:
        assert h == pytest.approx(math.log2(len(row)))


def test_consistency_flags():
    flags = consistency_flags([0, 0, 0, 1, 1], [0, 0, 1, 1, -1])
    assert flags.tolist() == [1, 1, 0, 1, -1]


@given(labels, st.integers(0, 2**32 - 1))
def test_consistency_majority_at_least_half(truth, seed):
    truth = np.array(truth)
    pred = np.random.default_rng(seed).integers(0, 4, truth.size)
    flags = consistency_flags(pred, truth)
    for c in np.unique(pred):
        assert flags[pred == c].sum() * len(np.unique(truth[pred == c])) >= (pred == c).sum()


def test_order_robustness():
    assert order_robustness([0.6, 0.7, 0.8]) == pytest.approx((0.7, 0.08164965809277261))
    assert order_robustness([0.5, 0.5])[1] == 0.0
    with pytest.raises(ValueError):
        order_robustness([0.5])


def _obs(n):
    return [Observation(f"o{i}", float(i), float(-i), None, np.zeros(1)) for i in range(n)]


def read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_emit_reports_schema(tmp_path):
    pred = np.array([0, 0, 1, 1, 1])
    truth = np.array([0, 0, 1, 0, -1])
    rep = evaluate(pred, truth)
    rows = [[1, 5, 2, 0.5, 1.25], [2, 10, 2, 0.75, 2.5]]
    emit_reports(rep, tmp_path, metrics_rows=rows, points=_obs(5), pred=pred, truth=truth)
    m = read(tmp_path / "metrics.csv")
    assert m[0] == METRICS_HEADER and len(m) == 3
    assert m[1] == ["1", "5", "2", "0.5", "1.25"]
    pts = read(tmp_path / "points.csv")
    assert pts[0] == POINTS_HEADER
    assert pts[1] == ["o0", "0.0", "0.0", "0", "0", "0", "1", "0.0"]
    assert pts[5][3] == "" and pts[5][6] == ""
    ent = read(tmp_path / "entropy.csv")
    assert ent[0] == ["cluster_id", "entropy", "size"]
    assert ent[2][2] == "3"
    cont = read(tmp_path / "contingency.csv")
    assert cont[0] == ["cluster_id", "class_0", "class_1"]
    assert cont[2] == ["1", "1", "1"]


def test_emit_unlabelled(tmp_path):
    pred = np.array([0, 1, 1])
    emit_reports(None, tmp_path, points=_obs(3), pred=pred, truth=None)
    assert not (tmp_path / "contingency.csv").exists()
    assert read(tmp_path / "entropy.csv")[1:] == [["0", "", "1"], ["1", "", "2"]]
