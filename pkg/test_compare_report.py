"""
解释比较统计测试
"""
import json
import math

import numpy as np
import pytest

from classifier import FunctionClassifier
from compare_report import (
    NO_EXPLANATION, ExplanationSet, bucket_sensitivity, compare_sets, jaccard_mean, jaccard_stats,
    load_explanation_set, top1_distribution, topk_intersection, write_histogram_csv, write_plot_data
)
from errors import ConfigError, MisalignedInputsError
from score_registry import ScoreKind
from tabular import Dataset


def make_set(rankings, kind="x", missing=()):
    return ExplanationSet(
        kind=kind,
        entities=[(i,) for i in range(len(rankings))],
        rankings=rankings,
        no_explanation=[i in missing for i in range(len(rankings))],
    )


def test_top1_distribution():
    xs = make_set([["A", "B"], ["A", "C"], ["B", "A"]])
    assert top1_distribution(xs) == {"A": 2, "B": 1}


def test_top1_counts_missing_explanations():
    xs = make_set([["A"], ["B"], []], missing={1})
    assert top1_distribution(xs) == {"A": 1, NO_EXPLANATION: 2}


def test_intersection_and_jaccard():
    xs = make_set([["A", "B", "C", "D"]])
    ys = make_set([["C", "D", "E", "F"]])
    assert topk_intersection(xs, ys, 4) == {0: 0, 1: 0, 2: 1, 3: 0, 4: 0}
    assert jaccard_mean(xs, ys, 4) == pytest.approx(2 / 6)


@pytest.mark.parametrize("seed", range(5))
def test_jaccard_is_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    features = list("ABCDEFG")

    def rankings():
        return [list(rng.permutation(features)[:int(rng.integers(1, 8))]) for _ in range(20)]

    xs, ys = make_set(rankings()), make_set(rankings())
    for k in (1, 3, 7):
        assert jaccard_mean(xs, ys, k) == jaccard_mean(ys, xs, k)
        assert 0.0 <= jaccard_mean(xs, ys, k) <= 1.0
        assert topk_intersection(xs, ys, k) == topk_intersection(ys, xs, k)


def test_self_comparison_is_identity():
    xs = make_set([["A", "B"], ["C"]])
    report = compare_sets(xs, xs, 2)
    assert report["jaccard_mean"] == 1.0
    assert report["intersection_histogram"] == {"0": 0, "1": 1, "2": 1}


def test_both_empty_pairs_excluded():
    xs = make_set([["A"], []], missing={1})
    ys = make_set([["B"], []], missing={1})
    assert jaccard_stats(xs, ys, 1) == (0.0, 1)
    only_empty = make_set([[]], missing={0})
    mean, excluded = jaccard_stats(only_empty, only_empty, 3)
    assert math.isnan(mean) and excluded == 1
    assert compare_sets(only_empty, only_empty, 3)["jaccard_mean"] is None


def test_misaligned_inputs():
    with pytest.raises(MisalignedInputsError):
        topk_intersection(make_set([["A"]]), make_set([["A"], ["B"]]), 1)
    other = ExplanationSet(kind="y", entities=[(9,)], rankings=[["A"]], no_explanation=[False])
    with pytest.raises(MisalignedInputsError):
        jaccard_mean(make_set([["A"]]), other, 1)


def test_repeated_feature_rejected():
    with pytest.raises(ConfigError):
        make_set([["A", "A"]])


def test_load_explanation_set_treats_failures_as_missing(tmp_path):
    path = tmp_path / "explanations.json"
    path.write_text(json.dumps({
        "score": "resp",
        "explanations": [
            {"entity": [1, 2], "status": "ok", "ranking": ["F1", "F2"], "no_explanation": False},
            {"entity": [3, 4], "status": "timeout"},
            {"entity": [5, 6], "status": "ok", "ranking": [], "no_explanation": True},
        ],
    }), encoding="utf-8")
    xs = load_explanation_set(path)
    assert xs.kind == "resp"
    assert xs.entities[0] == (1, 2)
    assert top1_distribution(xs) == {"F1": 1, NO_EXPLANATION: 2}


def test_histogram_outputs(tmp_path):
    csv_path = write_histogram_csv(tmp_path / "out" / "top1.csv", {"A": 2, NO_EXPLANATION: 1}, key_name="feature")
    assert csv_path.read_text(encoding="utf-8") == f"feature,count\nA,2\n{NO_EXPLANATION},1\n"
    dat = write_plot_data(tmp_path / "top1.dat", {"A": 2}, title="top-1")
    assert dat.read_text(encoding="utf-8") == '# top-1\n# label\tcount\n"A"\t2\n'


# =====================================================
# 分桶敏感度
# =====================================================

@pytest.fixture
def threshold_setup():
    ds = Dataset.from_rows(["x", "y"], [(v, 0) for v in range(1, 7)])
    oracle = FunctionClassifier(lambda e: e[0] > 3, arity=2)
    return ds, oracle, [(1, 0), (6, 0)]


def test_bucket_sensitivity(threshold_setup):
    ds, oracle, entities = threshold_setup
    results = bucket_sensitivity(ds, oracle, entities, ScoreKind.SHAP, [1, 2])
    assert results[1]["distribution"] == {NO_EXPLANATION: 2}
    assert results[2]["distribution"] == {"x": 1, "y": 1}
    assert results[2]["buckets"] == {"x": 2, "y": 1}
    assert all(r["status"] == "ok" for r in results.values())


def test_bucket_sensitivity_is_deterministic(threshold_setup):
    ds, oracle, entities = threshold_setup
    a = bucket_sensitivity(ds, oracle, entities, ScoreKind.SHAP, [2, 6])
    b = bucket_sensitivity(ds, oracle, entities, ScoreKind.SHAP, [2, 6])
    assert [r["distribution"] for r in a.values()] == [r["distribution"] for r in b.values()]


def test_bucket_sensitivity_rejects_categorical():
    ds = Dataset.from_rows(["x"], [("a",), ("b",)])
    with pytest.raises(ConfigError):
        bucket_sensitivity(ds, FunctionClassifier(lambda e: True, arity=1), [("a",)], ScoreKind.SHAP, [2])
