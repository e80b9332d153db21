"""
分类器测试：2CNF、计数、子量表模型、外部进程与包装器
"""
import json
import sys
import threading
import time

import numpy as np
import pytest

import config
from classifier import (
    CachedOracle, ExternalOracle, FunctionClassifier, Monotone2CNF, NegatedOracle, SubscaleModel,
    TableClassifier, count_models, load_model, subscale_risks
)
from errors import ConfigError, OracleError, OracleTimeoutError, PreconditionError, RunCancelledError
from instances import random_monotone_2cnf
from selftest import FICO_SAMPLE_GLOBAL_RISK, FICO_SAMPLE_SUBSCALE_RISKS, FICO_SAMPLE_SUBSCALE_SCORES, FICO_SAMPLE_TOLERANCE


def test_monotone_2cnf_labels():
    f = Monotone2CNF(2, [(1, 2)])
    assert f.classify((1, 0)) == 1
    assert f.classify((0, 0)) == 0


@pytest.mark.parametrize("n,clauses,expected", [
    (2, [(1, 2)], 3),
    (3, [], 8),
    (3, [(1, 2), (2, 3)], 5),
    (1, [(1, 1)], 1),
])
def test_count_models(n, clauses, expected):
    assert count_models(Monotone2CNF(n, clauses)) == expected


def test_count_models_matches_enumeration_across_chunks():
    f = Monotone2CNF(6, [(1, 4), (2, 5), (3, 6), (1, 2)])
    brute = sum(
        f.classify(tuple((x >> j) & 1 for j in range(6)))
        for x in range(64)
    )
    assert count_models(f, chunk_bits=3) == brute


@pytest.mark.parametrize("n", [3, 7, 12])
def test_monotone_2cnf_is_monotone_exhaustive(n):
    rng = np.random.default_rng(n)
    f = random_monotone_2cnf(rng, n)
    labels = [f.classify(tuple((x >> j) & 1 for j in range(n))) for x in range(1 << n)]
    for x in range(1 << n):
        if not labels[x]:
            continue
        for i in range(n):
            assert labels[x | (1 << i)] == 1
    assert count_models(f) == sum(labels)


def test_clause_out_of_range():
    with pytest.raises(ConfigError):
        Monotone2CNF(2, [(1, 3)])


def test_arity_checked():
    with pytest.raises(PreconditionError):
        Monotone2CNF(2, [(1, 2)]).classify((1, 0, 1))


def test_fico_sample_entity_is_high_risk(fico_sample):
    model, entity = fico_sample
    assert model.classify(entity) == 1


def test_fico_sample_subscale_scores(fico_sample):
    model, entity = fico_sample
    run = subscale_risks(model, entity)
    for name, expected in FICO_SAMPLE_SUBSCALE_SCORES.items():
        assert run.subscale_scores[name] == pytest.approx(expected, abs=FICO_SAMPLE_TOLERANCE)
    for name, expected in FICO_SAMPLE_SUBSCALE_RISKS.items():
        assert run.subscale_risks[name] == pytest.approx(expected, abs=FICO_SAMPLE_TOLERANCE)
    assert run.global_risk == pytest.approx(FICO_SAMPLE_GLOBAL_RISK, abs=FICO_SAMPLE_TOLERANCE)
    assert run.feature_scores["ExternalRiskEstimate"] == pytest.approx(2.9896)
    assert run.feature_scores["MaxDelq2PublicRecLast12M"] == pytest.approx(1.0046)


def test_subscale_score_is_weight_times_risk(fico_sample):
    model, entity = fico_sample
    run = model.run(entity)
    for s in model.subscales:
        assert run.subscale_scores[s.name] == pytest.approx(s.weight * run.subscale_risks[s.name])


def test_all_ten_subscales_score_weight_times_risk(fico_sample):
    model, entity = fico_sample
    run = model.run(entity)
    assert {s.name for s in model.subscales} == set(FICO_SAMPLE_SUBSCALE_SCORES)
    assert len(model.subscales) == 10
    for s in model.subscales:
        assert run.subscale_scores[s.name] == pytest.approx(s.weight * run.subscale_risks[s.name], rel=1e-12)
        assert run.subscale_scores[s.name] == pytest.approx(FICO_SAMPLE_SUBSCALE_SCORES[s.name], abs=FICO_SAMPLE_TOLERANCE)


def test_global_risk_nondecreasing_in_monotone_feature_scores(synthetic_model, synthetic_dataset):
    base = synthetic_dataset.entities[0]
    for pos, name in enumerate(synthetic_model.features):
        fm = next(f for s in synthetic_model.subscales for f in s.features if f.name == name)
        if not fm.monotone:
            continue
        values = sorted({e[pos] for e in synthetic_dataset.entities})
        points = []
        for v in values:
            e = list(base)
            e[pos] = v
            run = synthetic_model.run(tuple(e))
            points.append((run.feature_scores[name], run.global_risk))
        points.sort()
        risks = [r for _, r in points]
        assert all(a <= b + 1e-15 for a, b in zip(risks, risks[1:])), name


def test_feature_order_must_match(fico_sample):
    model, _ = fico_sample
    with pytest.raises(ConfigError):
        model.with_feature_order(list(model.features)[:-1] + ["Bogus"])


def test_feature_order_rebinds_positions(synthetic_model):
    reversed_model = synthetic_model.with_feature_order(list(reversed(synthetic_model.features)))
    e = tuple(range(len(synthetic_model.features)))
    assert reversed_model.classify(tuple(reversed(e))) == synthetic_model.classify(e)


def test_load_model_types(tmp_path):
    cnf = tmp_path / "cnf.json"
    cnf.write_text(json.dumps({"type": "monotone2cnf", "n": 2, "clauses": [[1, 2]]}))
    table = tmp_path / "table.json"
    table.write_text(json.dumps({"type": "table", "rows": [[0, 1, 1], [1, 1, 0]], "default": 0}))
    assert isinstance(load_model(cnf), Monotone2CNF)
    t = load_model(table)
    assert isinstance(t, TableClassifier)
    assert t.classify((0, 1)) == 1
    assert t.classify((1, 0)) == 0
    bogus = tmp_path / "bogus.json"
    bogus.write_text(json.dumps({"type": "forest"}))
    with pytest.raises(ConfigError):
        load_model(bogus)


SUBSCALE_DOC = {
    "subscales": [{
        "name": "S",
        "weight": 1.0,
        "features": [{"name": "A", "buckets": {"cuts": [1]}, "weights": [0.0, 1.0]}],
    }],
}


@pytest.mark.parametrize("path,key", [
    (("subscales", 0, "weight"), "weight"),
    (("subscales", 0, "features", 0, "weights"), "weights"),
    (("subscales", 0, "name"), "name"),
])
def test_subscale_model_missing_field_is_config_error(tmp_path, path, key):
    doc = json.loads(json.dumps(SUBSCALE_DOC))
    target = doc
    for step in path[:-1]:
        target = target[step]
    del target[path[-1]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match=key):
        load_model(bad)


@pytest.mark.parametrize("doc", [
    [1, 2, 3],
    {"subscales": [{"name": "S", "weight": "heavy", "features": []}]},
    {"subscales": [{"name": "S", "weight": 1.0, "features": ["A"]}]},
    {"type": "monotone2cnf", "n": 2},
    {"type": "table", "rows": [5]},
])
def test_malformed_model_file_is_config_error(tmp_path, doc):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_model(bad)


def test_synthetic_model_is_subscale(synthetic_model):
    assert isinstance(synthetic_model, SubscaleModel)
    assert len(synthetic_model.subscales) == 7


# =====================================================
# 包装器
# =====================================================

def test_cached_oracle_counts_distinct_probes():
    calls = []
    inner = FunctionClassifier(lambda e: calls.append(e) or e[0] == 1, arity=1)
    cached = CachedOracle(inner)
    assert cached.classify_many([(1,), (0,), (1,)]) == [1, 0, 1]
    assert cached.classify((1,)) == 1
    assert cached.probes == 2
    assert cached.calls == 4
    assert len(calls) == 2


def test_cached_oracle_stops_once_cancelled():
    cancel = threading.Event()
    cached = CachedOracle(FunctionClassifier(lambda e: e[0] == 1, arity=1), cancel=cancel)
    assert cached.classify((1,)) == 1
    cancel.set()
    with pytest.raises(RunCancelledError):
        cached.classify((1,))
    assert cached.calls == 1


def test_negated_oracle():
    f = NegatedOracle(Monotone2CNF(2, [(1, 2)]))
    assert f.classify((0, 0)) == 1
    assert f.classify_many([(1, 0), (0, 0)]) == [0, 1]


# =====================================================
# 外部进程分类器
# =====================================================

def script(tmp_path, body: str):
    path = tmp_path / "oracle.py"
    path.write_text("import sys, time\n" + body, encoding="utf-8")
    return [sys.executable, str(path)]


POSITIVE_FIRST = (
    "rows = sys.stdin.read().splitlines()[1:]\n"
    "for row in rows:\n"
    "    print(1 if float(row.split(',')[0]) > 0 else 0)\n"
)


def test_external_oracle_protocol_and_cache(tmp_path):
    oracle = ExternalOracle(script(tmp_path, POSITIVE_FIRST), ["A", "B"])
    assert oracle.classify_many([(1, 0), (0, 5), (1, 0)]) == [1, 0, 1]
    assert oracle.classify((0, 5)) == 0
    assert oracle.invocations == 1


def test_external_oracle_nonzero_exit_retried(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "BASE_RETRY_DELAY", 0.0)
    oracle = ExternalOracle(script(tmp_path, "sys.stdin.read()\nsys.exit(3)\n"), ["A"])
    with pytest.raises(OracleError):
        oracle.classify((1,))
    assert oracle.invocations == config.ORACLE_MAX_RETRIES


def test_external_oracle_malformed_output_not_retried(tmp_path):
    oracle = ExternalOracle(script(tmp_path, "sys.stdin.read()\nprint(2)\n"), ["A"])
    with pytest.raises(OracleError, match="non-binary"):
        oracle.classify((1,))
    assert oracle.invocations == 1


def test_external_oracle_timeout(tmp_path):
    oracle = ExternalOracle(script(tmp_path, "time.sleep(5)\n"), ["A"], timeout_ms=200)
    with pytest.raises(OracleTimeoutError):
        oracle.classify((1,))
    assert oracle.invocations == 1


def test_external_oracle_cancel_kills_running_process(tmp_path):
    cancel = threading.Event()
    oracle = ExternalOracle(script(tmp_path, "time.sleep(30)\n"), ["A"], cancel=cancel)
    timer = threading.Timer(0.3, cancel.set)
    timer.start()
    start = time.monotonic()
    try:
        with pytest.raises(RunCancelledError):
            oracle.classify((1,))
    finally:
        timer.cancel()
    assert time.monotonic() - start < 5.0


def test_external_oracle_cancel_interrupts_backoff(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "BASE_RETRY_DELAY", 30.0)
    monkeypatch.setattr(config, "MAX_RETRY_DELAY", 30.0)
    cancel = threading.Event()
    oracle = ExternalOracle(script(tmp_path, "sys.stdin.read()\nsys.exit(3)\n"), ["A"], cancel=cancel)
    timer = threading.Timer(0.5, cancel.set)
    timer.start()
    start = time.monotonic()
    try:
        with pytest.raises(RunCancelledError):
            oracle.classify((1,))
    finally:
        timer.cancel()
    assert time.monotonic() - start < 10.0
