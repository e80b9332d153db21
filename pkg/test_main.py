"""
命令行端到端测试：输出可复现性、退出码与各子命令
"""
import json
import os
import shlex
import sys
import time

import pandas as pd
import pytest

import config
import main as main_module
from main import main
from selftest import FICO_SAMPLE_FINAL_RANKING

DATA = config.SYNTHETIC_DATASET_PATH
MODEL = config.SYNTHETIC_MODEL_PATH
BUCKETS = os.path.join(config.DATA_DIR, "synthetic_buckets.json")


@pytest.fixture(autouse=True)
def restore_workers(monkeypatch):
    monkeypatch.setattr(config, "MAX_WORKERS", 1)
    monkeypatch.setattr(config, "BASE_RETRY_DELAY", 0.0)


def explain(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["explain", "--data", DATA, "--model", MODEL, "--out", str(out), *extra])
    return code, out


def oracle_cmd(tmp_path, body):
    path = tmp_path / "oracle.py"
    path.write_text("import sys, time\n" + body, encoding="utf-8")
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(path))}"


def entity_file(tmp_path, values):
    header = pd.read_csv(DATA, nrows=0).columns
    path = tmp_path / "entity.csv"
    pd.DataFrame([values], columns=header).to_csv(path, index=False)
    return str(path)


# =====================================================
# 可复现性
# =====================================================

@pytest.mark.parametrize("score,extra", [
    ("shap", []),
    ("kernelshap", ["--samples", "256", "--seed", "7"]),
])
def test_outputs_are_byte_identical_across_workers(tmp_path, score, extra):
    rows = ["--row", "0", "--row", "5", "--row", "17", "--row", "42"]
    code_a, a = explain(tmp_path, "a", "--score", score, *rows, *extra, "--workers", "1")
    code_b, b = explain(tmp_path, "b", "--score", score, *rows, *extra, "--workers", "2")
    assert code_a == code_b == config.EXIT_OK
    for name in ("explanations.json", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_explain_output_layout(tmp_path):
    code, out = explain(tmp_path, "run", "--score", "shap", "--row", "0", "--row", "3", "--levels")
    assert code == config.EXIT_OK
    doc = json.loads((out / "explanations.json").read_text(encoding="utf-8"))
    assert doc["score"] == "shap"
    assert [x["index"] for x in doc["explanations"]] == [0, 1]
    assert all(x["status"] == "ok" for x in doc["explanations"])
    assert "per_level" in doc["explanations"][0]["scores"][0]
    scores = pd.read_parquet(out / "scores.parquet")
    assert len(scores) == 2 * len(doc["features"])
    meta = json.loads((out / "run_meta.json").read_text(encoding="utf-8"))
    assert "started_at" in meta


def test_counter_over_label_one_rows(tmp_path):
    code, out = explain(tmp_path, "counter", "--score", "counter", "--entities", "label1")
    assert code == config.EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["entities"] > 0
    assert summary["ok"] == summary["entities"]
    assert summary["failed"] == summary["timeout"] == 0


def test_resp_with_buckets(tmp_path):
    code, out = explain(
        tmp_path, "resp", "--score", "resp", "--row", "0", "--row", "1", "--row", "2", "--explain-zero",
        "--buckets", BUCKETS, "--max-gamma", "1"
    )
    assert code == config.EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["ok"] == summary["entities"]


# =====================================================
# 退出码
# =====================================================

def test_entity_outside_dataset(tmp_path):
    path = entity_file(tmp_path, [1] * 9)
    code, _ = explain(tmp_path, "missing", "--score", "shap", "--entity-file", path)
    assert code == config.EXIT_CONFIG
    code, out = explain(tmp_path, "added", "--score", "shap", "--entity-file", path, "--add-entity")
    assert code == config.EXIT_OK
    doc = json.loads((out / "explanations.json").read_text(encoding="utf-8"))
    assert doc["explanations"][0]["diagnostics"]["entity_added"] is True


def test_resp_on_label_zero_needs_flag(tmp_path):
    path = entity_file(tmp_path, [90, 240, 120, 30, 100, 7, 0, 0, 0])
    code, _ = explain(tmp_path, "zero", "--score", "resp", "--entity-file", path)
    assert code == config.EXIT_CONFIG
    code, _ = explain(tmp_path, "zero_ok", "--score", "resp", "--entity-file", path, "--explain-zero")
    assert code == config.EXIT_OK


@pytest.mark.parametrize("argv", [
    ["explain", "--data", DATA, "--row", "0"],
    ["explain", "--data", DATA, "--model", MODEL],
    ["explain", "--data", DATA, "--model", MODEL, "--row", "100000"],
    ["explain", "--data", "no_such_file.csv", "--model", MODEL, "--row", "0"],
    ["explain", "--data", DATA, "--model", MODEL, "--row", "0", "--workers", "0"],
    ["explain", "--data", DATA, "--model", MODEL, "--row", "0", "--score", "kernelshap", "--samples", "lots"],
])
def test_configuration_errors(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "out")]) == config.EXIT_CONFIG


def test_malformed_model_file_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"subscales": [{"name": "S", "features": []}]}), encoding="utf-8")
    code = main(["explain", "--data", DATA, "--model", str(bad), "--row", "0", "--out", str(tmp_path / "out")])
    assert code == config.EXIT_CONFIG


def test_malformed_entity_file_is_config_error(tmp_path):
    header = ",".join(pd.read_csv(DATA, nrows=0).columns)
    path = tmp_path / "entity.csv"
    path.write_text(f"{header}\n1,2,3\n", encoding="utf-8")
    code, _ = explain(tmp_path, "ragged", "--score", "shap", "--entity-file", str(path))
    assert code == config.EXIT_CONFIG


def test_entity_file_values_match_dataset_rows(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("zip,income\n02139,303.18594544552593\nK1A0B1,12.5\n", encoding="utf-8")
    model = tmp_path / "table.json"
    model.write_text(json.dumps({
        "type": "table",
        "rows": [["02139", 303.18594544552593, 1], ["K1A0B1", 12.5, 0]],
    }), encoding="utf-8")
    entities = tmp_path / "entity.csv"
    entities.write_text("zip,income\n02139,303.18594544552593\n", encoding="utf-8")
    out = tmp_path / "out"
    code = main([
        "explain", "--data", str(data), "--model", str(model), "--score", "shap",
        "--entity-file", str(entities), "--out", str(out)
    ])
    assert code == config.EXIT_OK
    x = json.loads((out / "explanations.json").read_text(encoding="utf-8"))["explanations"][0]
    assert x["entity"] == ["02139", 303.18594544552593]
    assert x["label"] == 1
    assert "entity_added" not in x["diagnostics"]


def test_shap_max_level(tmp_path):
    code, out = explain(tmp_path, "full", "--score", "shap", "--row", "0", "--levels")
    assert code == config.EXIT_OK
    code, trunc = explain(tmp_path, "trunc", "--score", "shap", "--row", "0", "--max-level", "1")
    assert code == config.EXIT_OK
    full = json.loads((out / "explanations.json").read_text(encoding="utf-8"))["explanations"][0]
    x = json.loads((trunc / "explanations.json").read_text(encoding="utf-8"))["explanations"][0]
    assert x["diagnostics"]["max_level"] == 1
    want = {s["feature"]: sum(s["per_level"][:2]) for s in full["scores"]}
    for s in x["scores"]:
        assert s["value"] == pytest.approx(want[s["feature"]], abs=1e-9)


def test_external_oracle_failure(tmp_path):
    cmd = oracle_cmd(tmp_path, "sys.stdin.read()\nsys.exit(3)\n")
    code = main([
        "explain", "--data", DATA, "--oracle-cmd", cmd, "--score", "shap", "--row", "0",
        "--out", str(tmp_path / "out")
    ])
    assert code == config.EXIT_ORACLE


def test_external_oracle_run(tmp_path):
    cmd = oracle_cmd(tmp_path, (
        "rows = sys.stdin.read().splitlines()[1:]\n"
        "for row in rows:\n"
        "    print(1 if float(row.split(',')[0]) < 70 else 0)\n"
    ))
    code = main([
        "explain", "--data", DATA, "--oracle-cmd", cmd, "--score", "shap", "--row", "0", "--row", "1",
        "--out", str(tmp_path / "out")
    ])
    assert code == config.EXIT_OK


@pytest.mark.parametrize("score", ["shap", "counter"])
def test_run_timeout_marks_partial(tmp_path, score):
    cmd = oracle_cmd(tmp_path, (
        "rows = sys.stdin.read().splitlines()[1:]\n"
        "time.sleep(8)\n"
        "print('\\n'.join('0' for _ in rows))\n"
    ))
    out = tmp_path / "out"
    start = time.monotonic()
    code = main([
        "explain", "--data", DATA, "--oracle-cmd", cmd, "--score", score, "--row", "0",
        "--timeout", "0.5", "--out", str(out)
    ])
    assert time.monotonic() - start < 5.0
    assert code == config.EXIT_TIMEOUT
    doc = json.loads((out / "explanations.json").read_text(encoding="utf-8"))
    assert doc["partial"] is True
    assert doc["explanations"][0]["status"] == "timeout"


# =====================================================
# 其他子命令
# =====================================================

def test_fico_from_entity_file(tmp_path):
    out = tmp_path / "fico"
    code = main([
        "explain", "--score", "fico", "--model", config.FICO_MODEL_PATH,
        "--entity-file", config.FICO_ENTITY_PATH, "--top", "3", "--out", str(out)
    ])
    assert code == config.EXIT_OK
    x = json.loads((out / "explanations.json").read_text(encoding="utf-8"))["explanations"][0]
    assert x["ranking"][:3] == FICO_SAMPLE_FINAL_RANKING
    assert len(x["ranking"]) == 5
    assert x["label"] == 1


def test_compare_with_itself(tmp_path):
    code, run = explain(tmp_path, "run", "--score", "shap", "--row", "0", "--row", "1", "--row", "2")
    assert code == config.EXIT_OK
    out = tmp_path / "cmp"
    path = str(run / "explanations.json")
    assert main(["compare", path, path, "-k", "3", "--out", str(out), "--plot-data"]) == config.EXIT_OK
    report = json.loads((out / "compare_report.json").read_text(encoding="utf-8"))
    assert report["jaccard_mean"] == 1.0
    assert report["intersection_histogram"]["3"] == 3
    for name in ("intersection_histogram.csv", "top1_a.csv", "top1_b.csv", "intersection.dat", "top1_a.dat"):
        assert (out / name).exists()


def test_compare_misaligned(tmp_path):
    _, a = explain(tmp_path, "a", "--score", "shap", "--row", "0")
    _, b = explain(tmp_path, "b", "--score", "shap", "--row", "1")
    code = main(["compare", str(a / "explanations.json"), str(b / "explanations.json"), "--out", str(tmp_path / "c")])
    assert code == config.EXIT_CONFIG


def test_sensitivity(tmp_path):
    out = tmp_path / "sens"
    code = main([
        "sensitivity", "--data", DATA, "--model", MODEL, "--score", "shap",
        "--row", "0", "--row", "9", "-k", "2", "4", "--out", str(out)
    ])
    assert code == config.EXIT_OK
    doc = json.loads((out / "sensitivity.json").read_text(encoding="utf-8"))
    assert sorted(doc["runs"]) == ["2", "4"]
    assert sum(doc["runs"]["2"]["distribution"].values()) == 2
    assert (out / "top1_k4.csv").exists()


def test_bucketize(tmp_path):
    out = tmp_path / "bucketized.csv"
    code = main([
        "bucketize", "--data", DATA, "--spec", BUCKETS, "--out", str(out)
    ])
    assert code == config.EXIT_OK
    frame = pd.read_csv(out)
    assert frame["MSinceOldestTradeOpen"].nunique() <= 3
    mapping = json.loads(out.with_suffix(".mapping.json").read_text(encoding="utf-8"))
    assert set(mapping) >= {"ExternalRiskEstimate", "MSinceOldestTradeOpen", "NetFractionRevolvingBurden"}


def test_selftest_subset(tmp_path):
    report_path = tmp_path / "report.json"
    code = main(["selftest", "--check", "fico_sample", "bucketization", "model_counting", "--out", str(report_path)])
    assert code == config.EXIT_OK
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["summary"] == {"total": 3, "passed": 3, "failed": 0}
    assert main(["selftest", "--check", "nonsense", "--out", str(report_path)]) == config.EXIT_CONFIG


def test_list(capsys):
    assert main(["list"]) == config.EXIT_OK
    printed = capsys.readouterr().out
    for name in ("counter", "resp", "shap", "kernelshap", "fico"):
        assert name in printed


def test_interrupt_exit_code(monkeypatch):
    def interrupted():
        raise KeyboardInterrupt

    monkeypatch.setattr(main_module, "list_scores", interrupted)
    assert main(["list"]) == config.EXIT_INTERRUPTED == 1
