"""
共享测试夹具
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

import config
from classifier import FunctionClassifier, TableClassifier, load_model
from selftest import load_fico_sample, resp_worked_example
from tabular import Dataset, load_dataset


def and_oracle(n: int = 2) -> FunctionClassifier:
    return FunctionClassifier(lambda e: all(v == 1 for v in e), arity=n, name="and")


@pytest.fixture
def binary_pair():
    """T = {(0,0):1, (1,1):1}"""
    return Dataset.from_rows(["F1", "F2"], [(0, 0), (1, 1)])


@pytest.fixture
def and2():
    return and_oracle(2)


@pytest.fixture
def worked_example():
    return resp_worked_example()


@pytest.fixture
def fico_sample():
    return load_fico_sample()


@pytest.fixture(scope="session")
def synthetic_dataset():
    return load_dataset(config.SYNTHETIC_DATASET_PATH)


@pytest.fixture(scope="session")
def synthetic_model(synthetic_dataset):
    return load_model(config.SYNTHETIC_MODEL_PATH).with_feature_order(synthetic_dataset.features)


@pytest.fixture
def or_table():
    """L = F1 ∨ F2 的查表分类器"""
    mapping = {(a, b): int(a or b) for a in (0, 1) for b in (0, 1)}
    return TableClassifier(mapping, arity=2, name="or")


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "LOG_DIR", str(tmp_path / "logs"))
