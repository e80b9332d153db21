"""
随机测试实例生成

所有随机性来自显式种子（numpy Generator）。
"""
import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from classifier import FunctionClassifier, Monotone2CNF, TableClassifier
from tabular import Dataset, Entity


@dataclass
class Instance:
    dataset: Dataset
    oracle: TableClassifier
    e_star: Entity


def feature_names(n: int) -> List[str]:
    return [f"F{j + 1}" for j in range(n)]


def random_dataset(
    rng: np.random.Generator,
    n: int,
    domain_sizes: Sequence[int],
    rows: int,
    max_count: int = 3
) -> Dataset:
    """每个特征取值 0..|Di|-1，计数 1..max_count"""
    values = np.column_stack([rng.integers(0, d, size=rows) for d in domain_sizes])
    counts = rng.integers(1, max_count + 1, size=rows)
    records = [(tuple(int(v) for v in row), int(c)) for row, c in zip(values, counts)]
    return Dataset.from_rows(feature_names(n), records)


def random_table_classifier(
    rng: np.random.Generator,
    domain_sizes: Sequence[int],
    positive_rate: float = 0.5
) -> TableClassifier:
    """在整个联合域上随机打标签"""
    joint = list(itertools.product(*(range(d) for d in domain_sizes)))
    labels = rng.random(len(joint)) < positive_rate
    mapping = {e: int(label) for e, label in zip(joint, labels)}
    return TableClassifier(mapping, default=0, arity=len(domain_sizes), name="random-table")


def random_monotone_2cnf(rng: np.random.Generator, n: int, n_clauses: Optional[int] = None) -> Monotone2CNF:
    """随机单调 2CNF；允许 i == j 的单文字子句"""
    if n_clauses is None:
        n_clauses = int(rng.integers(0, 2 * n + 1))
    clauses = [
        (int(rng.integers(1, n + 1)), int(rng.integers(1, n + 1)))
        for _ in range(n_clauses)
    ]
    return Monotone2CNF(n, clauses)


def random_instance(
    seed: int,
    max_features: int = 6,
    max_domain: int = 4,
    max_rows: int = 64,
    min_features: int = 1
) -> Instance:
    """
    随机经验空间实例：数据集、随机查表分类器、取自数据集的 e*

    Args:
        seed: 随机种子
        max_features: n 的上限
        max_domain: |Di| 的上限
        max_rows: 生成行数上限（合并前）
        min_features: n 的下限
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(min_features, max_features + 1))
    domain_sizes = [int(rng.integers(2, max_domain + 1)) for _ in range(n)]
    rows = int(rng.integers(2, max_rows + 1))
    ds = random_dataset(rng, n, domain_sizes, rows)
    oracle = random_table_classifier(rng, domain_sizes, positive_rate=float(rng.uniform(0.2, 0.8)))
    e_star = ds.entities[int(rng.integers(0, ds.N))]
    return Instance(dataset=ds, oracle=oracle, e_star=e_star)


def full_support_instance(seed: int, n: int, domain_size: int = 2, copies: int = 1) -> Instance:
    """
    每个联合取值都出现在数据集中的实例

    任意联合 S 的匹配集合非空，用于 KernelSHAP 精确性检查。
    """
    rng = np.random.default_rng(seed)
    domain_sizes = [domain_size] * n
    joint = list(itertools.product(*(range(d) for d in domain_sizes)))
    records = [(e, int(rng.integers(1, copies + 1))) for e in joint]
    ds = Dataset.from_rows(feature_names(n), records)
    oracle = random_table_classifier(rng, domain_sizes, positive_rate=float(rng.uniform(0.2, 0.8)))
    e_star = joint[int(rng.integers(0, len(joint)))]
    return Instance(dataset=ds, oracle=oracle, e_star=e_star)


def binary_product_instance(seed: int, n: int, monotone: bool) -> Tuple[Dataset, object, Entity]:
    """
    二值均匀乘积空间实例（数据集为 {0^n, 1^n}）

    monotone=True 时分类器为随机单调 2CNF，否则为随机查表分类器。
    """
    rng = np.random.default_rng(seed)
    ds = Dataset.from_rows(feature_names(n), [(0,) * n, (1,) * n])
    if monotone:
        oracle = random_monotone_2cnf(rng, n)
    else:
        oracle = random_table_classifier(rng, [2] * n)
    e_star = tuple(int(v) for v in rng.integers(0, 2, size=n))
    return ds, oracle, e_star


def and_classifier(n: int) -> FunctionClassifier:
    return FunctionClassifier(lambda e: all(v == 1 for v in e), arity=n, name="and")
