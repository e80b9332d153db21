"""
带计数的表格数据集、特征域、分桶编码与两种概率空间

核心功能:
- CSV/Parquet 加载，重复行合并为带计数 C 的规范形式
- 特征域与边际分布
- 经验分布上的条件期望
- 乘积空间上的边际化期望
- 显式区间 / 等深分桶与 one-hot 编码
"""
import csv
import itertools
import json
import logging
import math
import threading
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from errors import (
    BucketCoverageError, ConfigError, DatasetLoadError, ExplainError,
    UnknownFeatureError, ZeroProbabilityError
)

logger = logging.getLogger(__name__)

Entity = Tuple[Any, ...]
FeatureRef = Union[int, str]


class ColumnKind(Enum):
    """列值类型"""
    INTEGER = "integer"
    REAL = "real"
    CATEGORICAL = "categorical"

    @property
    def numeric(self) -> bool:
        return self is not ColumnKind.CATEGORICAL


def _parse_value(raw: str, kind: ColumnKind) -> Any:
    if kind is ColumnKind.INTEGER:
        return int(raw)
    if kind is ColumnKind.REAL:
        return float(raw)
    return raw


def _infer_kind(raw_values: Sequence[str]) -> ColumnKind:
    """整数 > 实数 > 类别，按能否全部解析推断"""
    for kind in (ColumnKind.INTEGER, ColumnKind.REAL):
        try:
            for raw in raw_values:
                _parse_value(raw, kind)
            return kind
        except ValueError:
            continue
    return ColumnKind.CATEGORICAL


def restrict(entity: Entity, indices: Iterable[int]) -> Tuple[Any, ...]:
    """e_S: 实体在特征子集上的投影"""
    return tuple(entity[i] for i in indices)


def substitute(entity: Entity, assignment: Mapping[int, Any]) -> Entity:
    """e[F := x]: 替换若干特征的取值"""
    values = list(entity)
    for idx, value in assignment.items():
        values[idx] = value
    return tuple(values)


# =====================================================
# 数据集
# =====================================================

class Dataset:
    """
    带计数的表格关系 T(F1..Fn, C)

    构造时即规范化：相同取值元组合并为一行，计数相加，行按取值排序。
    构造后不可变，可在线程间共享。
    """

    def __init__(
        self,
        features: Sequence[str],
        frame: pd.DataFrame,
        column_kinds: Optional[Mapping[str, ColumnKind]] = None
    ):
        """
        Args:
            features: 特征名列表 F1..Fn
            frame: 包含特征列与计数列 C 的 DataFrame
            column_kinds: 每列的值类型（缺省时按 dtype 推断）
        """
        features = list(features)
        if not features:
            raise ConfigError("dataset needs at least one feature")
        if len(set(features)) != len(features):
            raise ConfigError(f"duplicate feature names: {features}")
        if len(frame) == 0:
            raise ConfigError("dataset has no rows")
        if (frame[config.COUNT_COLUMN] < 1).any():
            raise ConfigError("row counts must be positive")

        kinds = dict(column_kinds or {})
        for name in features:
            if name not in kinds:
                dtype = frame[name].dtype
                if pd.api.types.is_integer_dtype(dtype):
                    kinds[name] = ColumnKind.INTEGER
                elif pd.api.types.is_float_dtype(dtype):
                    kinds[name] = ColumnKind.REAL
                else:
                    kinds[name] = ColumnKind.CATEGORICAL

        canonical = (
            frame.groupby(features, sort=True)[config.COUNT_COLUMN]
            .sum()
            .reset_index()
        )
        self._features: Tuple[str, ...] = tuple(features)
        self._kinds: Dict[str, ColumnKind] = {f: kinds[f] for f in features}
        self._index: Dict[str, int] = {f: i for i, f in enumerate(features)}
        self._frame = canonical
        self._columns: List[np.ndarray] = [canonical[f].to_numpy() for f in features]
        self._counts: np.ndarray = canonical[config.COUNT_COLUMN].to_numpy(dtype=np.int64)
        column_values = [canonical[f].tolist() for f in features]
        self._entities: List[Entity] = [tuple(row) for row in zip(*column_values)]

    @classmethod
    def from_rows(
        cls,
        features: Sequence[str],
        rows: Iterable[Union[Entity, Tuple[Entity, int]]],
        column_kinds: Optional[Mapping[str, ColumnKind]] = None
    ) -> "Dataset":
        """
        从 (entity, count) 或纯 entity 列表构造数据集

        Args:
            features: 特征名列表
            rows: 行列表，元素为 entity 或 (entity, count)
            column_kinds: 可选列类型
        """
        records = []
        n = len(features)
        for row in rows:
            if len(row) == 2 and isinstance(row[0], (tuple, list)) and isinstance(row[1], int):
                entity, count = tuple(row[0]), row[1]
            else:
                entity, count = tuple(row), 1
            if len(entity) != n:
                raise ConfigError(f"row {entity!r} has {len(entity)} values, expected {n}")
            records.append(list(entity) + [int(count)])
        frame = pd.DataFrame(records, columns=list(features) + [config.COUNT_COLUMN])
        return cls(features, frame, column_kinds)

    @property
    def features(self) -> Tuple[str, ...]:
        return self._features

    @property
    def n(self) -> int:
        """特征数 n"""
        return len(self._features)

    @property
    def N(self) -> int:
        """不同行数 N"""
        return len(self._entities)

    @property
    def M(self) -> int:
        """总计数 M = Σ C"""
        return int(self._counts.sum())

    @property
    def column_kinds(self) -> Dict[str, ColumnKind]:
        return dict(self._kinds)

    @property
    def rows(self) -> List[Tuple[Entity, int]]:
        return list(zip(self._entities, self._counts.tolist()))

    @property
    def entities(self) -> List[Entity]:
        return list(self._entities)

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    def column(self, feature: FeatureRef) -> np.ndarray:
        return self._columns[self.feature_index(feature)]

    def kind(self, feature: FeatureRef) -> ColumnKind:
        return self._kinds[self._features[self.feature_index(feature)]]

    def feature_index(self, feature: FeatureRef) -> int:
        if isinstance(feature, (int, np.integer)) and not isinstance(feature, bool):
            if 0 <= feature < self.n:
                return int(feature)
            raise UnknownFeatureError(feature)
        try:
            return self._index[feature]
        except KeyError:
            raise UnknownFeatureError(feature) from None

    def resolve(self, features: Iterable[FeatureRef]) -> Tuple[int, ...]:
        """特征名/下标集合 -> 升序下标元组"""
        return tuple(sorted({self.feature_index(f) for f in features}))

    def check_entity(self, entity: Sequence[Any]) -> Entity:
        """校验查询实体的长度与值类型（不要求取值属于 Di）"""
        if len(entity) != self.n:
            raise ConfigError(f"entity has {len(entity)} values, dataset has {self.n} features")
        values = []
        for name, value in zip(self._features, entity):
            kind = self._kinds[name]
            if kind is ColumnKind.CATEGORICAL:
                values.append(str(value))
                continue
            try:
                number = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"value {value!r} of {name!r} is not numeric") from None
            if kind is ColumnKind.INTEGER and number.is_integer():
                values.append(int(number))
            else:
                values.append(number)
        return tuple(values)

    def equality_mask(self, feature: FeatureRef, value: Any) -> np.ndarray:
        """行级布尔掩码：F = value"""
        idx = self.feature_index(feature)
        column = self._columns[idx]
        kind = self._kinds[self._features[idx]]
        if kind.numeric and isinstance(value, str):
            return np.zeros(self.N, dtype=bool)
        if not kind.numeric and not isinstance(value, str):
            return np.zeros(self.N, dtype=bool)
        return np.asarray(column == value, dtype=bool)

    def contains(self, entity: Entity) -> bool:
        return entity in set(self._entities)

    def __len__(self) -> int:
        return self.N

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, N={self.N}, M={self.M})"


def _read_csv_rows(path: Path) -> Tuple[List[str], List[List[str]], List[int]]:
    """读取表头与原始字符串行（含行号），值只去除首尾空白"""
    raw_rows: List[List[str]] = []
    line_numbers: List[int] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader, None)
            if not header:
                raise DatasetLoadError(path, 1, "empty file (header row required)")
            header = [h.strip() for h in header]

            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise DatasetLoadError(
                        path, reader.line_num,
                        f"ragged row: {len(row)} fields, header has {len(header)}"
                    )
                raw_rows.append([v.strip() for v in row])
                line_numbers.append(reader.line_num)
        except (csv.Error, UnicodeDecodeError) as e:
            raise DatasetLoadError(path, reader.line_num + 1, f"unreadable CSV: {e}") from None

    if not raw_rows:
        raise DatasetLoadError(path, 2, "empty file (no data rows)")
    return header, raw_rows, line_numbers


def load_entities(
    path: Union[str, Path],
    column_kinds: Optional[Mapping[str, ColumnKind]] = None
) -> Tuple[List[str], List[Entity]]:
    """
    读取实体文件（CSV，表头为特征名）

    与 load_dataset 使用同一解析路径：给定 column_kinds（通常取自数据集）时按列类型解析，
    否则逐列推断。整数列中的非整数值按实数读入（查询实体可以不在 Di 中）。

    Returns:
        (表头, 实体列表)
    """
    path = Path(path)
    header, raw_rows, line_numbers = _read_csv_rows(path)
    kinds = dict(column_kinds or {})
    for j, name in enumerate(header):
        if name not in kinds:
            kinds[name] = _infer_kind([r[j] for r in raw_rows])

    entities: List[Entity] = []
    for row, line in zip(raw_rows, line_numbers):
        values = []
        for raw, name in zip(row, header):
            kind = kinds[name]
            try:
                values.append(_parse_value(raw, kind))
            except ValueError:
                if kind is ColumnKind.INTEGER:
                    try:
                        values.append(_parse_value(raw, ColumnKind.REAL))
                        continue
                    except ValueError:
                        pass
                raise DatasetLoadError(path, line, f"value {raw!r} of {name!r} is not {kind.value}") from None
        entities.append(tuple(values))
    logger.info(f"Loaded {len(entities)} entities from {path}")
    return header, entities


def load_dataset(
    path: Union[str, Path],
    schema: Optional[Mapping[str, Union[str, ColumnKind]]] = None
) -> Dataset:
    """
    加载 CSV（或 Parquet）数据集

    Args:
        path: 文件路径；CSV 需要表头，可选计数列 C
        schema: 可选列类型映射，值为 integer/real/categorical

    Returns:
        规范化后的 Dataset
    """
    path = Path(path)
    kinds_in = {k: ColumnKind(v) if isinstance(v, str) else v for k, v in (schema or {}).items()}

    if path.suffix.lower() == ".parquet":
        frame = pd.read_parquet(path, engine="pyarrow")
        if len(frame) == 0:
            raise DatasetLoadError(path, 1, "empty dataset")
        if config.COUNT_COLUMN not in frame.columns:
            frame[config.COUNT_COLUMN] = 1
        features = [c for c in frame.columns if c != config.COUNT_COLUMN]
        logger.info(f"Loaded {len(frame)} rows from {path}")
        return Dataset(features, frame, kinds_in)

    header, raw_rows, line_numbers = _read_csv_rows(path)
    has_count = header[-1] == config.COUNT_COLUMN
    features = header[:-1] if has_count else header
    if not features:
        raise DatasetLoadError(path, 1, "no feature columns")
    for name in kinds_in:
        if name not in features:
            raise DatasetLoadError(path, 1, f"schema names unknown column {name!r}")

    kinds: Dict[str, ColumnKind] = {}
    for j, name in enumerate(features):
        kinds[name] = kinds_in.get(name) or _infer_kind([r[j] for r in raw_rows])

    records = []
    for row, line in zip(raw_rows, line_numbers):
        values = []
        for j, name in enumerate(features):
            try:
                values.append(_parse_value(row[j], kinds[name]))
            except ValueError:
                raise DatasetLoadError(
                    path, line, f"value {row[j]!r} of {name!r} is not {kinds[name].value}"
                ) from None
        if has_count:
            try:
                count = int(row[-1])
            except ValueError:
                raise DatasetLoadError(path, line, f"count {row[-1]!r} is not an integer") from None
            if count < 1:
                raise DatasetLoadError(path, line, f"non-positive count {count}")
        else:
            count = 1
        records.append(values + [count])

    frame = pd.DataFrame(records, columns=features + [config.COUNT_COLUMN])
    for name in features:
        if kinds[name] is ColumnKind.CATEGORICAL:
            frame[name] = frame[name].astype(object)
    logger.info(f"Loaded {len(records)} rows ({len(features)} features) from {path}")
    return Dataset(features, frame, kinds)


def filter_all_missing(ds: Dataset, code: Any = config.MISSING_CODE) -> Dataset:
    """删除所有特征都等于缺失编码的行"""
    mask = np.ones(ds.N, dtype=bool)
    for j in range(ds.n):
        mask &= ds.equality_mask(j, code)
    dropped = int(mask.sum())
    if dropped == 0:
        return ds
    if dropped == ds.N:
        raise ConfigError(f"every row is all-missing ({code})")
    frame = ds.frame[~mask]
    logger.info(f"Dropped {dropped} all-missing rows (code={code})")
    return Dataset(ds.features, frame, ds.column_kinds)


def add_entity(ds: Dataset, entity: Entity, count: int = 1) -> Dataset:
    """把查询实体以计数 count 插入数据集"""
    entity = ds.check_entity(entity)
    extra = pd.DataFrame([list(entity) + [count]], columns=list(ds.features) + [config.COUNT_COLUMN])
    frame = pd.concat([ds.frame, extra], ignore_index=True)
    return Dataset(ds.features, frame, ds.column_kinds)


# =====================================================
# 特征域
# =====================================================

@dataclass(frozen=True)
class FeatureDomain:
    """特征域 Di 及其边际分布 p(Fi = x) = count(x) / M"""
    feature: str
    values: Tuple[Any, ...]
    counts: Tuple[int, ...]
    total: int

    @property
    def marginals(self) -> Tuple[float, ...]:
        return tuple(c / self.total for c in self.counts)

    def exact_marginals(self) -> Tuple[Fraction, ...]:
        return tuple(Fraction(c, self.total) for c in self.counts)

    def probability(self, value: Any) -> float:
        try:
            return self.counts[self.values.index(value)] / self.total
        except ValueError:
            return 0.0

    def __len__(self) -> int:
        return len(self.values)


def domain(ds: Dataset, feature: FeatureRef) -> FeatureDomain:
    """
    计算特征域：select F, sum(C) from T group by F

    Args:
        ds: 数据集
        feature: 特征名或下标

    Returns:
        FeatureDomain
    """
    idx = ds.feature_index(feature)
    grouped = (
        pd.DataFrame({"v": ds.column(idx), "c": ds.counts})
        .groupby("v", sort=True)["c"]
        .sum()
    )
    return FeatureDomain(
        feature=ds.features[idx],
        values=tuple(grouped.index.tolist()),
        counts=tuple(int(c) for c in grouped.tolist()),
        total=ds.M
    )


# =====================================================
# 概率空间
# =====================================================

class SpaceKind(Enum):
    """概率空间类型"""
    PRODUCT = "product"
    EMPIRICAL = "empirical"


class ProbabilitySpace:
    """概率空间基类，持有构造它的数据集"""

    kind: SpaceKind

    def __init__(self, source: Dataset):
        self.source = source

    @property
    def features(self) -> Tuple[str, ...]:
        return self.source.features

    @property
    def n(self) -> int:
        return self.source.n


class ProductSpace(ProbabilitySpace):
    """乘积空间：各特征按观测边际独立取值"""

    kind = SpaceKind.PRODUCT

    def __init__(self, source: Dataset):
        super().__init__(source)
        self.domains: Tuple[FeatureDomain, ...] = tuple(domain(source, j) for j in range(source.n))

    @property
    def joint_size(self) -> int:
        """Π|Di|"""
        return math.prod(len(d) for d in self.domains)

    def probability(self, entity: Entity) -> float:
        return math.prod(d.probability(v) for d, v in zip(self.domains, entity))

    def iter_joint(self) -> Iterable[Entity]:
        return itertools.product(*(d.values for d in self.domains))


class EmpiricalSpace(ProbabilitySpace):
    """经验分布：支撑集为 T 的行，p(row) = C/M"""

    kind = SpaceKind.EMPIRICAL

    def __init__(self, source: Dataset):
        super().__init__(source)
        self._labels: Dict[int, Tuple[Any, np.ndarray]] = {}
        self._lock = threading.Lock()

    def probability(self, entity: Entity) -> float:
        for row, count in self.source.rows:
            if row == entity:
                return count / self.source.M
        return 0.0

    def labels(self, oracle) -> np.ndarray:
        """对所有行调用分类器一次，按分类器对象缓存"""
        key = id(oracle)
        with self._lock:
            cached = self._labels.get(key)
            if cached is not None and cached[0] is oracle:
                return cached[1]
        labels = np.asarray(oracle.classify_many(self.source.entities), dtype=np.int64)
        with self._lock:
            self._labels[key] = (oracle, labels)
        return labels

    def equality_masks(self, e_star: Entity) -> List[np.ndarray]:
        """每个特征一条掩码：第 j 列等于 e*_j 的行"""
        return [self.source.equality_mask(j, e_star[j]) for j in range(self.n)]

    def expectation_on_mask(self, labels: np.ndarray, mask: np.ndarray) -> Tuple[float, int]:
        """掩码内按计数加权的 L 均值，以及匹配计数"""
        counts = self.source.counts[mask]
        match_count = int(counts.sum())
        if match_count == 0:
            raise ZeroProbabilityError("conditioning on zero-probability event (no matching rows)")
        positive = int((counts * labels[mask]).sum())
        return positive / match_count, match_count


def label_rows(space: EmpiricalSpace, oracle) -> np.ndarray:
    """数据集每一行的分类标签"""
    return space.labels(oracle)


def cond_expectation(
    space: EmpiricalSpace,
    oracle,
    e_star: Entity,
    S: Iterable[FeatureRef]
) -> Tuple[float, int]:
    """
    经验分布上的条件期望 E[L(e) | e_S = e*_S]

    Args:
        space: 经验概率空间
        oracle: 分类器
        e_star: 查询实体
        S: 条件特征集合

    Returns:
        (条件期望, 匹配计数)
    """
    if space.kind is not SpaceKind.EMPIRICAL:
        raise ConfigError("cond_expectation requires an empirical space")
    indices = space.source.resolve(S)
    mask = np.ones(space.source.N, dtype=bool)
    for j in indices:
        mask &= space.source.equality_mask(j, e_star[j])
    labels = space.labels(oracle)
    try:
        return space.expectation_on_mask(labels, mask)
    except ZeroProbabilityError:
        names = [space.features[j] for j in indices]
        raise ZeroProbabilityError(
            f"conditioning on zero-probability event: no row matches {restrict(e_star, indices)} on {names}"
        ) from None


def product_expectation_over(
    space: ProductSpace,
    oracle,
    base: Entity,
    vary: Iterable[FeatureRef],
    exact: bool = False
) -> Union[float, Fraction]:
    """
    乘积空间上对 vary 中特征做边际化的期望

    vary 之外的特征固定为 base 的取值（不检查是否属于 Di）。
    exact=True 时用有理数计算概率。
    """
    indices = space.source.resolve(vary)
    if not indices:
        label = oracle.classify(base)
        return Fraction(label) if exact else float(label)
    domains = [space.domains[j] for j in indices]
    combos = list(itertools.product(*(range(len(d)) for d in domains)))
    probes = [
        substitute(base, {j: d.values[k] for j, d, k in zip(indices, domains, combo)})
        for combo in combos
    ]
    labels = oracle.classify_many(probes)
    # 整数分子累加，结果只舍入一次
    numerator = 0
    for combo, label in zip(combos, labels):
        if label:
            numerator += math.prod(d.counts[k] for d, k in zip(domains, combo))
    denominator = math.prod(d.total for d in domains)
    if exact:
        return Fraction(numerator, denominator)
    return numerator / denominator


# =====================================================
# 分桶与 one-hot 编码
# =====================================================

class BucketKind(Enum):
    """分桶方式"""
    EXPLICIT = "explicit"
    EQUI_DEPTH = "equidepth"


@dataclass(frozen=True)
class Bucket:
    """一个分桶：区间 [lo, hi]（开闭可配）或单点特殊值"""
    lo: Any = -math.inf
    hi: Any = math.inf
    lo_closed: bool = True
    hi_closed: bool = True
    special: Any = None

    @classmethod
    def singleton(cls, value: Any) -> "Bucket":
        return cls(lo=None, hi=None, special=value)

    @property
    def is_special(self) -> bool:
        return self.lo is None

    def contains(self, value: Any) -> bool:
        if self.is_special:
            return value == self.special and type(value) is not bool
        if isinstance(value, str):
            return False
        above = value >= self.lo if self.lo_closed else value > self.lo
        below = value <= self.hi if self.hi_closed else value < self.hi
        return above and below

    def to_json(self) -> Any:
        if self.is_special:
            return {"special": self.special}
        return {
            "lo": _json_bound(self.lo), "hi": _json_bound(self.hi),
            "lo_closed": self.lo_closed, "hi_closed": self.hi_closed
        }


def _json_bound(value: Any) -> Any:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _parse_bound(value: Any) -> Any:
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("inf", "+inf", "infinity"):
            return math.inf
        if lowered in ("-inf", "-infinity"):
            return -math.inf
        return float(value)
    return value


@dataclass(frozen=True)
class BucketSpec:
    """
    单个特征的分桶规格

    EXPLICIT: buckets 为有序分桶列表（区间在前、特殊值在后，与模型文件一致）
    EQUI_DEPTH: 仅给出 k，分桶在 bucketize 时根据数据求得
    """
    feature: str
    kind: BucketKind = BucketKind.EXPLICIT
    buckets: Tuple[Bucket, ...] = ()
    k: Optional[int] = None
    representatives: Tuple[Any, ...] = ()

    def __post_init__(self):
        if self.kind is BucketKind.EQUI_DEPTH:
            if self.k is None or self.k < 1:
                raise ConfigError(f"equi-depth spec for {self.feature!r} needs k >= 1")
            return
        if not self.buckets:
            raise ConfigError(f"bucket spec for {self.feature!r} has no buckets")
        _check_disjoint(self.feature, self.buckets)
        if self.representatives and len(self.representatives) != len(self.buckets):
            raise ConfigError(f"bucket spec for {self.feature!r}: representatives/buckets length mismatch")

    @property
    def resolved(self) -> bool:
        return self.kind is BucketKind.EXPLICIT

    @property
    def bucket_count(self) -> int:
        return len(self.buckets)

    def bucket_index(self, value: Any) -> int:
        """值所在分桶的下标；未覆盖时抛 BucketCoverageError"""
        if not self.resolved:
            raise ConfigError(f"equi-depth spec for {self.feature!r} is not resolved; bucketize first")
        for i, bucket in enumerate(self.buckets):
            if bucket.contains(value):
                return i
        raise BucketCoverageError(self.feature, value)

    def representative(self, value: Any) -> Any:
        return self.representatives[self.bucket_index(value)]

    def to_json(self) -> Dict[str, Any]:
        return {
            "feature": self.feature,
            "buckets": [b.to_json() for b in self.buckets],
            "representatives": list(self.representatives),
        }


def _check_disjoint(feature: str, buckets: Sequence[Bucket]) -> None:
    specials = [b.special for b in buckets if b.is_special]
    if len(set(specials)) != len(specials):
        raise ConfigError(f"bucket spec for {feature!r}: duplicate special values")
    intervals = sorted((b for b in buckets if not b.is_special), key=lambda b: (b.lo, not b.lo_closed))
    for prev, cur in zip(intervals, intervals[1:]):
        if prev.hi > cur.lo or (prev.hi == cur.lo and prev.hi_closed and cur.lo_closed):
            raise ConfigError(f"bucket spec for {feature!r}: overlapping ranges {prev} and {cur}")
    for value in specials:
        if isinstance(value, str):
            continue
        for b in intervals:
            if b.contains(value):
                raise ConfigError(f"bucket spec for {feature!r}: special {value!r} lies inside a range")


def parse_bucket_spec(feature: str, doc: Mapping[str, Any]) -> BucketSpec:
    """
    从 JSON 文档解析分桶规格

    支持三种写法:
    - {"ranges": [[lo, hi], ...], "specials": [v, ...]}  闭区间
    - {"cuts": [t1, ..., tk], "specials": [...]}  (-inf,t1], (t1,t2], ..., (tk,inf)
    - {"equidepth": k}
    """
    if "equidepth" in doc:
        return BucketSpec(feature=feature, kind=BucketKind.EQUI_DEPTH, k=int(doc["equidepth"]))
    buckets: List[Bucket] = []
    if "ranges" in doc:
        for lo, hi in doc["ranges"]:
            buckets.append(Bucket(lo=_parse_bound(lo), hi=_parse_bound(hi)))
    elif "cuts" in doc:
        cuts = [_parse_bound(t) for t in doc["cuts"]]
        if sorted(cuts) != cuts:
            raise ConfigError(f"cuts for {feature!r} must be increasing")
        edges = [-math.inf] + cuts + [math.inf]
        for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
            buckets.append(Bucket(lo=lo, hi=hi, lo_closed=(i == 0), hi_closed=True))
    for value in doc.get("specials", []):
        buckets.append(Bucket.singleton(value))
    representatives = tuple(doc.get("representatives", ()))
    return BucketSpec(feature=feature, buckets=tuple(buckets), representatives=representatives)


def load_bucket_specs(path: Union[str, Path]) -> List[BucketSpec]:
    """读取分桶规格 JSON：特征名 -> 规格"""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, Mapping):
        raise ConfigError(f"bucket spec file {path}: expected a JSON object keyed by feature name")
    try:
        return [parse_bucket_spec(name, spec) for name, spec in doc.items()]
    except (AttributeError, TypeError, ValueError) as e:
        if isinstance(e, ExplainError):
            raise
        raise ConfigError(f"bucket spec file {path} is malformed: {e}") from None


def _weighted_mean(values: Sequence[float], counts: Sequence[int]) -> float:
    return math.fsum(v * c for v, c in zip(values, counts)) / sum(counts)


def _equi_depth_spec(dom: FeatureDomain, k: int) -> BucketSpec:
    """
    等深分桶

    在按计数展开的有序列上取分位点，等于分位点的值归入下方分桶；
    k 不小于不同取值个数时退化为恒等分桶。
    """
    values = list(dom.values)
    if k >= len(values):
        return BucketSpec(
            feature=dom.feature,
            buckets=tuple(Bucket.singleton(v) for v in values),
            representatives=tuple(values)
        )
    expanded = np.repeat(np.asarray(values), np.asarray(dom.counts))
    total = len(expanded)
    thresholds = []
    for b in range(1, k):
        pos = -(-b * total // k)  # ceil(b*M/k)
        t = expanded[pos - 1].item()
        if t < values[-1] and (not thresholds or t > thresholds[-1]):
            thresholds.append(t)
    edges = [-math.inf] + thresholds + [math.inf]
    buckets = []
    representatives = []
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        bucket = Bucket(lo=lo, hi=hi, lo_closed=(i == 0), hi_closed=True)
        members = [(v, c) for v, c in zip(values, dom.counts) if bucket.contains(v)]
        buckets.append(bucket)
        representatives.append(_weighted_mean([v for v, _ in members], [c for _, c in members]))
    return BucketSpec(feature=dom.feature, buckets=tuple(buckets), representatives=tuple(representatives))


def _resolve_explicit(dom: FeatureDomain, spec: BucketSpec, kind: ColumnKind) -> BucketSpec:
    members: Dict[int, List[Tuple[Any, int]]] = {i: [] for i in range(spec.bucket_count)}
    for value, count in zip(dom.values, dom.counts):
        members[spec.bucket_index(value)].append((value, count))
    if spec.representatives:
        return spec
    representatives = []
    for i, bucket in enumerate(spec.buckets):
        if bucket.is_special:
            representatives.append(bucket.special)
        elif not kind.numeric:
            raise ConfigError(f"categorical feature {spec.feature!r} only supports singleton buckets")
        elif members[i]:
            representatives.append(_weighted_mean([v for v, _ in members[i]], [c for _, c in members[i]]))
        else:
            representatives.append(None)
    return replace(spec, representatives=tuple(representatives))


def bucketize(ds: Dataset, specs: Sequence[BucketSpec]) -> Tuple[Dataset, Dict[str, BucketSpec]]:
    """
    对数据集分桶，每个值替换为所在分桶的代表值

    Args:
        ds: 原数据集
        specs: 分桶规格列表

    Returns:
        (分桶后的数据集, 特征名 -> 已解析的 BucketSpec)
    """
    encoding: Dict[str, BucketSpec] = {}
    frame = ds.frame
    kinds = ds.column_kinds
    for spec in specs:
        idx = ds.feature_index(spec.feature)
        name = ds.features[idx]
        dom = domain(ds, idx)
        kind = kinds[name]
        if spec.kind is BucketKind.EQUI_DEPTH:
            if not kind.numeric:
                raise ConfigError(f"equi-depth bucketization is undefined for categorical feature {name!r}")
            resolved = _equi_depth_spec(dom, spec.k)
        else:
            resolved = _resolve_explicit(dom, spec, kind)
        encoding[name] = resolved
        mapping = {v: resolved.representative(v) for v in dom.values}
        frame[name] = frame[name].map(mapping)
        if kind.numeric:
            reps = [r for r in resolved.representatives if r is not None]
            all_int = all(isinstance(r, int) or float(r).is_integer() for r in reps)
            if kind is ColumnKind.INTEGER and all_int:
                frame[name] = frame[name].astype(np.int64)
            else:
                frame[name] = frame[name].astype(float)
                kinds[name] = ColumnKind.REAL
        logger.info(f"[bucketize][{name}] {len(dom)} values -> {resolved.bucket_count} buckets")
    return Dataset(ds.features, frame, kinds), encoding


def translate_entity(entity: Entity, features: Sequence[str], encoding: Mapping[str, BucketSpec]) -> Entity:
    """查询实体按分桶映射到代表值"""
    return tuple(
        encoding[name].representative(value) if name in encoding else value
        for name, value in zip(features, entity)
    )


def one_hot(value: Any, spec: BucketSpec) -> np.ndarray:
    """值 -> one-hot 指示向量，长度为分桶数"""
    vector = np.zeros(spec.bucket_count, dtype=np.int64)
    vector[spec.bucket_index(value)] = 1
    return vector


def decode_one_hot(vector: Sequence[int], spec: BucketSpec) -> Any:
    """one-hot 向量 -> 分桶代表值"""
    vector = np.asarray(vector)
    if vector.shape != (spec.bucket_count,) or vector.sum() != 1:
        raise ConfigError(f"not a one-hot vector for {spec.feature!r}: {vector.tolist()}")
    return spec.representatives[int(np.argmax(vector))]
