"""
黑盒分类器 L 及其内置实现

- TableClassifier: 显式查表（测试夹具）
- Monotone2CNF: 单调 2CNF 分类器
- SubscaleModel: 两层逻辑回归子量表模型
- ExternalOracle: 通过子进程批量调用的外部分类器
- CachedOracle / NegatedOracle: 探测计数缓存与标签取反包装
"""
import json
import logging
import subprocess
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

import config
from errors import (
    BudgetExceededError, ConfigError, ExplainError, OracleError, OracleTimeoutError, PreconditionError,
    RunCancelledError
)
from tabular import BucketSpec, Entity, parse_bucket_spec

logger = logging.getLogger(__name__)


def sigmoid(x: float) -> float:
    return float(expit(x))


class ClassifierOracle(ABC):
    """分类器接口：classify(entity) -> {0, 1}"""

    name: str = "oracle"
    arity: Optional[int] = None

    @abstractmethod
    def _label(self, entity: Entity) -> int:
        ...

    def _check_arity(self, entity: Sequence[Any]) -> None:
        if self.arity is not None and len(entity) != self.arity:
            raise PreconditionError(
                f"[{self.name}] entity arity {len(entity)} does not match model arity {self.arity}"
            )

    def classify(self, entity: Entity) -> int:
        self._check_arity(entity)
        return self._label(tuple(entity))

    def classify_many(self, entities: Sequence[Entity]) -> List[int]:
        return [self.classify(e) for e in entities]


def classify(model: ClassifierOracle, entity: Entity) -> int:
    """对单个实体分类"""
    return model.classify(entity)


class TableClassifier(ClassifierOracle):
    """显式映射：取值元组 -> 标签，未命中返回默认标签"""

    def __init__(self, mapping: Mapping[Entity, int], default: int = 0, arity: Optional[int] = None, name: str = "table"):
        self.mapping: Dict[Entity, int] = {tuple(k): int(v) for k, v in mapping.items()}
        if any(v not in (0, 1) for v in self.mapping.values()) or default not in (0, 1):
            raise ConfigError("table classifier labels must be 0 or 1")
        self.default = default
        self.arity = arity if arity is not None else (len(next(iter(self.mapping))) if self.mapping else None)
        self.name = name

    def _label(self, entity: Entity) -> int:
        return self.mapping.get(entity, self.default)


class FunctionClassifier(ClassifierOracle):
    """包装一个 Python 函数，主要用于测试中的布尔公式"""

    def __init__(self, func, arity: int, name: str = "function"):
        self.func = func
        self.arity = arity
        self.name = name

    def _label(self, entity: Entity) -> int:
        return 1 if self.func(entity) else 0


class Monotone2CNF(ClassifierOracle):
    """
    单调 2CNF：子句 (i, j) 表示 Fi ∨ Fj，下标从 1 开始

    所有特征取值为 {0, 1}。
    """

    def __init__(self, n: int, clauses: Iterable[Tuple[int, int]]):
        self.n = n
        self.arity = n
        self.clauses: Tuple[Tuple[int, int], ...] = tuple(sorted({tuple(sorted(c)) for c in clauses}))
        for i, j in self.clauses:
            if not (1 <= i <= n and 1 <= j <= n):
                raise ConfigError(f"clause ({i}, {j}) out of range for n={n}")
        self.name = f"monotone2cnf(n={n}, clauses={len(self.clauses)})"

    def _label(self, entity: Entity) -> int:
        for i, j in self.clauses:
            if entity[i - 1] != 1 and entity[j - 1] != 1:
                return 0
        return 1


def count_models(f: Monotone2CNF, chunk_bits: int = 20) -> int:
    """
    穷举 {0,1}^n 统计满足赋值个数 #L

    Args:
        f: 单调 2CNF
        chunk_bits: 每块枚举 2^chunk_bits 个赋值

    Returns:
        满足赋值个数
    """
    if f.n > config.COUNT_MODELS_MAX_VARS:
        raise BudgetExceededError(
            f"count_models: n={f.n} exceeds enumeration budget {config.COUNT_MODELS_MAX_VARS}"
        )
    total = 1 << f.n
    chunk = 1 << min(chunk_bits, f.n)
    satisfied = 0
    for start in range(0, total, chunk):
        x = np.arange(start, min(start + chunk, total), dtype=np.int64)
        ok = np.ones(len(x), dtype=bool)
        for i, j in f.clauses:
            ok &= (((x >> (i - 1)) | (x >> (j - 1))) & 1).astype(bool)
        satisfied += int(ok.sum())
    return satisfied


# =====================================================
# 两层子量表模型
# =====================================================

@dataclass(frozen=True)
class FeatureModel:
    """子量表中的一个输入特征：分桶规格与每个分桶的第一层权重"""
    name: str
    buckets: BucketSpec
    weights: Tuple[float, ...]
    monotone: bool = False

    def __post_init__(self):
        if len(self.weights) != self.buckets.bucket_count:
            raise ConfigError(
                f"feature {self.name!r}: {len(self.weights)} weights for {self.buckets.bucket_count} buckets"
            )

    def score(self, value: Any) -> float:
        """one-hot 向量与第一层权重的点积，即激活分桶的权重"""
        return self.weights[self.buckets.bucket_index(value)]


@dataclass(frozen=True)
class Subscale:
    """一个子量表：第一层逻辑回归（bias + 成员特征）与第二层权重"""
    name: str
    weight: float
    bias: float
    features: Tuple[FeatureModel, ...]


@dataclass
class SubscaleRun:
    """模型在单个实体上的中间结果"""
    feature_scores: Dict[str, float]
    subscale_risks: Dict[str, float]
    subscale_scores: Dict[str, float]
    global_risk: float
    label: int


class SubscaleModel(ClassifierOracle):
    """
    两层逻辑回归子量表模型

    第一层每个子量表一个逻辑回归；第二层以各子量表风险为输入，
    global_risk > threshold 时分类为 1。
    """

    def __init__(
        self,
        subscales: Sequence[Subscale],
        layer2_bias: float,
        threshold: float = config.DEFAULT_THRESHOLD,
        feature_order: Optional[Sequence[str]] = None,
        name: str = "subscale"
    ):
        self.subscales: Tuple[Subscale, ...] = tuple(subscales)
        self.layer2_bias = float(layer2_bias)
        self.threshold = float(threshold)
        self.name = name

        declared = [fm.name for s in self.subscales for fm in s.features]
        if len(set(declared)) != len(declared):
            raise ConfigError("every input feature must belong to exactly one subscale")
        self.declared_features: Tuple[str, ...] = tuple(declared)
        order = tuple(feature_order) if feature_order is not None else self.declared_features
        if sorted(order) != sorted(declared):
            raise ConfigError(f"feature order {list(order)} does not match model features {declared}")
        self.features: Tuple[str, ...] = order
        self.arity = len(order)
        self.subscale_of: Dict[str, str] = {fm.name: s.name for s in self.subscales for fm in s.features}

        position = {name: i for i, name in enumerate(order)}
        self._plan: List[Tuple[Subscale, Tuple[Tuple[int, FeatureModel], ...]]] = [
            (s, tuple((position[fm.name], fm) for fm in s.features)) for s in self.subscales
        ]
        self._score_cache: Dict[Tuple[str, Any], float] = {}

    def with_feature_order(self, order: Sequence[str]) -> "SubscaleModel":
        """按数据集的特征顺序重新绑定实体下标"""
        return SubscaleModel(self.subscales, self.layer2_bias, self.threshold, order, self.name)

    def _feature_score(self, fm: FeatureModel, value: Any) -> float:
        key = (fm.name, value)
        score = self._score_cache.get(key)
        if score is None:
            score = fm.score(value)
            self._score_cache[key] = score
        return score

    def run(self, entity: Entity) -> SubscaleRun:
        """第一步：计算特征分、子量表风险、子量表分与全局风险"""
        self._check_arity(entity)
        feature_scores: Dict[str, float] = {}
        risks: Dict[str, float] = {}
        scores: Dict[str, float] = {}
        logit = self.layer2_bias
        for subscale, members in self._plan:
            z = subscale.bias
            for pos, fm in members:
                fs = self._feature_score(fm, entity[pos])
                feature_scores[fm.name] = fs
                z += fs
            risk = sigmoid(z)
            risks[subscale.name] = risk
            scores[subscale.name] = subscale.weight * risk
            logit += subscale.weight * risk
        global_risk = sigmoid(logit)
        return SubscaleRun(
            feature_scores=feature_scores,
            subscale_risks=risks,
            subscale_scores=scores,
            global_risk=global_risk,
            label=1 if global_risk > self.threshold else 0
        )

    def _label(self, entity: Entity) -> int:
        return self.run(entity).label


def subscale_risks(model: SubscaleModel, entity: Entity) -> SubscaleRun:
    return model.run(entity)


# =====================================================
# 外部进程分类器
# =====================================================

def check_cancelled(cancel: Optional[threading.Event], where: str) -> None:
    """运行已取消时抛出 RunCancelledError"""
    if cancel is not None and cancel.is_set():
        raise RunCancelledError(f"[{where}] run cancelled")


def _kill(proc: subprocess.Popen) -> None:
    proc.kill()
    proc.communicate()


class ExternalOracle(ClassifierOracle):
    """
    外部可执行程序作为分类器

    协议：标准输入写入 CSV（表头为特征名，每行一个探测实体），
    子进程按顺序每行输出一个 0/1 标签；非零退出码视为错误。
    """

    def __init__(
        self,
        command: Sequence[str],
        features: Sequence[str],
        timeout_ms: Optional[int] = None,
        name: Optional[str] = None,
        cancel: Optional[threading.Event] = None
    ):
        """
        Args:
            command: 可执行文件路径及参数
            features: 特征名（CSV 表头）
            timeout_ms: 每次批量调用的超时（毫秒）
            cancel: 运行级取消事件，置位后终止正在运行的子进程
        """
        if not command:
            raise ConfigError("external oracle needs a command")
        self.command = list(command)
        self.features = list(features)
        self.arity = len(self.features)
        self.timeout_ms = timeout_ms or config.ORACLE_TIMEOUT_MS
        self.name = name or f"external({Path(self.command[0]).name})"
        self.cancel = cancel
        self.invocations = 0
        self._cache: Dict[Entity, int] = {}
        self._cache_lock = threading.Lock()
        self._process_lock = threading.Lock()

    def _communicate(self, payload: str, batch_size: int) -> Tuple[int, str, str]:
        """
        运行一次子进程

        按 ORACLE_POLL_INTERVAL 轮询；超时或运行被取消时终止子进程。
        """
        check_cancelled(self.cancel, self.name)
        proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True
        )
        self.invocations += 1
        deadline = time.monotonic() + self.timeout_ms / 1000.0
        pending_input: Optional[str] = payload
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                _kill(proc)
                raise OracleTimeoutError(
                    f"[{self.name}] batch of {batch_size} timed out after {self.timeout_ms} ms"
                )
            try:
                stdout, stderr = proc.communicate(
                    input=pending_input,
                    timeout=min(remaining, config.ORACLE_POLL_INTERVAL)
                )
                return proc.returncode, stdout, stderr
            except subprocess.TimeoutExpired:
                # 输入只能写一次
                pending_input = None
                if self.cancel is not None and self.cancel.is_set():
                    _kill(proc)
                    raise RunCancelledError(f"[{self.name}] run cancelled, killed oracle process {proc.pid}")

    def _run_once(self, payload: str, batch_size: int) -> List[int]:
        returncode, stdout, stderr = self._communicate(payload, batch_size)
        if returncode != 0:
            raise OracleError(
                f"[{self.name}] exited with status {returncode}: {stderr.strip()[:200]}"
            )
        lines = [line.strip() for line in stdout.splitlines() if line.strip()]
        if len(lines) != batch_size:
            raise ValueError(f"[{self.name}] returned {len(lines)} labels for {batch_size} entities")
        labels = []
        for line in lines:
            if line not in ("0", "1"):
                raise ValueError(f"[{self.name}] returned non-binary label {line!r}")
            labels.append(int(line))
        return labels

    def _run_batch_with_retry(self, entities: List[Entity]) -> List[int]:
        """
        调用外部进程并自动重试

        进程启动失败或非零退出码按指数退避重试；
        超时与非法输出不重试。
        """
        payload = pd.DataFrame(entities, columns=self.features).to_csv(index=False, lineterminator="\n")
        last_error: Optional[Exception] = None

        for attempt in range(config.ORACLE_MAX_RETRIES):
            try:
                with self._process_lock:
                    return self._run_once(payload, len(entities))
            except OracleTimeoutError:
                raise
            except ValueError as e:
                raise OracleError(str(e)) from None
            except (OracleError, OSError) as e:
                last_error = e
                if attempt < config.ORACLE_MAX_RETRIES - 1:
                    delay = min(config.BASE_RETRY_DELAY * (2 ** attempt), config.MAX_RETRY_DELAY)
                    logger.warning(
                        f"[{self.name}] Attempt {attempt + 1} failed: {e}. Retrying in {delay:.1f}s..."
                    )
                    if self.cancel is None:
                        time.sleep(delay)
                    elif self.cancel.wait(delay):
                        raise RunCancelledError(f"[{self.name}] run cancelled during retry backoff")
                else:
                    logger.error(f"[{self.name}] All {config.ORACLE_MAX_RETRIES} attempts failed: {e}")

        raise OracleError(str(last_error))

    def _label(self, entity: Entity) -> int:
        return self.classify_many([entity])[0]

    def classify_many(self, entities: Sequence[Entity]) -> List[int]:
        entities = [tuple(e) for e in entities]
        for e in entities:
            self._check_arity(e)
        with self._cache_lock:
            missing = list(dict.fromkeys(e for e in entities if e not in self._cache))
        if missing:
            labels = self._run_batch_with_retry(missing)
            with self._cache_lock:
                self._cache.update(zip(missing, labels))
            logger.debug(f"[{self.name}] classified batch of {len(missing)}")
        with self._cache_lock:
            return [self._cache[e] for e in entities]


# =====================================================
# 包装器
# =====================================================

class CachedOracle(ClassifierOracle):
    """
    带记忆的包装器，统计不同探测实体数与总调用数（线程安全）

    cancel 置位后，每次批量调用前抛出 RunCancelledError。
    """

    def __init__(self, inner: ClassifierOracle, cancel: Optional[threading.Event] = None):
        self.inner = inner
        self.arity = inner.arity
        self.name = inner.name
        self.cancel = cancel
        self.calls = 0
        self._cache: Dict[Entity, int] = {}
        self._lock = threading.Lock()

    @property
    def probes(self) -> int:
        """不同探测实体数"""
        with self._lock:
            return len(self._cache)

    def _label(self, entity: Entity) -> int:
        return self.classify_many([entity])[0]

    def classify_many(self, entities: Sequence[Entity]) -> List[int]:
        check_cancelled(self.cancel, self.name)
        entities = [tuple(e) for e in entities]
        with self._lock:
            self.calls += len(entities)
            missing = list(dict.fromkeys(e for e in entities if e not in self._cache))
        if missing:
            labels = self.inner.classify_many(missing)
            with self._lock:
                self._cache.update(zip(missing, labels))
        with self._lock:
            return [self._cache[e] for e in entities]

    def reset_counts(self) -> None:
        with self._lock:
            self.calls = 0
            self._cache.clear()


class NegatedOracle(ClassifierOracle):
    """标签取反：用于按对称性解释 L(e) = 0 的结果"""

    def __init__(self, inner: ClassifierOracle):
        self.inner = inner
        self.arity = inner.arity
        self.name = f"not({inner.name})"

    def _label(self, entity: Entity) -> int:
        return 1 - self.inner.classify(entity)

    def classify_many(self, entities: Sequence[Entity]) -> List[int]:
        return [1 - label for label in self.inner.classify_many(entities)]


# =====================================================
# 模型文件
# =====================================================

def _field(doc: Any, key: str, where: str) -> Any:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    if key not in doc:
        raise ConfigError(f"{where}: missing key {key!r}")
    return doc[key]


def parse_subscale_model(doc: Mapping[str, Any], name: str = "subscale") -> SubscaleModel:
    """从 JSON 文档解析子量表模型（缺少字段时抛出 ConfigError）"""
    subscales = []
    for si, s in enumerate(_field(doc, "subscales", name)):
        s_name = _field(s, "name", f"{name}: subscale #{si}")
        where = f"{name}: subscale {s_name!r}"
        members = []
        for fi, fdoc in enumerate(_field(s, "features", where)):
            f_name = _field(fdoc, "name", f"{where}: feature #{fi}")
            f_where = f"{where}: feature {f_name!r}"
            spec = parse_bucket_spec(f_name, _field(fdoc, "buckets", f_where))
            members.append(FeatureModel(
                name=f_name,
                buckets=spec,
                weights=tuple(float(w) for w in _field(fdoc, "weights", f_where)),
                monotone=bool(fdoc.get("monotone", False))
            ))
        subscales.append(Subscale(
            name=s_name,
            weight=float(_field(s, "weight", where)),
            bias=float(s.get("bias", 0.0)),
            features=tuple(members)
        ))
    return SubscaleModel(
        subscales,
        layer2_bias=float(doc.get("layer2_bias", 0.0)),
        threshold=float(doc.get("threshold", config.DEFAULT_THRESHOLD)),
        name=name
    )


def load_model(path: Union[str, Path]) -> ClassifierOracle:
    """
    读取模型文件

    按 "type" 字段分派：subscale（默认）、monotone2cnf、table。
    """
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, Mapping):
        raise ConfigError(f"model file {path}: expected a JSON object")
    kind = doc.get("type", "subscale")
    try:
        if kind == "subscale":
            model = parse_subscale_model(doc, name=path.stem)
        elif kind == "monotone2cnf":
            n = _field(doc, "n", str(path))
            model = Monotone2CNF(int(n), [tuple(c) for c in _field(doc, "clauses", str(path))])
        elif kind == "table":
            mapping = {tuple(row[:-1]): int(row[-1]) for row in _field(doc, "rows", str(path))}
            model = TableClassifier(mapping, default=int(doc.get("default", 0)), arity=doc.get("arity"), name=path.stem)
        else:
            raise ConfigError(f"unknown model type {kind!r}")
    except ConfigError as e:
        raise ConfigError(f"model file {path}: {e}") from None
    except (AttributeError, TypeError, ValueError, IndexError, KeyError) as e:
        if isinstance(e, ExplainError):
            raise
        raise ConfigError(f"model file {path} is malformed: {e}") from None
    logger.info(f"Loaded {kind} model from {path}")
    return model
