"""
解释结果的比较统计

- top-1 特征分布
- top-k 交集大小直方图
- 平均 Jaccard 相似度
- 分桶数敏感度
- 直方图 CSV 与 gnuplot 数据文件输出
"""
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from classifier import ClassifierOracle
from errors import ConfigError, MisalignedInputsError
from explainer import ScoreOptions, explain_entities
from explanation import Explanation
from score_registry import ScoreKind
from tabular import BucketKind, BucketSpec, Dataset, Entity, bucketize, translate_entity

logger = logging.getLogger(__name__)

NO_EXPLANATION = "⊥"


@dataclass
class ExplanationSet:
    """一种分数下每个实体的排名列表"""
    kind: str
    entities: List[Tuple[Any, ...]]
    rankings: List[List[str]]
    no_explanation: List[bool]

    def __post_init__(self):
        if not (len(self.entities) == len(self.rankings) == len(self.no_explanation)):
            raise ConfigError("explanation set fields have different lengths")
        for i, ranking in enumerate(self.rankings):
            if len(set(ranking)) != len(ranking):
                raise ConfigError(f"entity {i}: ranking repeats a feature")
        self.rankings = [[] if marked else list(r) for r, marked in zip(self.rankings, self.no_explanation)]

    def __len__(self) -> int:
        return len(self.rankings)

    def top(self, i: int, k: int) -> set:
        return set(self.rankings[i][:k])

    @classmethod
    def from_explanations(cls, kind: str, explanations: Sequence[Explanation]) -> "ExplanationSet":
        return cls(
            kind=kind,
            entities=[tuple(x.entity) for x in explanations],
            rankings=[list(x.ranking) for x in explanations],
            no_explanation=[x.no_explanation for x in explanations],
        )


def load_explanation_set(path: Union[str, Path]) -> ExplanationSet:
    """
    读取 explain 命令输出的 explanations.json

    失败或超时的实体视为没有解释。
    """
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    entries = doc.get("explanations", [])
    return ExplanationSet(
        kind=doc.get("score", "unknown"),
        entities=[tuple(e["entity"]) for e in entries],
        rankings=[list(e.get("ranking", [])) for e in entries],
        no_explanation=[e.get("status", "ok") != "ok" or bool(e.get("no_explanation")) for e in entries],
    )


def _check_aligned(xs: ExplanationSet, ys: ExplanationSet) -> None:
    if len(xs) != len(ys):
        raise MisalignedInputsError(f"explanation sets have {len(xs)} and {len(ys)} entities")
    for i, (a, b) in enumerate(zip(xs.entities, ys.entities)):
        if list(a) != list(b):
            raise MisalignedInputsError(f"entity {i} differs between inputs: {a} vs {b}")


def top1_distribution(xs: ExplanationSet) -> Dict[str, int]:
    """排名第一的特征计数；没有解释的实体计入 ⊥"""
    counts: Dict[str, int] = {}
    for ranking in xs.rankings:
        key = ranking[0] if ranking else NO_EXPLANATION
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def topk_intersection(xs: ExplanationSet, ys: ExplanationSet, k: int) -> Dict[int, int]:
    """每个实体 |top-k(x) ∩ top-k(y)| 的直方图，键为 0..k"""
    _check_aligned(xs, ys)
    histogram = {size: 0 for size in range(k + 1)}
    for i in range(len(xs)):
        histogram[len(xs.top(i, k) & ys.top(i, k))] += 1
    return histogram


def jaccard_stats(xs: ExplanationSet, ys: ExplanationSet, k: int) -> Tuple[float, int]:
    """
    top-k 集合的平均 Jaccard 系数

    Returns:
        (均值, 双方都为空而被排除的实体数)；没有可比较实体时均值为 nan
    """
    _check_aligned(xs, ys)
    values = []
    excluded = 0
    for i in range(len(xs)):
        a, b = xs.top(i, k), ys.top(i, k)
        union = a | b
        if not union:
            excluded += 1
            continue
        values.append(len(a & b) / len(union))
    mean = math.fsum(values) / len(values) if values else math.nan
    return mean, excluded


def jaccard_mean(xs: ExplanationSet, ys: ExplanationSet, k: int) -> float:
    return jaccard_stats(xs, ys, k)[0]


def compare_sets(xs: ExplanationSet, ys: ExplanationSet, k: int) -> Dict[str, Any]:
    """两组解释的比较报告"""
    mean, excluded = jaccard_stats(xs, ys, k)
    report = {
        "kinds": [xs.kind, ys.kind],
        "k": k,
        "entities": len(xs),
        "top1": {"a": top1_distribution(xs), "b": top1_distribution(ys)},
        "intersection_histogram": {str(size): count for size, count in topk_intersection(xs, ys, k).items()},
        "jaccard_mean": None if math.isnan(mean) else mean,
        "jaccard_excluded_both_empty": excluded,
    }
    logger.info(f"[compare] {xs.kind} vs {ys.kind}: mean Jaccard {mean:.3f} over top-{k}")
    return report


def bucket_sensitivity(
    ds: Dataset,
    oracle: ClassifierOracle,
    entities: Sequence[Entity],
    score_kind: ScoreKind,
    bucket_counts: Sequence[int],
    options: Optional[ScoreOptions] = None,
    timeout_s: Optional[float] = None,
    cancel: Optional[threading.Event] = None
) -> Dict[int, Dict[str, Any]]:
    """
    不同等深分桶数下的 top-1 分布

    Args:
        ds: 原始数据集（全部为数值特征）
        oracle: 分类器（在分桶代表值上调用）
        entities: 待解释实体（原始取值，按各 k 的分桶转换）
        score_kind: 分数类型
        bucket_counts: 分桶数列表
        options: 分数参数
        timeout_s: 每个 k 的超时秒数
        cancel: 取消事件（超时时置位，正在运行的解释随之退出）

    Returns:
        k -> {"distribution", "elapsed_seconds", "buckets", "status"}
    """
    for name, kind in ds.column_kinds.items():
        if not kind.numeric:
            raise ConfigError(f"bucket sensitivity needs numeric features; {name!r} is {kind.value}")

    def run_one(k: int) -> Dict[str, Any]:
        specs = [BucketSpec(feature=f, kind=BucketKind.EQUI_DEPTH, k=k) for f in ds.features]
        bucketized, encoding = bucketize(ds, specs)
        translated = [bucketized.check_entity(translate_entity(e, ds.features, encoding)) for e in entities]
        explanations = explain_entities(bucketized, oracle, translated, score_kind, options, cancel=cancel)
        return {
            "distribution": top1_distribution(ExplanationSet.from_explanations(score_kind.value, explanations)),
            "buckets": {f: encoding[f].bucket_count for f in ds.features},
        }

    results: Dict[int, Dict[str, Any]] = {}
    cancel = cancel if cancel is not None else threading.Event()
    for k in bucket_counts:
        start = time.time()
        executor = ThreadPoolExecutor(max_workers=1)
        future = executor.submit(run_one, k)
        try:
            entry = future.result(timeout=timeout_s)
            entry["status"] = "ok"
        except FutureTimeout:
            logger.warning(f"[sensitivity] k={k} timed out after {timeout_s}s")
            cancel.set()
            entry = {"status": "timeout", "distribution": {}, "buckets": {}}
        finally:
            executor.shutdown(wait=True, cancel_futures=True)
        cancel.clear()
        entry["elapsed_seconds"] = time.time() - start
        results[k] = entry
        logger.info(f"[sensitivity] k={k}: {entry['status']} in {entry['elapsed_seconds']:.2f}s")
    return results


def write_histogram_csv(path: Union[str, Path], histogram: Mapping[Any, int], key_name: str = "key") -> Path:
    """直方图写成两列 CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({key_name: [str(k) for k in histogram], "count": list(histogram.values())})
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_plot_data(path: Union[str, Path], histogram: Mapping[Any, int], title: str = "") -> Path:
    """gnuplot 可读的列数据文件（# 注释行 + 制表符分隔，标签加引号）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if title:
            f.write(f"# {title}\n")
        f.write("# label\tcount\n")
        for label, count in histogram.items():
            f.write(f'"{label}"\t{count}\n')
    return path
