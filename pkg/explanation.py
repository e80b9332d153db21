"""
解释结果的数据结构与排序规则

所有分数类型（counter/resp/shap/kernelshap/fico）共用同一个 JSON 信封。
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

TIE_BREAK_INDEX = "index"   # 分数降序，再按特征下标升序
TIE_BREAK_NAME = "name"     # 分数降序，再按特征名升序
TIE_BREAKS = (TIE_BREAK_INDEX, TIE_BREAK_NAME)


@dataclass
class FeatureScore:
    """单个特征的分数；RESP 附带 contingency 见证 (gamma, w)"""
    feature: str
    value: float
    gamma: Optional[Tuple[str, ...]] = None
    w: Optional[Tuple[Any, ...]] = None
    per_level: Optional[Tuple[float, ...]] = None
    budget_exhausted: bool = False

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"feature": self.feature, "value": self.value}
        if self.gamma is not None:
            doc["gamma"] = list(self.gamma)
            doc["w"] = list(self.w or ())
        if self.per_level is not None:
            doc["per_level"] = list(self.per_level)
        if self.budget_exhausted:
            doc["budget_exhausted"] = True
        return doc


@dataclass
class Explanation:
    """单个实体的解释"""
    entity: Tuple[Any, ...]
    label: int
    kind: str
    scores: List[FeatureScore]
    ranking: List[str]
    no_explanation: bool = False
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    def score_of(self, feature: str) -> FeatureScore:
        for s in self.scores:
            if s.feature == feature:
                return s
        raise KeyError(feature)

    def top(self, k: int) -> List[str]:
        return [] if self.no_explanation else self.ranking[:k]

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "entity": list(self.entity),
            "label": self.label,
            "kind": self.kind,
            "scores": [s.to_dict() for s in self.scores],
            "ranking": [] if self.no_explanation else list(self.ranking),
            "no_explanation": self.no_explanation,
        }
        if self.diagnostics:
            doc["diagnostics"] = dict(self.diagnostics)
        doc.update(self.extra)
        return doc


def rank_features(
    features: Sequence[str],
    values: Sequence[float],
    tie_break: str = TIE_BREAK_INDEX,
    zero_last: bool = False,
    magnitude: bool = False
) -> List[str]:
    """
    按分数排序特征

    Args:
        features: 特征名（声明顺序）
        values: 对应分数
        tie_break: 同分时的次序规则
        zero_last: 分数为 0 的特征排在最后
        magnitude: 按绝对值而非带符号值排序

    Returns:
        排好序的特征名列表
    """
    if tie_break not in TIE_BREAKS:
        raise ValueError(f"unknown tie_break {tie_break!r}; expected one of {TIE_BREAKS}")

    def key(i: int):
        v = abs(values[i]) if magnitude else values[i]
        secondary = i if tie_break == TIE_BREAK_INDEX else features[i]
        return (zero_last and values[i] == 0, -v, secondary)

    return [features[i] for i in sorted(range(len(features)), key=key)]
