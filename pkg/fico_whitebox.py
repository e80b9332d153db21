"""
两层子量表模型的白盒解释

步骤:
1. 计算各子量表风险、子量表分与特征分
2. 按子量表分降序保留前 M 个子量表
3. 每个保留的子量表内按特征分降序保留前 K 个特征
4. 先按子量表分、再按特征分拼接

同分按模型声明顺序。
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Tuple

import pandas as pd

import config
from classifier import SubscaleModel
from errors import ConfigError
from explanation import Explanation, FeatureScore
from tabular import Entity

logger = logging.getLogger(__name__)


@dataclass
class FicoExplanation:
    entity: Entity
    subscale_ranking: List[Tuple[str, float]]
    final_ranking: List[str]
    final_keys: List[Tuple[float, float]]
    M: int
    K: int
    global_risk: float
    label: int


def fico_explain(
    model: SubscaleModel,
    entity: Entity,
    M: int = config.DEFAULT_FICO_M,
    K: int = config.DEFAULT_FICO_K
) -> FicoExplanation:
    """
    子量表白盒解释

    Args:
        model: 子量表模型
        entity: 待解释实体（按 model.features 顺序）
        M: 保留的子量表数
        K: 每个子量表保留的特征数（不足 K 个时全部保留）

    Returns:
        FicoExplanation
    """
    if M < 1 or K < 1:
        raise ConfigError(f"M and K must be >= 1, got M={M}, K={K}")
    run = model.run(entity)

    order = {s.name: idx for idx, s in enumerate(model.subscales)}
    top_subscales = sorted(
        model.subscales,
        key=lambda s: (-run.subscale_scores[s.name], order[s.name])
    )[:M]

    final_ranking: List[str] = []
    final_keys: List[Tuple[float, float]] = []
    for subscale in top_subscales:
        members = sorted(
            enumerate(subscale.features),
            key=lambda item: (-run.feature_scores[item[1].name], item[0])
        )[:K]
        for _, fm in members:
            final_ranking.append(fm.name)
            final_keys.append((run.subscale_scores[subscale.name], run.feature_scores[fm.name]))

    subscale_ranking = [(s.name, run.subscale_scores[s.name]) for s in top_subscales]
    logger.debug(f"[fico] top subscales {[name for name, _ in subscale_ranking]} -> {final_ranking}")
    return FicoExplanation(
        entity=tuple(entity),
        subscale_ranking=subscale_ranking,
        final_ranking=final_ranking,
        final_keys=final_keys,
        M=M,
        K=K,
        global_risk=run.global_risk,
        label=run.label
    )


def explain_fico(
    model: SubscaleModel,
    entity: Entity,
    M: int = config.DEFAULT_FICO_M,
    K: int = config.DEFAULT_FICO_K
) -> Explanation:
    """FICO 解释的 JSON 信封，附带全部中间分数"""
    fx = fico_explain(model, entity, M, K)
    run = model.run(entity)
    weights = {s.name: s.weight for s in model.subscales}
    return Explanation(
        entity=fx.entity,
        label=fx.label,
        kind="fico",
        scores=[FeatureScore(feature=name, value=run.feature_scores[name]) for name in model.features],
        ranking=list(fx.final_ranking),
        extra={
            "M": M,
            "K": K,
            "global_risk": fx.global_risk,
            "subscale_ranking": [
                {
                    "subscale": name,
                    "risk": run.subscale_risks[name],
                    "weight": weights[name],
                    "subscale_score": score,
                }
                for name, score in fx.subscale_ranking
            ],
            "final_ranking": [
                {
                    "feature": feature,
                    "subscale": model.subscale_of[feature],
                    "subscale_score": sub_score,
                    "feature_score": feat_score,
                }
                for feature, (sub_score, feat_score) in zip(fx.final_ranking, fx.final_keys)
            ],
        }
    )


def subscale_weight_correlation(model: SubscaleModel, entities: Iterable[Entity]) -> Dict[str, Any]:
    """
    第二层权重与平均子量表分的 Pearson 相关系数（仅报告）

    Returns:
        {"correlation": r, "entities": 数量, "mean_scores": {子量表: 平均分}, "weights": {...}}
    """
    frame = pd.DataFrame([model.run(e).subscale_scores for e in entities])
    if frame.empty:
        raise ConfigError("subscale_weight_correlation needs at least one entity")
    means = frame.mean()
    weights = pd.Series({s.name: s.weight for s in model.subscales})
    correlation = float(weights.corr(means[weights.index]))
    logger.info(f"[fico] layer-2 weight vs mean subscale score correlation: {correlation:.3f}")
    return {
        "correlation": correlation,
        "entities": len(frame),
        "mean_scores": {name: float(means[name]) for name in weights.index},
        "weights": {name: float(w) for name, w in weights.items()},
    }
