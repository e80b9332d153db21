"""
基于因果的特征分数：COUNTER 与 RESP（乘积空间）

RESP 的 contingency 搜索按 |Γ| = 0, 1, ..., c 递增，
在第一个出现非零分数的规模上取所有 (Γ, w) 的最大值。
"""
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, List, Optional, Tuple

import config
from classifier import CachedOracle, ClassifierOracle, NegatedOracle
from errors import PreconditionError
from explanation import TIE_BREAK_INDEX, TIE_BREAKS, Explanation, FeatureScore, rank_features
from tabular import Entity, FeatureRef, ProductSpace, SpaceKind, product_expectation_over, substitute

logger = logging.getLogger(__name__)


class CausalKind(Enum):
    COUNTER = "counter"
    RESP = "resp"


@dataclass(frozen=True)
class Contingency:
    """contingency (Γ, w)：Γ 为特征下标集合（不含被评分特征），w 为对应取值"""
    gamma: Tuple[int, ...]
    w: Tuple[Any, ...]

    def __post_init__(self):
        if len(self.gamma) != len(self.w):
            raise PreconditionError(f"contingency size mismatch: |Γ|={len(self.gamma)}, |w|={len(self.w)}")


@dataclass(frozen=True)
class RespConfig:
    """RESP 搜索配置"""
    max_contingency_size: int = config.DEFAULT_MAX_CONTINGENCY
    tie_break: str = TIE_BREAK_INDEX
    explain_zero: bool = False

    def __post_init__(self):
        if self.max_contingency_size < 0:
            raise PreconditionError("max_contingency_size must be >= 0")
        if self.tie_break not in TIE_BREAKS:
            raise PreconditionError(f"unknown tie_break {self.tie_break!r}")


@dataclass(frozen=True)
class CausalScore:
    feature: str
    value: float
    kind: CausalKind
    witness: Optional[Contingency] = None
    budget_exhausted: bool = False


def _require_product(space) -> None:
    if space.kind is not SpaceKind.PRODUCT:
        raise PreconditionError("causal scores are defined over the product space")


def _cached(oracle: ClassifierOracle) -> ClassifierOracle:
    if isinstance(oracle, CachedOracle):
        return oracle
    return CachedOracle(oracle)


def counter_score(space: ProductSpace, oracle: ClassifierOracle, e_star: Entity, feature: FeatureRef) -> CausalScore:
    """
    COUNTER(e*, Fi) = L(e*) - Σ_x L(e*[Fi := x]) p(Fi = x)

    Args:
        space: 乘积空间
        oracle: 分类器
        e_star: 待解释实体
        feature: 特征 Fi

    Returns:
        CausalScore（无见证）
    """
    _require_product(space)
    i = space.source.feature_index(feature)
    oracle = _cached(oracle)
    value = oracle.classify(e_star) - product_expectation_over(space, oracle, e_star, [i])
    return CausalScore(feature=space.features[i], value=value, kind=CausalKind.COUNTER)


def resp_for_contingency(
    space: ProductSpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    feature: FeatureRef,
    cont: Contingency
) -> float:
    """
    固定 contingency (Γ, w) 下 Fi 的 RESP 分数

    L(e*[Γ := w]) != L(e*) 时为 0，否则为
    (L(e') - E[L(e'[Fi := x])]) / (1 + |Γ|)。
    """
    i = space.source.feature_index(feature)
    if i in cont.gamma:
        raise PreconditionError(f"feature {space.features[i]!r} overlaps the contingency set")
    e_prime = substitute(e_star, dict(zip(cont.gamma, cont.w)))
    label = oracle.classify(e_prime)
    if label != oracle.classify(e_star):
        return 0.0
    return (label - product_expectation_over(space, oracle, e_prime, [i])) / (1 + len(cont.gamma))


def _oriented(oracle: ClassifierOracle, e_star: Entity, cfg: RespConfig) -> Tuple[ClassifierOracle, int]:
    label = oracle.classify(e_star)
    if label == 1:
        return oracle, label
    if not cfg.explain_zero:
        raise PreconditionError(
            "RESP explains the outcome L(e*) = 1; pass explain_zero to explain label 0 by symmetry"
        )
    return NegatedOracle(oracle), label


def resp_score(
    space: ProductSpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    feature: FeatureRef,
    cfg: RespConfig = RespConfig()
) -> CausalScore:
    """
    RESP 分数：最小非零 contingency 规模上的最大分数及其见证

    Args:
        space: 乘积空间
        oracle: 分类器
        e_star: 待解释实体（默认要求 L(e*) = 1）
        feature: 特征 Fi
        cfg: 搜索配置

    Returns:
        CausalScore；预算内没有非零 contingency 时 value=0 且 budget_exhausted
    """
    _require_product(space)
    i = space.source.feature_index(feature)
    oracle, _ = _oriented(_cached(oracle), e_star, cfg)
    others = [j for j in range(space.n) if j != i]
    name = space.features[i]

    for size in range(0, min(cfg.max_contingency_size, len(others)) + 1):
        best_value = 0.0
        best: Optional[Contingency] = None
        for gamma in itertools.combinations(others, size):
            for w in itertools.product(*(space.domains[j].values for j in gamma)):
                cont = Contingency(gamma=gamma, w=w)
                value = resp_for_contingency(space, oracle, e_star, i, cont)
                if value != 0 and (best is None or value > best_value):
                    best_value, best = value, cont
        if best is not None:
            logger.debug(f"[resp][{name}] score {best_value:.6f} at |Γ|={size}")
            return CausalScore(feature=name, value=best_value, kind=CausalKind.RESP, witness=best)

    logger.debug(f"[resp][{name}] no nonzero contingency within budget c={cfg.max_contingency_size}")
    return CausalScore(feature=name, value=0.0, kind=CausalKind.RESP, budget_exhausted=True)


def _to_feature_score(space: ProductSpace, score: CausalScore) -> FeatureScore:
    gamma = w = None
    if score.witness is not None:
        gamma = tuple(space.features[j] for j in score.witness.gamma)
        w = tuple(score.witness.w)
    return FeatureScore(
        feature=score.feature, value=score.value, gamma=gamma, w=w,
        budget_exhausted=score.budget_exhausted
    )


def explain_resp(
    space: ProductSpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    cfg: RespConfig = RespConfig()
) -> Explanation:
    """
    RESP 解释：所有特征的 RESP 分数按降序排列，0 分排在最后

    全部为 0 时标记 no_explanation。
    """
    cached = CachedOracle(oracle)
    label = cached.classify(e_star)
    scores: List[CausalScore] = [resp_score(space, cached, e_star, j, cfg) for j in range(space.n)]
    values = [s.value for s in scores]
    ranking = rank_features(space.features, values, tie_break=cfg.tie_break, zero_last=True)
    no_explanation = all(v == 0 for v in values)
    if no_explanation:
        logger.info(f"[resp] no explanation within c={cfg.max_contingency_size} for {e_star}")
    return Explanation(
        entity=tuple(e_star),
        label=label,
        kind=CausalKind.RESP.value,
        scores=[_to_feature_score(space, s) for s in scores],
        ranking=ranking,
        no_explanation=no_explanation,
        diagnostics={"oracle_probes": cached.probes}
    )


def explain_counter(
    space: ProductSpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    tie_break: str = TIE_BREAK_INDEX
) -> Explanation:
    """COUNTER 解释：所有特征的 COUNTER 分数"""
    cached = CachedOracle(oracle)
    label = cached.classify(e_star)
    scores = [counter_score(space, cached, e_star, j) for j in range(space.n)]
    values = [s.value for s in scores]
    return Explanation(
        entity=tuple(e_star),
        label=label,
        kind=CausalKind.COUNTER.value,
        scores=[FeatureScore(feature=s.feature, value=s.value) for s in scores],
        ranking=rank_features(space.features, values, tie_break=tie_break, zero_last=True),
        no_explanation=all(v == 0 for v in values),
        diagnostics={"oracle_probes": cached.probes}
    )
