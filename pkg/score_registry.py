"""
分数类型注册表

定义所有可计算的解释分数及其前置要求
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional


class ScoreKind(Enum):
    """分数类型"""
    COUNTER = "counter"         # 期望反事实因果
    RESP = "resp"               # 责任度加权的反事实
    SHAP = "shap"               # 经验分布上的精确 Shapley 值
    KERNELSHAP = "kernelshap"   # Shapley 核加权最小二乘近似
    FICO = "fico"               # 子量表模型白盒解释


@dataclass
class ScoreConfig:
    """分数配置"""
    kind: ScoreKind                         # 分数类型
    description: str                        # 描述
    space: str                              # 概率空间: product / empirical / model
    requires_label_one: bool = False        # 是否要求 L(e*) = 1
    requires_subscale_model: bool = False   # 是否要求子量表模型
    needs_dataset: bool = True              # 是否需要数据集
    randomized: bool = False                # 是否使用随机种子
    enabled: bool = True                    # 是否启用

    @property
    def name(self) -> str:
        return self.kind.value


ALL_SCORES: List[ScoreConfig] = [
    ScoreConfig(
        kind=ScoreKind.COUNTER,
        description="expected counterfactual change when the feature is resampled",
        space="product",
    ),
    ScoreConfig(
        kind=ScoreKind.RESP,
        description="responsibility-weighted counterfactual over minimal contingencies",
        space="product",
        requires_label_one=True,
    ),
    ScoreConfig(
        kind=ScoreKind.SHAP,
        description="exact Shapley value, pruned subset enumeration",
        space="empirical",
    ),
    ScoreConfig(
        kind=ScoreKind.KERNELSHAP,
        description="Shapley-kernel weighted least squares",
        space="empirical",
        randomized=True,
    ),
    ScoreConfig(
        kind=ScoreKind.FICO,
        description="two-layer subscale white-box ranking",
        space="model",
        requires_subscale_model=True,
        needs_dataset=False,
    ),
]

SCORE_REGISTRY: Dict[str, ScoreConfig] = {s.name: s for s in ALL_SCORES}


def get_score_config(name: str) -> Optional[ScoreConfig]:
    """获取分数配置"""
    return SCORE_REGISTRY.get(name)


def get_scores_by_space(space: str) -> List[ScoreConfig]:
    """按概率空间获取分数列表"""
    return [s for s in ALL_SCORES if s.space == space]


def get_enabled_scores() -> List[ScoreConfig]:
    """获取所有启用的分数"""
    return [s for s in ALL_SCORES if s.enabled]


def get_all_spaces() -> List[str]:
    """获取所有概率空间"""
    return sorted(set(s.space for s in ALL_SCORES))
