"""
解释引擎异常定义

库代码只负责抛出异常，退出码映射统一在 main.py 中完成。
"""


class ExplainError(Exception):
    """所有解释引擎异常的基类"""


class ConfigError(ExplainError, ValueError):
    """运行配置错误"""


class DatasetLoadError(ExplainError, ValueError):
    """数据集文件无法解析"""

    def __init__(self, path, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class UnknownFeatureError(ExplainError, KeyError):
    """特征名不存在"""

    def __init__(self, feature):
        self.feature = feature
        super().__init__(feature)

    def __str__(self) -> str:
        return f"unknown feature: {self.feature!r}"


class BucketCoverageError(ExplainError, ValueError):
    """特征值不属于任何分桶"""

    def __init__(self, feature: str, value):
        self.feature = feature
        self.value = value
        super().__init__(f"value {value!r} of feature {feature!r} is not covered by any bucket")


class ZeroProbabilityError(ExplainError, ValueError):
    """在零概率事件上做条件期望"""


class BudgetExceededError(ExplainError, ValueError):
    """枚举规模超过预算"""


class PreconditionError(ExplainError, ValueError):
    """操作前置条件不满足"""


class SingularDesignError(ExplainError, ArithmeticError):
    """KernelSHAP 设计矩阵奇异"""


class MisalignedInputsError(ExplainError, ValueError):
    """两个解释集合的实体不对齐"""


class OracleError(ExplainError, RuntimeError):
    """分类器调用失败"""


class OracleTimeoutError(OracleError):
    """分类器调用超时"""


class RunCancelledError(ExplainError):
    """运行已被取消（整次运行超时）"""
