"""
SHAP 分数

- shap_empirical: 经验分布上的深度优先子集枚举（带剪枝）
- shap_permutation_oracle: n! 排列枚举的暴力对照
- shap_levels / shap_product: 乘积空间上的分层分解与精确 SHAP
- shap_hardness_check: 单调 2CNF 计数恒等式校验
- kernel_shap: Shapley 核加权最小二乘近似
"""
import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.special import comb

import config
from classifier import ClassifierOracle, Monotone2CNF, check_cancelled, count_models
from errors import BudgetExceededError, PreconditionError, SingularDesignError, ZeroProbabilityError
from explanation import TIE_BREAK_INDEX, Explanation, FeatureScore, rank_features
from tabular import (
    Dataset, EmpiricalSpace, Entity, FeatureRef, ProbabilitySpace, ProductSpace,
    SpaceKind, add_entity as insert_entity, product_expectation_over
)

logger = logging.getLogger(__name__)

EXHAUSTIVE = "exhaustive"   # kernel_shap: 枚举全部 2^n - 2 个真子联盟

Number = Union[float, Fraction]


@dataclass
class ShapScore:
    feature: str
    value: float
    per_level: Optional[Tuple[float, ...]] = None


@dataclass
class CondExpTable:
    """
    DFS 过程中求得的条件期望 V(S) = E[L(e) | e_S = e*_S]

    键为特征下标位掩码；frontier 为剪枝叶子（V ∈ {0,1}，其超集继承同一 V）。
    """
    n: int
    values: Dict[int, Tuple[float, int]] = field(default_factory=dict)
    frontier: Set[int] = field(default_factory=set)

    def __contains__(self, bits: int) -> bool:
        return bits in self.values

    def __len__(self) -> int:
        return len(self.values)

    def resolve(self, bits: int) -> float:
        """V(S)；S 被剪掉时返回其路径上剪枝叶子的值"""
        hit = self.values.get(bits)
        if hit is not None:
            return hit[0]
        prefix = 0
        if prefix in self.frontier:
            return self.values[prefix][0]
        for f in range(self.n):
            if bits >> f & 1:
                prefix |= 1 << f
                if prefix in self.frontier:
                    return self.values[prefix][0]
        raise KeyError(f"subset {bits:#x} was neither explored nor pruned")


@dataclass
class ShapRun:
    scores: List[ShapScore]
    diagnostics: Dict[str, Any]
    table: Optional[CondExpTable] = None


def shapley_coefficients(n: int) -> Tuple[Fraction, ...]:
    """第 k 层系数 k!(n-k-1)!/n!，k = 0..n-1"""
    total = math.factorial(n)
    return tuple(
        Fraction(math.factorial(k) * math.factorial(n - k - 1), total)
        for k in range(n)
    )


def _popcount(bits: int) -> int:
    return bin(bits).count("1")


def _empirical_space(data: Union[Dataset, EmpiricalSpace]) -> EmpiricalSpace:
    if isinstance(data, EmpiricalSpace):
        return data
    if isinstance(data, Dataset):
        return EmpiricalSpace(data)
    raise PreconditionError("this SHAP variant is defined over the empirical distribution")


def _entity_mask(space: EmpiricalSpace, eq_masks: Sequence[np.ndarray]) -> np.ndarray:
    rows = np.ones(space.source.N, dtype=bool)
    for mask in eq_masks:
        rows &= mask
    return rows


def _prepare(
    data: Union[Dataset, EmpiricalSpace],
    e_star: Entity,
    add_entity: bool
) -> Tuple[EmpiricalSpace, Entity, List[np.ndarray], bool]:
    """
    确保 e* ∈ T

    Returns:
        (空间, 规范化的 e*, 每个特征的等值掩码, 是否插入了 e*)
    """
    space = _empirical_space(data)
    e_star = space.source.check_entity(e_star)
    eq_masks = space.equality_masks(e_star)
    if _entity_mask(space, eq_masks).any():
        return space, e_star, eq_masks, False
    if not add_entity:
        raise ZeroProbabilityError(
            f"conditioning on zero-probability event: entity {e_star} does not occur in the dataset "
            f"(use --add-entity to insert it with count 1)"
        )
    logger.info(f"[shap] inserting entity {e_star} into the dataset")
    space = EmpiricalSpace(insert_entity(space.source, e_star))
    return space, e_star, space.equality_masks(e_star), True


# =====================================================
# 经验分布：带剪枝的 DFS
# =====================================================

def _check_max_level(max_level: Optional[int], n: int) -> int:
    if max_level is None:
        return n - 1
    if max_level < 0:
        raise PreconditionError(f"max_level must be >= 0, got {max_level}")
    return min(max_level, n - 1)


def build_cond_exp_table(
    space: EmpiricalSpace,
    labels: np.ndarray,
    eq_masks: Sequence[np.ndarray],
    max_level: Optional[int] = None,
    cancel: Optional[threading.Event] = None
) -> CondExpTable:
    """
    深度优先枚举子集并记录 V(S)

    每个节点只向下标更大的特征分支，每个子集至多访问一次；
    V ∈ {0,1}（包括 V == L(e*)）时停止扩展。
    给定 max_level = ℓ 时只枚举 |S| <= ℓ+1 的子集（足以求出第 0..ℓ 层）。
    """
    n = space.n
    depth_limit = _check_max_level(max_level, n) + 1
    table = CondExpTable(n=n)

    def visit(bits: int, rows: np.ndarray, start: int, depth: int) -> None:
        check_cancelled(cancel, "shap")
        value, match = space.expectation_on_mask(labels, rows)
        table.values[bits] = (value, match)
        if start < n and (value == 0.0 or value == 1.0):
            table.frontier.add(bits)
            return
        if depth == depth_limit:
            return
        for f in range(start, n):
            visit(bits | (1 << f), rows & eq_masks[f], f + 1, depth + 1)

    visit(0, np.ones(space.source.N, dtype=bool), 0, 0)
    return table


def _scores_from_table(
    features: Sequence[str],
    table: CondExpTable,
    levels: bool,
    max_level: Optional[int] = None
) -> List[ShapScore]:
    n = table.n
    top = _check_max_level(max_level, n)
    coefs = [float(c) for c in shapley_coefficients(n)]
    level_sums = [[0.0] * n for _ in range(n)]
    for bits, (value, _) in table.values.items():
        k = _popcount(bits)
        if k > top:
            continue
        for f in range(n):
            if bits >> f & 1:
                continue
            delta = table.resolve(bits | (1 << f)) - value
            if delta:
                level_sums[f][k] += delta
    scores = []
    for f in range(n):
        per_level = tuple(coefs[k] * level_sums[f][k] for k in range(n))
        scores.append(ShapScore(
            feature=features[f],
            value=math.fsum(per_level),
            per_level=per_level if levels else None
        ))
    return scores


def shap_empirical_run(
    data: Union[Dataset, EmpiricalSpace],
    oracle: ClassifierOracle,
    e_star: Entity,
    add_entity: bool = False,
    levels: bool = False,
    max_level: Optional[int] = None,
    cancel: Optional[threading.Event] = None
) -> ShapRun:
    """
    经验分布上的精确 SHAP 及诊断信息

    Args:
        data: 数据集或经验空间（复用空间可共享行标签缓存）
        oracle: 分类器
        e_star: 待解释实体
        add_entity: e* 不在 T 中时以计数 1 插入，否则报错
        levels: 是否保留分层贡献
        max_level: 只累加第 0..max_level 层（近似 SHAP，None 为精确值）
        cancel: 取消事件，每访问一个子集检查一次

    Returns:
        ShapRun
    """
    space, e_star, eq_masks, added = _prepare(data, e_star, add_entity)
    labels = space.labels(oracle)
    table = build_cond_exp_table(space, labels, eq_masks, max_level=max_level, cancel=cancel)
    scores = _scores_from_table(space.features, table, levels, max_level)
    diagnostics = {
        "subsets_visited": len(table.values),
        "subsets_pruned": len(table.frontier),
        "oracle_probes": space.source.N,
        "skipped_coalitions": 0,
    }
    if max_level is not None:
        diagnostics["max_level"] = _check_max_level(max_level, space.n)
    if added:
        diagnostics["entity_added"] = True
    logger.debug(
        f"[shap] visited {len(table.values)} subsets, pruned at {len(table.frontier)} of {2 ** space.n}"
    )
    return ShapRun(scores=scores, diagnostics=diagnostics, table=table)


def shap_empirical(
    data: Union[Dataset, EmpiricalSpace],
    oracle: ClassifierOracle,
    e_star: Entity,
    add_entity: bool = False,
    levels: bool = False,
    max_level: Optional[int] = None
) -> List[ShapScore]:
    """经验分布上的精确 SHAP 分数（给定 max_level 时为截断近似）"""
    return shap_empirical_run(data, oracle, e_star, add_entity, levels, max_level).scores


# =====================================================
# 排列枚举对照
# =====================================================

def _exact_value_function(space: ProbabilitySpace, oracle: ClassifierOracle, e_star: Entity) -> Callable[[int], Fraction]:
    n = space.n
    cache: Dict[int, Fraction] = {}

    if space.kind is SpaceKind.EMPIRICAL:
        labels = space.labels(oracle)
        eq_masks = space.equality_masks(e_star)
        counts = space.source.counts

        def value(bits: int) -> Fraction:
            rows = np.ones(space.source.N, dtype=bool)
            for f in range(n):
                if bits >> f & 1:
                    rows &= eq_masks[f]
            match = int(counts[rows].sum())
            if match == 0:
                raise ZeroProbabilityError(
                    f"conditioning on zero-probability event: subset {bits:#x} of {e_star}"
                )
            return Fraction(int((counts[rows] * labels[rows]).sum()), match)
    else:
        if space.joint_size > config.PRODUCT_JOINT_LIMIT:
            raise BudgetExceededError(
                f"product joint has {space.joint_size} entities (limit {config.PRODUCT_JOINT_LIMIT})"
            )

        def value(bits: int) -> Fraction:
            vary = [f for f in range(n) if not bits >> f & 1]
            return product_expectation_over(space, oracle, e_star, vary, exact=True)

    def cached(bits: int) -> Fraction:
        hit = cache.get(bits)
        if hit is None:
            hit = cache[bits] = value(bits)
        return hit

    return cached


def shap_permutation_oracle(space: ProbabilitySpace, oracle: ClassifierOracle, e_star: Entity) -> List[ShapScore]:
    """
    SHAP(e*, Fi) = (1/n!) Σ_π c(e*, Fi, π)，有理数精确累加

    仅用作测试对照，n 不超过 PERMUTATION_MAX_FEATURES。
    """
    n = space.n
    if n > config.PERMUTATION_MAX_FEATURES:
        raise BudgetExceededError(f"permutation oracle limited to n <= {config.PERMUTATION_MAX_FEATURES}, got {n}")
    e_star = space.source.check_entity(e_star)
    value = _exact_value_function(space, oracle, e_star)
    totals = [Fraction(0)] * n
    for perm in itertools.permutations(range(n)):
        bits = 0
        before = value(0)
        for f in perm:
            bits |= 1 << f
            after = value(bits)
            totals[f] += after - before
            before = after
    norm = math.factorial(n)
    return [ShapScore(feature=space.features[f], value=float(totals[f] / norm)) for f in range(n)]


# =====================================================
# 乘积空间
# =====================================================

def product_value_table(
    space: ProductSpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    exact: bool = False
) -> List[Number]:
    """
    乘积空间上每个子集 S 的 V(S) = E[L(e*_S, X_{F-S})]，按位掩码下标

    exact=True 且 e* 的每个取值都在 Di 中时，只枚举一次联合分布：
    G[S] = Σ_{x 与 e* 在 S 上一致} L(x)p(x)，经超集求和得到，再除以 Π_{i∈S} p(e*_i)。
    """
    if space.kind is not SpaceKind.PRODUCT:
        raise PreconditionError("product_value_table requires a product space")
    n = space.n
    if space.joint_size > config.PRODUCT_JOINT_LIMIT:
        raise BudgetExceededError(
            f"product joint has {space.joint_size} entities (limit {config.PRODUCT_JOINT_LIMIT})"
        )
    in_domain = all(e_star[j] in space.domains[j].values for j in range(n))

    if exact and in_domain:
        marginals = [dict(zip(d.values, d.exact_marginals())) for d in space.domains]
        joint = list(space.iter_joint())
        labels = oracle.classify_many(joint)
        g: List[Fraction] = [Fraction(0)] * (1 << n)
        for x, label in zip(joint, labels):
            if not label:
                continue
            agree = 0
            p = Fraction(1)
            for j in range(n):
                p *= marginals[j][x[j]]
                if x[j] == e_star[j]:
                    agree |= 1 << j
            g[agree] += p
        for j in range(n):
            bit = 1 << j
            for bits in range(1 << n):
                if not bits & bit:
                    g[bits] += g[bits | bit]
        star_p = [marginals[j][e_star[j]] for j in range(n)]
        values: List[Number] = []
        for bits in range(1 << n):
            denom = Fraction(1)
            for j in range(n):
                if bits >> j & 1:
                    denom *= star_p[j]
            values.append(g[bits] / denom)
        return values

    return [
        product_expectation_over(space, oracle, e_star, [f for f in range(n) if not bits >> f & 1], exact=exact)
        for bits in range(1 << n)
    ]


def _levels_from_values(values: Sequence[Number], n: int, exact: bool) -> List[List[Number]]:
    coefs: Sequence[Number] = shapley_coefficients(n)
    if not exact:
        coefs = [float(c) for c in coefs]
    zero: Number = Fraction(0) if exact else 0.0
    sums = [[zero] * n for _ in range(n)]
    for bits in range(1 << n):
        k = _popcount(bits)
        for f in range(n):
            if not bits >> f & 1:
                sums[f][k] += values[bits | (1 << f)] - values[bits]
    return [[coefs[k] * sums[f][k] for k in range(n)] for f in range(n)]


def shap_product(
    space: ProductSpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    levels: bool = False
) -> List[ShapScore]:
    """小规模乘积空间上的精确 SHAP（联合分布暴力枚举）"""
    values = product_value_table(space, oracle, e_star)
    per_feature = _levels_from_values(values, space.n, exact=False)
    return [
        ShapScore(
            feature=space.features[f],
            value=math.fsum(per_feature[f]),
            per_level=tuple(per_feature[f]) if levels else None
        )
        for f in range(space.n)
    ]


def shap_levels(
    space: ProbabilitySpace,
    oracle: ClassifierOracle,
    e_star: Entity,
    feature: FeatureRef
) -> List[float]:
    """
    SHAP(e*, Fi, ℓ)，ℓ = 0..n-1

    Returns:
        长度为 n 的分层贡献，和为 SHAP(e*, Fi)
    """
    i = space.source.feature_index(feature)
    if space.kind is SpaceKind.EMPIRICAL:
        run = shap_empirical_run(space, oracle, e_star, levels=True)
        return list(run.scores[i].per_level)
    values = product_value_table(space, oracle, e_star)
    return [float(v) for v in _levels_from_values(values, space.n, exact=False)[i]]


def shap_hardness_check(f: Monotone2CNF) -> Tuple[Fraction, Fraction]:
    """
    计数恒等式 E[L] = L(e*) - Σ_i SHAP(e*, Fi)

    在双行数据集 {0^n, 1^n} 的乘积空间（均匀分布）上取 e* = 1^n。

    Returns:
        (1 - Σ SHAP, #L / 2^n)，均为有理数
    """
    n = f.n
    if n > config.HARDNESS_MAX_VARS:
        raise BudgetExceededError(f"hardness check limited to n <= {config.HARDNESS_MAX_VARS}, got {n}")
    features = [f"F{j + 1}" for j in range(n)]
    ds = Dataset.from_rows(features, [(0,) * n, (1,) * n])
    space = ProductSpace(ds)
    e_star = (1,) * n
    values = product_value_table(space, f, e_star, exact=True)
    per_feature = _levels_from_values(values, n, exact=True)
    total = sum((sum(levels, Fraction(0)) for levels in per_feature), Fraction(0))
    lhs = 1 - total
    rhs = Fraction(count_models(f), 2 ** n)
    return lhs, rhs


# =====================================================
# KernelSHAP
# =====================================================

def shapley_kernel_weight(n: int, size: int) -> float:
    """π(S) = (n-1) / (C(n,|S|)·|S|·(n-|S|))"""
    if not 0 < size < n:
        raise PreconditionError(f"kernel weight undefined for |S|={size}, n={n}")
    return (n - 1) / (comb(n, size, exact=True) * size * (n - size))


def _coalitions(n: int, n_samples: Union[int, str], seed: Optional[int]) -> List[Tuple[int, float]]:
    """(联合位掩码, 权重) 列表，按首次出现顺序"""
    if n_samples == EXHAUSTIVE:
        if n > config.KERNEL_EXHAUSTIVE_MAX_FEATURES:
            raise BudgetExceededError(
                f"exhaustive KernelSHAP limited to n <= {config.KERNEL_EXHAUSTIVE_MAX_FEATURES}, got {n}"
            )
        return [(bits, shapley_kernel_weight(n, _popcount(bits))) for bits in range(1, (1 << n) - 1)]

    n_samples = int(n_samples)
    if n_samples < n + 2:
        raise PreconditionError(f"kernel_shap needs n_samples >= n+2 = {n + 2}, got {n_samples}")
    rng = np.random.default_rng(seed)
    sizes = np.arange(1, n)
    size_weights = np.array([(n - 1) / (s * (n - s)) for s in sizes])
    size_weights /= size_weights.sum()
    tally: Dict[int, int] = {}
    for s in rng.choice(sizes, size=n_samples, p=size_weights):
        members = rng.choice(n, size=int(s), replace=False)
        bits = 0
        for j in members:
            bits |= 1 << int(j)
        tally[bits] = tally.get(bits, 0) + 1
    return [(bits, float(count)) for bits, count in tally.items()]


def kernel_shap_run(
    data: Union[Dataset, EmpiricalSpace],
    oracle: ClassifierOracle,
    e_star: Entity,
    n_samples: Union[int, str] = EXHAUSTIVE,
    seed: Optional[int] = config.DEFAULT_SEED,
    add_entity: bool = False
) -> ShapRun:
    """
    KernelSHAP：带效率约束的加权最小二乘

    值函数 v(S) = E[L | e_S = e*_S]（经验分布），v(∅) 与 v(F) 作为硬约束；
    约束通过消去最后一个特征的系数处理。匹配为空的联合跳过并计数。

    Args:
        data: 数据集或经验空间
        oracle: 分类器
        e_star: 待解释实体
        n_samples: 采样次数，或 EXHAUSTIVE
        seed: 采样随机种子
        add_entity: e* 不在 T 中时插入

    Returns:
        ShapRun（table 为 None）
    """
    space = _empirical_space(data)
    n = space.n
    if n < 2:
        raise PreconditionError("kernel_shap needs at least two features")
    coalitions = _coalitions(n, n_samples, seed)
    space, e_star, eq_masks, added = _prepare(space, e_star, add_entity)
    labels = space.labels(oracle)

    def v(bits: int) -> float:
        rows = np.ones(space.source.N, dtype=bool)
        for j in range(n):
            if bits >> j & 1:
                rows &= eq_masks[j]
        return space.expectation_on_mask(labels, rows)[0]

    v_empty = v(0)
    delta = v((1 << n) - 1) - v_empty

    rows_z: List[List[float]] = []
    targets: List[float] = []
    weights: List[float] = []
    skipped = 0
    for bits, weight in coalitions:
        try:
            value = v(bits)
        except ZeroProbabilityError:
            skipped += 1
            continue
        rows_z.append([float(bits >> j & 1) for j in range(n)])
        targets.append(value - v_empty)
        weights.append(weight)
    if skipped:
        logger.info(f"[kernelshap] skipped {skipped} coalitions with empty match support")
    if not rows_z:
        raise SingularDesignError("no coalition with nonempty match support")

    z = np.asarray(rows_z)
    y = np.asarray(targets)
    w = np.asarray(weights)
    last = n - 1
    x = z[:, :last] - z[:, [last]]
    y_adj = y - z[:, last] * delta
    xtw = x.T * w
    gram = xtw @ x
    if np.linalg.matrix_rank(gram) < last:
        raise SingularDesignError(
            f"KernelSHAP design matrix is singular ({len(rows_z)} coalitions for {n} features)"
        )
    try:
        phi_head = np.linalg.solve(gram, xtw @ y_adj)
    except np.linalg.LinAlgError as e:
        raise SingularDesignError(f"KernelSHAP design matrix is singular: {e}") from e
    phi = np.append(phi_head, delta - phi_head.sum())

    scores = [ShapScore(feature=space.features[j], value=float(phi[j])) for j in range(n)]
    diagnostics = {
        "subsets_visited": len(rows_z),
        "subsets_pruned": 0,
        "oracle_probes": space.source.N,
        "skipped_coalitions": skipped,
    }
    if added:
        diagnostics["entity_added"] = True
    return ShapRun(scores=scores, diagnostics=diagnostics)


def kernel_shap(
    data: Union[Dataset, EmpiricalSpace],
    oracle: ClassifierOracle,
    e_star: Entity,
    n_samples: Union[int, str] = EXHAUSTIVE,
    seed: Optional[int] = config.DEFAULT_SEED,
    add_entity: bool = False
) -> List[ShapScore]:
    return kernel_shap_run(data, oracle, e_star, n_samples, seed, add_entity).scores


# =====================================================
# 解释信封
# =====================================================

def _envelope(
    kind: str,
    features: Sequence[str],
    e_star: Entity,
    label: int,
    run: ShapRun,
    magnitude: bool,
    tie_break: str
) -> Explanation:
    values = [s.value for s in run.scores]
    return Explanation(
        entity=tuple(e_star),
        label=label,
        kind=kind,
        scores=[FeatureScore(feature=s.feature, value=s.value, per_level=s.per_level) for s in run.scores],
        ranking=rank_features(features, values, tie_break=tie_break, magnitude=magnitude),
        no_explanation=all(v == 0 for v in values),
        diagnostics=dict(run.diagnostics),
        extra={"ranking_order": "magnitude" if magnitude else "signed"}
    )


def explain_shap(
    data: Union[Dataset, EmpiricalSpace],
    oracle: ClassifierOracle,
    e_star: Entity,
    add_entity: bool = False,
    levels: bool = False,
    magnitude: bool = False,
    tie_break: str = TIE_BREAK_INDEX,
    max_level: Optional[int] = None,
    cancel: Optional[threading.Event] = None
) -> Explanation:
    """SHAP 解释（经验分布），默认按带符号分数降序排名"""
    run = shap_empirical_run(
        data, oracle, e_star, add_entity=add_entity, levels=levels, max_level=max_level, cancel=cancel
    )
    space = _empirical_space(data)
    e_star = space.source.check_entity(e_star)
    return _envelope("shap", space.features, e_star, oracle.classify(e_star), run, magnitude, tie_break)


def explain_kernel_shap(
    data: Union[Dataset, EmpiricalSpace],
    oracle: ClassifierOracle,
    e_star: Entity,
    n_samples: Union[int, str] = EXHAUSTIVE,
    seed: Optional[int] = config.DEFAULT_SEED,
    add_entity: bool = False,
    magnitude: bool = False,
    tie_break: str = TIE_BREAK_INDEX
) -> Explanation:
    """KernelSHAP 解释"""
    run = kernel_shap_run(data, oracle, e_star, n_samples, seed, add_entity)
    space = _empirical_space(data)
    e_star = space.source.check_entity(e_star)
    return _envelope("kernelshap", space.features, e_star, oracle.classify(e_star), run, magnitude, tie_break)
