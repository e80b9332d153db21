"""
自检脚本 - 在随机实例与内置样例上验证各分数的性质

此脚本会:
1. 检查 SHAP 效率恒等式、DFS 与排列枚举的一致性、分层命题
2. 检查单调 2CNF 计数恒等式
3. 用独立穷举对照 RESP，并核对稀疏性上界
4. 核对 FICO 样例模型的全部子量表分与解释排序
5. 检查 KernelSHAP 穷举模式与分桶
6. 生成验证报告（JSON，不含时间戳）
"""
import itertools
import json
import logging
import math
import sys
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from causal_scores import RespConfig, counter_score, resp_score
from classifier import ClassifierOracle, FunctionClassifier, SubscaleModel, load_model
from errors import ConfigError, ExplainError
from fico_whitebox import fico_explain
from instances import binary_product_instance, full_support_instance, random_instance, random_monotone_2cnf
from shapley_scores import (
    EXHAUSTIVE, kernel_shap, shap_empirical, shap_hardness_check, shap_levels, shap_permutation_oracle
)
from tabular import (
    BucketKind, BucketSpec, Dataset, EmpiricalSpace, Entity, ProductSpace,
    bucketize, domain, load_entities, one_hot, parse_bucket_spec, substitute
)

logger = logging.getLogger(__name__)

# =====================================================
# FICO 样例实体的期望值
# =====================================================
FICO_SAMPLE_SUBSCALE_SCORES = {
    "ExternalRiskEstimate": 1.2934,
    "TradeOpenTime": 1.1842,
    "NumSatisfactoryTrades": 0.9729,
    "TradeFrequency": 0.1588,
    "Delinquency": 1.7425,
    "Installment": 0.4817,
    "Inquiry": 0.9529,
    "RevolvingBalance": 1.2505,
    "Utilization": 0.6406,
    "TradeWBalance": 0.1808,
}
FICO_SAMPLE_SUBSCALE_RISKS = {
    "ExternalRiskEstimate": 0.8262,
    "TradeOpenTime": 0.4690,
    "NumSatisfactoryTrades": 0.4513,
    "TradeFrequency": 0.4425,
    "Delinquency": 0.6847,
    "Installment": 0.5273,
    "Inquiry": 0.3172,
    "RevolvingBalance": 0.6500,
    "Utilization": 0.6490,
    "TradeWBalance": 0.6113,
}
FICO_SAMPLE_GLOBAL_RISK = 0.6146
FICO_SAMPLE_TOLERANCE = 5e-4
FICO_SAMPLE_TOP_SUBSCALES = ["Delinquency", "ExternalRiskEstimate"]
FICO_SAMPLE_FINAL_RANKING = ["MaxDelq2PublicRecLast12M", "PercentTradesNeverDelq", "ExternalRiskEstimate"]


def load_fico_sample() -> Tuple[SubscaleModel, Entity]:
    """读取 FICO 样例模型与实体（模型按实体文件的列顺序绑定）"""
    header, entities = load_entities(config.FICO_ENTITY_PATH)
    model = load_model(config.FICO_MODEL_PATH).with_feature_order(header)
    entity = entities[0]
    return model, entity


def resp_worked_example() -> Tuple[ProductSpace, ClassifierOracle, Entity]:
    """L = (F1 ∧ F2) ∨ F3，均匀二值乘积空间，e* = (1,1,1)"""
    ds = Dataset.from_rows(["F1", "F2", "F3"], [(0, 0, 0), (1, 1, 1)])
    oracle = FunctionClassifier(lambda e: (e[0] == 1 and e[1] == 1) or e[2] == 1, arity=3, name="worked-example")
    return ProductSpace(ds), oracle, (1, 1, 1)


# =====================================================
# 独立对照
# =====================================================

def empirical_mean_label(ds: Dataset, oracle: ClassifierOracle) -> float:
    """E[L(e)]，e 服从经验分布"""
    labels = oracle.classify_many(ds.entities)
    return math.fsum(c * l for c, l in zip(ds.counts.tolist(), labels)) / ds.M


def brute_force_resp(
    ds: Dataset,
    oracle: ClassifierOracle,
    e_star: Entity,
    feature: int,
    max_size: int
) -> Tuple[float, Optional[int]]:
    """
    枚举所有 |Γ| <= max_size 的 (Γ, w)，按定义直接计算 RESP

    Returns:
        (分数, 取得分数的最小 |Γ|)；没有非零 contingency 时为 (0.0, None)
    """
    doms = [domain(ds, j) for j in range(ds.n)]
    label = oracle.classify(e_star)
    others = [j for j in range(ds.n) if j != feature]
    found: Dict[int, Fraction] = {}
    for size in range(0, min(max_size, len(others)) + 1):
        for gamma in itertools.combinations(others, size):
            for w in itertools.product(*(doms[j].values for j in gamma)):
                e_prime = substitute(e_star, dict(zip(gamma, w)))
                if oracle.classify(e_prime) != label:
                    continue
                expected = sum(
                    (p * oracle.classify(substitute(e_prime, {feature: x}))
                     for x, p in zip(doms[feature].values, doms[feature].exact_marginals())),
                    Fraction(0)
                )
                score = (label - expected) / (1 + size)
                if score != 0:
                    found[size] = max(found.get(size, score), score)
    if not found:
        return 0.0, None
    size = min(found)
    return float(found[size]), size


def hamming_reachable(rows: np.ndarray, entities: np.ndarray, radius: int) -> np.ndarray:
    """每个实体是否与 rows 中某一行的 Hamming 距离不超过 radius"""
    distances = (entities[:, None, :] != rows[None, :, :]).sum(axis=2)
    return (distances <= radius).any(axis=1)


def sparsity_bound(N: int, domain_sizes: Sequence[int], c: int) -> float:
    """N (1 + Σ|Dj|)^(c+1) / Π|Dj|"""
    return N * (1 + sum(domain_sizes)) ** (c + 1) / math.prod(domain_sizes)


class SelfTestRunner:
    """自检运行器"""

    def __init__(self, seed: int = config.DEFAULT_SEED):
        self.seed = seed
        self.results: Dict[str, List[Dict[str, Any]]] = {
            "passed": [],
            "failed": [],
        }
        self.checks: List[Tuple[str, str, Callable[[], Dict[str, Any]]]] = [
            ("efficiency", "Σ SHAP = L(e*) - E[L]", self.check_efficiency),
            ("dfs_vs_permutation", "pruned DFS equals n! enumeration", self.check_dfs_vs_permutation),
            ("counter_level", "n · SHAP level n-1 = COUNTER", self.check_counter_level),
            ("model_counting", "1 - Σ SHAP = #L / 2^n on monotone 2CNF", self.check_model_counting),
            ("resp_oracle", "RESP equals exhaustive enumeration", self.check_resp_oracle),
            ("resp_sparsity", "empirical RESP support under the sparsity bound", self.check_resp_sparsity),
            ("fico_sample", "FICO fixture subscale scores and ranking", self.check_fico_sample),
            ("kernel_exhaustive", "exhaustive KernelSHAP equals SHAP", self.check_kernel_exhaustive),
            ("bucketization", "equi-depth populations and one-hot", self.check_bucketization),
        ]

    # -------------------------------------------------
    # 各项检查：返回 {"cases", "max_error", "message"}，失败时 "ok": False
    # -------------------------------------------------

    def check_efficiency(self, count: int = 100) -> Dict[str, Any]:
        worst = 0.0
        for i in range(count):
            inst = random_instance(self.seed + i)
            scores = shap_empirical(inst.dataset, inst.oracle, inst.e_star)
            target = inst.oracle.classify(inst.e_star) - empirical_mean_label(inst.dataset, inst.oracle)
            worst = max(worst, abs(math.fsum(s.value for s in scores) - target))
        return {"ok": worst <= 1e-9, "cases": count, "max_error": worst}

    def check_dfs_vs_permutation(self, count: int = 50) -> Dict[str, Any]:
        worst = 0.0
        for i in range(count):
            inst = random_instance(self.seed + 1000 + i, max_features=7)
            fast = shap_empirical(inst.dataset, inst.oracle, inst.e_star)
            slow = shap_permutation_oracle(EmpiricalSpace(inst.dataset), inst.oracle, inst.e_star)
            worst = max(worst, max(abs(a.value - b.value) for a, b in zip(fast, slow)))
        return {"ok": worst <= 1e-12, "cases": count, "max_error": worst}

    def check_counter_level(self, count: int = 50) -> Dict[str, Any]:
        worst = 0.0
        rng = np.random.default_rng(self.seed)
        for i in range(count):
            n = int(rng.integers(1, 7))
            ds, oracle, e_star = binary_product_instance(self.seed + 2000 + i, n, monotone=bool(i % 2))
            space = ProductSpace(ds)
            for j in range(n):
                top = shap_levels(space, oracle, e_star, j)[n - 1] * n
                counter = counter_score(space, oracle, e_star, j).value
                worst = max(worst, abs(top - counter))
        return {"ok": worst <= 1e-12, "cases": count, "max_error": worst}

    def check_model_counting(self, count: int = 30) -> Dict[str, Any]:
        mismatches = 0
        rng = np.random.default_rng(self.seed + 3000)
        for _ in range(count):
            n = int(rng.integers(1, config.HARDNESS_MAX_VARS + 1))
            lhs, rhs = shap_hardness_check(random_monotone_2cnf(rng, n))
            if lhs != rhs:
                mismatches += 1
        return {"ok": mismatches == 0, "cases": count, "max_error": float(mismatches)}

    def check_resp_oracle(self, count: int = 50) -> Dict[str, Any]:
        space, oracle, e_star = resp_worked_example()
        worked = resp_score(space, oracle, e_star, "F1", RespConfig(max_contingency_size=1))
        worked_ok = (
            worked.value == 0.25
            and worked.witness is not None
            and [space.features[j] for j in worked.witness.gamma] == ["F3"]
        )

        worst = 0.0
        size_mismatches = 0
        cases = 0
        seed = self.seed + 4000
        cfg = RespConfig(max_contingency_size=2)
        while cases < count:
            inst = random_instance(seed, max_features=5, max_domain=3, max_rows=32)
            seed += 1
            if inst.oracle.classify(inst.e_star) != 1:
                continue
            cases += 1
            space = ProductSpace(inst.dataset)
            for j in range(space.n):
                got = resp_score(space, inst.oracle, inst.e_star, j, cfg)
                want, want_size = brute_force_resp(inst.dataset, inst.oracle, inst.e_star, j, 2)
                got_size = len(got.witness.gamma) if got.witness is not None else None
                worst = max(worst, abs(got.value - want))
                if got_size != want_size:
                    size_mismatches += 1
        return {
            "ok": worked_ok and worst <= 1e-12 and size_mismatches == 0,
            "cases": cases,
            "max_error": worst,
            "message": f"worked example {'ok' if worked_ok else 'wrong'}: {worked.value}; "
                       f"{size_mismatches} minimal-|Γ| mismatches",
        }

    def check_resp_sparsity(self, samples: int = 10_000, seeds: int = 5) -> Dict[str, Any]:
        n, size, N, c = 10, 4, 100, 1
        bound = sparsity_bound(N, [size] * n, c)
        worst_rate = 0.0
        for s in range(seeds):
            rng = np.random.default_rng(self.seed + 5000 + s)
            rows = rng.integers(0, size, size=(N, n))
            entities = rng.integers(0, size, size=(samples, n))
            rate = float(hamming_reachable(rows, entities, c + 1).mean())
            worst_rate = max(worst_rate, rate)
        return {
            "ok": worst_rate <= bound,
            "cases": samples * seeds,
            "max_error": worst_rate,
            "message": f"observed {worst_rate:.4f} <= bound {bound:.4f}",
        }

    def check_fico_sample(self) -> Dict[str, Any]:
        model, entity = load_fico_sample()
        run = model.run(entity)
        worst = max(abs(run.subscale_scores[k] - v) for k, v in FICO_SAMPLE_SUBSCALE_SCORES.items())
        worst = max(worst, abs(run.global_risk - FICO_SAMPLE_GLOBAL_RISK))
        fx = fico_explain(model, entity, M=2, K=2)
        top = [name for name, _ in fx.subscale_ranking]
        ok = worst <= FICO_SAMPLE_TOLERANCE and top == FICO_SAMPLE_TOP_SUBSCALES and fx.final_ranking == FICO_SAMPLE_FINAL_RANKING
        return {"ok": ok, "cases": 1, "max_error": worst, "message": f"ranking {fx.final_ranking}"}

    def check_kernel_exhaustive(self, count: int = 20) -> Dict[str, Any]:
        worst = 0.0
        rng = np.random.default_rng(self.seed + 6000)
        for i in range(count):
            n = int(rng.integers(2, 7))
            inst = full_support_instance(self.seed + 6000 + i, n, copies=3)
            approx = kernel_shap(inst.dataset, inst.oracle, inst.e_star, n_samples=EXHAUSTIVE)
            exact = shap_empirical(inst.dataset, inst.oracle, inst.e_star)
            worst = max(worst, max(abs(a.value - b.value) for a, b in zip(approx, exact)))
        return {"ok": worst <= 1e-6, "cases": count, "max_error": worst}

    def check_bucketization(self, columns: int = 5) -> Dict[str, Any]:
        worst_spread = 0
        rng = np.random.default_rng(self.seed + 7000)
        for _ in range(columns):
            rows = int(rng.integers(20, 200))
            ds = Dataset.from_rows(["x"], [(float(v),) for v in rng.standard_normal(rows)])
            for k in (1, 2, 5, 10):
                _, encoding = bucketize(ds, [BucketSpec(feature="x", kind=BucketKind.EQUI_DEPTH, k=k)])
                spec = encoding["x"]
                index = [spec.bucket_index(v) for v in ds.column(0).tolist()]
                population = np.bincount(index, weights=ds.counts, minlength=spec.bucket_count)
                worst_spread = max(worst_spread, int(population.max() - population.min()))
        ere = parse_bucket_spec(
            "ExternalRiskEstimate",
            {"ranges": [[0, 63], [64, 70], [71, 75], [76, 80], [81, "inf"]], "specials": [-7, -8, -9]}
        )
        vector = one_hot(61, ere).tolist()
        one_hot_ok = vector == [1, 0, 0, 0, 0, 0, 0, 0]
        return {
            "ok": worst_spread <= 1 and one_hot_ok,
            "cases": columns * 4,
            "max_error": float(worst_spread),
            "message": f"one-hot(61) = {vector}",
        }

    # -------------------------------------------------

    def validate_all(self, names: Optional[Sequence[str]] = None) -> Dict[str, List[Dict[str, Any]]]:
        logger.info("=" * 80)
        logger.info("Starting self-test")
        logger.info("=" * 80)

        unknown = sorted(set(names or ()) - {c[0] for c in self.checks})
        if unknown:
            raise ConfigError(f"unknown self-test checks: {unknown}")
        checks = [c for c in self.checks if names is None or c[0] in names]
        for idx, (name, description, check) in enumerate(checks, 1):
            logger.info(f"[{idx}/{len(checks)}] {name}: {description}")
            result = {"name": name, "description": description}
            try:
                outcome = check()
            except ExplainError as e:
                outcome = {"ok": False, "cases": 0, "max_error": None, "message": f"{type(e).__name__}: {e}"}
            result.update({k: v for k, v in outcome.items() if k != "ok"})
            if outcome["ok"]:
                self.results["passed"].append(result)
                logger.info(f"✓ {name} ({result['cases']} cases, max error {result['max_error']})")
            else:
                self.results["failed"].append(result)
                logger.error(f"✗ {name}: {result.get('message', 'property violated')}")

        self._print_summary()
        return self.results

    @property
    def ok(self) -> bool:
        return not self.results["failed"]

    def _print_summary(self) -> None:
        logger.info("=" * 80)
        logger.info("SELF-TEST SUMMARY")
        logger.info("=" * 80)
        logger.info(f"✓ Passed: {len(self.results['passed'])}")
        logger.info(f"✗ Failed: {len(self.results['failed'])}")
        for result in self.results["failed"]:
            logger.error(f"  {result['name']}: {result.get('message', '')}")

    def save_report(self, output_path: str) -> None:
        report = {
            "seed": self.seed,
            "summary": {
                "total": sum(len(v) for v in self.results.values()),
                "passed": len(self.results["passed"]),
                "failed": len(self.results["failed"]),
            },
            "details": self.results,
        }
        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        logger.info(f"Self-test report saved to: {output_path}")


def main():
    import argparse
    parser = argparse.ArgumentParser(description="Run the explanation engine self-test")
    parser.add_argument("--check", nargs="+", help="Only run these checks")
    parser.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    parser.add_argument("--output", default="selftest_report.json", help="Output file path for the report")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format=config.LOG_FORMAT)
    runner = SelfTestRunner(seed=args.seed)
    runner.validate_all(args.check)
    runner.save_report(args.output)
    sys.exit(config.EXIT_OK if runner.ok else config.EXIT_SELFTEST_FAILED)


if __name__ == "__main__":
    main()
