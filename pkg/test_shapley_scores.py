"""
SHAP / KernelSHAP 测试
"""
import math
import threading
from fractions import Fraction

import numpy as np
import pytest

import config
from causal_scores import counter_score
from classifier import FunctionClassifier, Monotone2CNF
from errors import BudgetExceededError, PreconditionError, RunCancelledError, ZeroProbabilityError
from instances import binary_product_instance, full_support_instance, random_instance, random_monotone_2cnf
from selftest import empirical_mean_label
from shapley_scores import (
    EXHAUSTIVE, explain_kernel_shap, explain_shap, kernel_shap, kernel_shap_run, shap_empirical,
    shap_empirical_run, shap_hardness_check, shap_levels, shap_permutation_oracle, shap_product,
    shapley_coefficients, shapley_kernel_weight
)
from tabular import Dataset, EmpiricalSpace, ProductSpace


def values(scores):
    return [s.value for s in scores]


def test_and_on_two_row_dataset(binary_pair, and2):
    assert values(shap_empirical(binary_pair, and2, (1, 1))) == pytest.approx([0.25, 0.25])


def test_or_on_uniform_product(binary_pair, or_table):
    assert values(shap_product(ProductSpace(binary_pair), or_table, (1, 1))) == pytest.approx([0.125, 0.125])


def test_levels_on_uniform_product(binary_pair, and2):
    levels = shap_levels(ProductSpace(binary_pair), and2, (1, 1), "F1")
    assert levels == pytest.approx([0.125, 0.25])
    assert sum(levels) == pytest.approx(shap_product(ProductSpace(binary_pair), and2, (1, 1))[0].value)


def test_levels_on_empirical_space(binary_pair, and2):
    levels = shap_levels(EmpiricalSpace(binary_pair), and2, (1, 1), "F2")
    assert levels == pytest.approx([0.25, 0.0])


def test_constant_classifier_scores_zero(binary_pair):
    always = FunctionClassifier(lambda e: True, arity=2)
    assert values(shap_empirical(binary_pair, always, (1, 1))) == [0.0, 0.0]
    x = explain_shap(binary_pair, always, (1, 1))
    assert x.no_explanation


def test_coefficients_sum_per_level():
    coefs = shapley_coefficients(4)
    assert sum(c * math.comb(3, k) for k, c in enumerate(coefs)) == 1
    assert coefs[0] == Fraction(1, 4)


def test_kernel_weight():
    assert shapley_kernel_weight(3, 1) == pytest.approx(1 / 3)
    with pytest.raises(PreconditionError):
        shapley_kernel_weight(3, 0)
    with pytest.raises(PreconditionError):
        shapley_kernel_weight(3, 3)


@pytest.mark.parametrize("n,clauses,expected", [
    (2, [(1, 2)], Fraction(3, 4)),
    (3, [], Fraction(1)),
    (1, [(1, 1)], Fraction(1, 2)),
])
def test_hardness_identity_examples(n, clauses, expected):
    lhs, rhs = shap_hardness_check(Monotone2CNF(n, clauses))
    assert lhs == rhs == expected


def test_hardness_budget():
    with pytest.raises(BudgetExceededError):
        shap_hardness_check(Monotone2CNF(config.HARDNESS_MAX_VARS + 1, []))


def test_entity_outside_dataset(binary_pair, and2):
    with pytest.raises(ZeroProbabilityError, match="add-entity"):
        shap_empirical(binary_pair, and2, (1, 0))
    run = shap_empirical_run(binary_pair, and2, (1, 0), add_entity=True)
    assert run.diagnostics["entity_added"]
    target = 0 - Fraction(1, 3)
    assert math.fsum(values(run.scores)) == pytest.approx(float(target))


def test_pruned_search_skips_supersets(binary_pair, and2):
    run = shap_empirical_run(binary_pair, and2, (1, 1))
    assert run.diagnostics["subsets_visited"] < 4
    assert run.diagnostics["subsets_pruned"] >= 1
    assert run.table.resolve(0b11) == 1.0


def test_empirical_variant_rejects_product_space(binary_pair, and2):
    with pytest.raises(PreconditionError):
        shap_empirical(ProductSpace(binary_pair), and2, (1, 1))


def test_permutation_oracle_budget():
    n = config.PERMUTATION_MAX_FEATURES + 1
    ds = Dataset.from_rows([f"F{j}" for j in range(n)], [(0,) * n])
    with pytest.raises(BudgetExceededError):
        shap_permutation_oracle(EmpiricalSpace(ds), FunctionClassifier(lambda e: True, arity=n), (0,) * n)


# =====================================================
# 随机实例上的性质
# =====================================================

def test_efficiency_on_random_instances():
    for seed in range(100):
        inst = random_instance(seed)
        scores = shap_empirical(inst.dataset, inst.oracle, inst.e_star)
        target = inst.oracle.classify(inst.e_star) - empirical_mean_label(inst.dataset, inst.oracle)
        assert math.fsum(values(scores)) == pytest.approx(target, abs=config.EFFICIENCY_TOLERANCE)


def test_pruned_dfs_equals_permutation_enumeration():
    for seed in range(1000, 1050):
        inst = random_instance(seed, max_features=7)
        fast = shap_empirical(inst.dataset, inst.oracle, inst.e_star)
        slow = shap_permutation_oracle(EmpiricalSpace(inst.dataset), inst.oracle, inst.e_star)
        assert values(fast) == pytest.approx(values(slow), abs=1e-12)


def test_truncated_shap_is_prefix_sum_of_levels():
    for seed in range(2000, 2030):
        inst = random_instance(seed, max_features=6, min_features=2)
        full = shap_empirical(inst.dataset, inst.oracle, inst.e_star, levels=True)
        n = inst.dataset.n
        for level in range(n):
            truncated = shap_empirical(inst.dataset, inst.oracle, inst.e_star, max_level=level)
            want = [math.fsum(s.per_level[:level + 1]) for s in full]
            assert values(truncated) == pytest.approx(want, abs=1e-12)
        assert values(shap_empirical(inst.dataset, inst.oracle, inst.e_star, max_level=n + 3)) == \
            pytest.approx(values(full), abs=1e-12)


def test_truncated_shap_visits_fewer_subsets():
    inst = full_support_instance(7, n=6)
    full = shap_empirical_run(inst.dataset, inst.oracle, inst.e_star)
    shallow = shap_empirical_run(inst.dataset, inst.oracle, inst.e_star, max_level=1)
    assert shallow.diagnostics["max_level"] == 1
    assert shallow.diagnostics["subsets_visited"] <= 1 + 6 + 15
    assert shallow.diagnostics["subsets_visited"] <= full.diagnostics["subsets_visited"]
    assert "max_level" not in full.diagnostics


def test_negative_max_level_rejected(binary_pair, and2):
    with pytest.raises(PreconditionError):
        shap_empirical(binary_pair, and2, (1, 1), max_level=-1)


def test_cancelled_shap_stops(binary_pair, and2):
    cancel = threading.Event()
    cancel.set()
    with pytest.raises(RunCancelledError):
        explain_shap(binary_pair, and2, (1, 1), cancel=cancel)


def test_product_shap_equals_permutation_enumeration():
    for seed in range(10):
        ds, oracle, e_star = binary_product_instance(seed, 4, monotone=False)
        space = ProductSpace(ds)
        assert values(shap_product(space, oracle, e_star)) == pytest.approx(
            values(shap_permutation_oracle(space, oracle, e_star)), abs=1e-12
        )


@pytest.mark.parametrize("monotone", [False, True])
def test_top_level_equals_counter(monotone):
    for seed in range(25):
        n = 1 + seed % 6
        ds, oracle, e_star = binary_product_instance(2000 + seed, n, monotone=monotone)
        space = ProductSpace(ds)
        for j in range(n):
            top = shap_levels(space, oracle, e_star, j)[n - 1] * n
            assert top == pytest.approx(counter_score(space, oracle, e_star, j).value, abs=1e-12)


def test_model_counting_identity_on_random_formulas():
    rng = np.random.default_rng(3000)
    for _ in range(30):
        n = int(rng.integers(1, config.HARDNESS_MAX_VARS + 1))
        lhs, rhs = shap_hardness_check(random_monotone_2cnf(rng, n))
        assert lhs == rhs


# =====================================================
# KernelSHAP
# =====================================================

def test_exhaustive_kernel_shap_matches_exact():
    rng = np.random.default_rng(6000)
    for i in range(20):
        n = int(rng.integers(2, 7))
        inst = full_support_instance(6000 + i, n, copies=3)
        approx = kernel_shap(inst.dataset, inst.oracle, inst.e_star, n_samples=EXHAUSTIVE)
        exact = shap_empirical(inst.dataset, inst.oracle, inst.e_star)
        assert values(approx) == pytest.approx(values(exact), abs=1e-6)


def test_sampled_kernel_shap_is_seeded():
    inst = full_support_instance(7, 5, copies=2)
    a = kernel_shap_run(inst.dataset, inst.oracle, inst.e_star, n_samples=64, seed=11)
    b = kernel_shap_run(inst.dataset, inst.oracle, inst.e_star, n_samples=64, seed=11)
    assert values(a.scores) == values(b.scores)
    assert a.diagnostics == b.diagnostics


def test_sampled_kernel_shap_keeps_efficiency():
    inst = full_support_instance(3, 4, copies=2)
    scores = kernel_shap(inst.dataset, inst.oracle, inst.e_star, n_samples=256, seed=5)
    target = inst.oracle.classify(inst.e_star) - empirical_mean_label(inst.dataset, inst.oracle)
    assert math.fsum(values(scores)) == pytest.approx(target, abs=1e-9)


def test_kernel_shap_efficiency_constraint(binary_pair, and2):
    run = kernel_shap_run(binary_pair, and2, (1, 1), n_samples=EXHAUSTIVE)
    assert run.diagnostics["skipped_coalitions"] == 0
    assert values(run.scores) == pytest.approx([0.25, 0.25])

    ds = Dataset.from_rows(["F1", "F2", "F3"], [(0, 0, 0), (1, 1, 1), (1, 0, 1)])
    oracle = FunctionClassifier(lambda e: e[0] == 1, arity=3)
    run = kernel_shap_run(ds, oracle, (1, 1, 1), n_samples=EXHAUSTIVE)
    assert run.diagnostics["skipped_coalitions"] == 0
    assert math.fsum(values(run.scores)) == pytest.approx(1 - 2 / 3)


def test_kernel_shap_preconditions(binary_pair, and2):
    with pytest.raises(PreconditionError):
        kernel_shap(binary_pair, and2, (1, 1), n_samples=3)
    single = Dataset.from_rows(["F1"], [(1,)])
    with pytest.raises(PreconditionError):
        kernel_shap(single, FunctionClassifier(lambda e: True, arity=1), (1,))
    n = config.KERNEL_EXHAUSTIVE_MAX_FEATURES + 1
    wide = Dataset.from_rows([f"F{j}" for j in range(n)], [(0,) * n])
    with pytest.raises(BudgetExceededError):
        kernel_shap(wide, FunctionClassifier(lambda e: True, arity=n), (0,) * n)


# =====================================================
# 解释信封
# =====================================================

def test_explain_shap_envelope(binary_pair, and2):
    x = explain_shap(binary_pair, and2, (1, 1), levels=True)
    doc = x.to_dict()
    assert doc["kind"] == "shap"
    assert doc["ranking"] == ["F1", "F2"]
    assert doc["ranking_order"] == "signed"
    assert doc["scores"][0]["per_level"] == pytest.approx([0.25, 0.0])
    assert doc["diagnostics"]["skipped_coalitions"] == 0


def test_magnitude_ranking():
    ds = Dataset.from_rows(["F1", "F2"], [(0, 0), (1, 0), (1, 1), (0, 1)])
    oracle = FunctionClassifier(lambda e: e[0] == 1 and e[1] == 0, arity=2)
    signed = explain_shap(ds, oracle, (0, 0))
    assert signed.ranking == ["F2", "F1"]
    by_magnitude = explain_shap(ds, oracle, (0, 0), magnitude=True)
    assert by_magnitude.to_dict()["ranking_order"] == "magnitude"
    assert by_magnitude.ranking == ["F1", "F2"]


def test_explain_kernel_shap_kind(binary_pair, and2):
    x = explain_kernel_shap(binary_pair, and2, (1, 1))
    assert x.kind == "kernelshap"
    assert [s.value for s in x.scores] == pytest.approx([0.25, 0.25])
