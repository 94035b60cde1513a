import itertools
import math

import numpy as np
import pytest

from dimattn.core import LOG, SQRT, ConcaveTransform
from dimattn.greedy import (
    TableFunction,
    WeightedCoverageFunction,
    brute_force_maximize,
    evaluate,
    greedy_maximize,
    is_submodular,
    is_submodular_pairwise,
    load_instance,
    save_instance,
)


def modular(weights):
    """Each element covers its own concept: f(S) = sum of the chosen weights."""
    n = len(weights)
    return WeightedCoverageFunction(weights, np.eye(n), transform=None)


def literal_value(f, subset):
    """Direct nested-loop evaluation of the coverage formula."""
    total = 0.0
    for c, w in enumerate(f.weights):
        s = sum(f.cover[v, c] for v in subset)
        total += w * (0.0 if f.transform is None and s == 0 else (s if f.transform is None else f.transform.raw(s) - f.transform.raw(0.0)))
    return total


class TestEvaluate:
    def test_empty_set_is_zero(self):
        f = WeightedCoverageFunction.random(np.random.default_rng(0), 5, 3)
        assert evaluate(f, []) == 0.0

    def test_log_two_elements(self):
        f = WeightedCoverageFunction([1.0], [[1.0], [1.0], [1.0]], LOG)
        assert evaluate(f, [0, 2]) == pytest.approx(math.log(3.0), rel=1e-15)

    def test_singleton(self):
        f = WeightedCoverageFunction([0.5, 2.0], [[1.0, 3.0]], SQRT)
        assert evaluate(f, [0]) == pytest.approx(0.5 * (math.sqrt(2) - 1) + 2.0 * (math.sqrt(4) - 1), rel=1e-15)

    def test_matches_literal_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            f = WeightedCoverageFunction.random(rng, 6, 4, ConcaveTransform("pow", 0.6))
            subset = [v for v in range(6) if rng.random() < 0.5]
            assert evaluate(f, subset) == pytest.approx(literal_value(f, subset), rel=1e-12, abs=1e-14)

    def test_table_matches_evaluate(self):
        f = WeightedCoverageFunction.random(np.random.default_rng(2), 5, 3)
        table = f.table()
        for mask in range(32):
            subset = [v for v in range(5) if mask >> v & 1]
            assert table[mask] == pytest.approx(evaluate(f, subset), rel=1e-13, abs=1e-15)

    def test_element_outside_ground_set(self):
        f = WeightedCoverageFunction([1.0], [[1.0]])
        with pytest.raises(ValueError):
            evaluate(f, [3])

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            WeightedCoverageFunction([1.0], [[-1.0]])


class TestGreedy:
    def test_modular_top_two(self):
        f = modular([0.3, 0.9, 0.1, 0.7])
        res = greedy_maximize(f, 2)
        assert res.subset == [1, 3]
        assert res.value == pytest.approx(1.6)
        assert brute_force_maximize(f, 2)[1] == pytest.approx(res.value)

    def test_full_budget(self):
        f = WeightedCoverageFunction.random(np.random.default_rng(3), 6, 4)
        assert sorted(greedy_maximize(f, 6).subset) == list(range(6))

    def test_tie_goes_to_lowest_id(self):
        f = modular([1.0, 1.0, 1.0])
        assert greedy_maximize(f, 2).subset == [0, 1]
        assert greedy_maximize(f, 2, lazy=True).subset == [0, 1]

    def test_trace_non_increasing(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            f = WeightedCoverageFunction.random(rng, 10, 5)
            trace = greedy_maximize(f, 6).trace
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_lazy_equals_naive(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n = int(rng.integers(1, 15))
            f = WeightedCoverageFunction.random(rng, n, int(rng.integers(1, 6)))
            m = int(rng.integers(1, n + 1))
            assert greedy_maximize(f, m).subset == greedy_maximize(f, m, lazy=True).subset

    def test_ratio_on_n10_m3(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            f = WeightedCoverageFunction.random(rng, 10, 6)
            opt = max(evaluate(f, s) for s in itertools.combinations(range(10), 3))
            assert greedy_maximize(f, 3).value >= 0.632 * opt

    def test_budget_validation(self):
        f = modular([1.0, 2.0])
        for m in (0, 3):
            with pytest.raises(ValueError):
                greedy_maximize(f, m)


class TestBruteForce:
    def test_single_element(self):
        f = WeightedCoverageFunction([1.0], [[0.5]])
        assert brute_force_maximize(f, 1)[0] == [0]

    def test_matches_itertools_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(2, 10))
            m = int(rng.integers(1, min(4, n) + 1))
            f = WeightedCoverageFunction.random(rng, n, 4)
            best = max(
                (evaluate(f, s), tuple(-x for x in s))
                for k in range(1, m + 1)
                for s in itertools.combinations(range(n), k)
            )
            subset, value = brute_force_maximize(f, m)
            assert value == pytest.approx(best[0], rel=1e-12)

    def test_lexicographic_tie_break(self):
        f = modular([1.0, 1.0, 1.0, 1.0])
        assert brute_force_maximize(f, 2)[0] == [0, 1]

    def test_too_large(self):
        f = WeightedCoverageFunction(np.ones(2), np.ones((25, 2)))
        with pytest.raises(ValueError):
            brute_force_maximize(f, 2)


class TestIsSubmodular:
    def test_coverage_functions(self):
        rng = np.random.default_rng(8)
        for g in (LOG, SQRT, ConcaveTransform("pow", 0.65)):
            for _ in range(20):
                assert is_submodular(WeightedCoverageFunction.random(rng, int(rng.integers(1, 9)), 4, g))

    def test_square_of_cardinality(self):
        table = [bin(mask).count("1") ** 2 for mask in range(16)]
        assert not is_submodular(TableFunction(table))

    def test_modular(self):
        assert is_submodular(modular([0.2, 0.5, 0.9]))

    def test_non_monotone_detected(self):
        table = [0.0, 1.0, 1.0, 0.5]  # adding a second element loses value
        assert not is_submodular(TableFunction(table))
        assert is_submodular(TableFunction(table), check_monotone=False)

    def test_agrees_with_pairwise_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            n = int(rng.integers(1, 6))
            # random tables are mostly not submodular; mix in sorted and concave ones
            kind = rng.integers(3)
            if kind == 0:
                table = rng.random(1 << n)
                table[0] = 0.0
            elif kind == 1:
                sizes = np.array([bin(m).count("1") for m in range(1 << n)])
                table = np.sqrt(sizes) + rng.normal(0, 0.01, 1 << n) * (sizes > 0)
            else:
                table = WeightedCoverageFunction.random(rng, n, 3).table()
            f = TableFunction(table)
            assert is_submodular(f) == is_submodular_pairwise(f)

    def test_size_limit(self):
        with pytest.raises(ValueError):
            is_submodular(TableFunction(np.zeros(1 << 13)))


class TestInstanceFiles:
    def test_round_trip(self, tmp_path):
        f = WeightedCoverageFunction.random(np.random.default_rng(10), 7, 3, SQRT)
        save_instance(tmp_path / "inst.json", f, 3)
        g, m = load_instance(tmp_path / "inst.json")
        assert m == 3
        np.testing.assert_array_equal(g.cover, f.cover)
        assert g.transform == SQRT

    def test_bad_budget(self, tmp_path):
        f = modular([1.0, 2.0])
        save_instance(tmp_path / "inst.json", f, 2)
        text = (tmp_path / "inst.json").read_text().replace('"m": 2', '"m": 5')
        (tmp_path / "inst.json").write_text(text)
        with pytest.raises(ValueError):
            load_instance(tmp_path / "inst.json")
