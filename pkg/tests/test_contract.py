"""Holder and provider utilities, IR/IC checks and the MDP reward."""

import itertools

import mpmath
import numpy as np
import pytest

import freshcontract.contract as contract
from freshcontract.contract import (
    ContractItem,
    ContractMenu,
    HolderPopulation,
    HolderType,
    MenuShapeError,
    PenaltyPolicy,
    ProviderParams,
    check_ic,
    check_ir,
    holder_utility,
    is_feasible,
    mdp_reward,
    provider_expected_utility,
    satisfaction,
    satisfaction_at,
    total_violation,
)
from freshcontract.freshness import TimingModel
from oracles import literal_ic, literal_ir, literal_utility, random_menu_arrays


def params(alpha=39.9, beta=10.0, max_aoi=40.0, t=2.0, penalty=-100.0):
    return ProviderParams(alpha, beta, max_aoi, TimingModel.from_slot_length(t), penalty)


def pop(deltas, probs=None):
    probs = [1.0 / len(deltas)] * len(deltas) if probs is None else probs
    return HolderPopulation.from_arrays(deltas, probs)


class TestTypes:
    def test_population_sorts_by_delta(self):
        p = HolderPopulation.from_arrays([15.0, 3.0], [0.3, 0.7])
        np.testing.assert_array_equal(p.deltas, [3.0, 15.0])
        np.testing.assert_array_equal(p.probabilities, [0.7, 0.3])

    def test_population_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError):
            HolderPopulation.from_arrays([1.0, 2.0], [0.5, 0.6])

    @pytest.mark.parametrize("delta, q", [(0.0, 0.5), (-1.0, 0.5), (1.0, 1.5)])
    def test_holder_type_bounds(self, delta, q):
        with pytest.raises(ValueError):
            HolderType(delta, q)

    @pytest.mark.parametrize("f, r", [(-0.1, 0.0), (0.5, -1.0), (1.5, 0.0)])
    def test_item_bounds(self, f, r):
        with pytest.raises(ValueError):
            ContractItem(f, r)

    def test_item_cycle_length(self):
        assert ContractItem(0.25, 0.0).cycle_length == 4.0
        assert ContractItem(0.0, 0.0).cycle_length == float("inf")

    def test_provider_params_reject_positive_penalty(self):
        with pytest.raises(ValueError):
            params(penalty=1.0)


class TestHolderUtility:
    @pytest.mark.parametrize(
        "r, f, delta, expected",
        [(0.25, 0.5, 2.0, 0.0), (5.0, 0.5, 2.0, 4.75), (0.1, 0.8, 4.0, -0.1)],
    )
    def test_worked_values(self, r, f, delta, expected):
        u = holder_utility(ContractItem(f, r), HolderType(delta, 1.0))
        assert u == pytest.approx(expected, abs=1e-15)


class TestSatisfaction:
    def test_unit_log_argument(self):
        """A quality ratio of e - 1 makes the log term exactly one."""
        t = 2.0
        # f = 0.5 gives theta = 2 and AoI 2t
        p = params(max_aoi=2 * t * (np.e - 1.0), t=t)
        assert satisfaction(ContractItem(0.5, 0.0), p) == pytest.approx(39.9, rel=1e-14)

    def test_quality_ten(self):
        expected = float(mpmath.mpf("39.9") * mpmath.log(11))
        assert satisfaction(ContractItem(0.5, 0.0), params()) == pytest.approx(
            expected, rel=1e-14
        )
        # the commonly quoted 95.674 is good to about two decimals
        assert expected == pytest.approx(95.674, abs=5e-3)

    def test_other_accuracy_constant(self):
        s = satisfaction(ContractItem(0.5, 0.0), params(alpha=49.4))
        assert s == pytest.approx(float(mpmath.mpf("49.4") * mpmath.log(11)), rel=1e-14)
        assert s == pytest.approx(118.452, abs=5e-3)

    def test_zero_frequency_is_undefined(self):
        with pytest.raises(ValueError):
            satisfaction(ContractItem(0.0, 0.0), params())

    def test_vectorized_form_matches_scalar(self):
        p = params(max_aoi=47.0)
        f = np.linspace(0.01, 1.0, 37)
        expected = [satisfaction(ContractItem(x, 0.0), p) for x in f]
        np.testing.assert_allclose(satisfaction_at(f, p), expected, rtol=1e-14)


class TestProviderUtility:
    def test_stubbed_satisfaction(self, monkeypatch):
        values = iter([2.0, 4.0])
        monkeypatch.setattr(contract, "satisfaction", lambda item, p: next(values))
        menu = ContractMenu.from_arrays([0.3, 0.6], [5.0, 10.0])
        u = provider_expected_utility(menu, pop([1.0, 2.0], [0.5, 0.5]), params(beta=10))
        assert u == pytest.approx(22.5, abs=1e-12)

    def test_zero_case(self, monkeypatch):
        monkeypatch.setattr(contract, "satisfaction", lambda item, p: 0.0)
        menu = ContractMenu.from_arrays([0.5], [0.0])
        assert provider_expected_utility(menu, pop([1.0]), params(beta=1)) == 0.0

    def test_terms_cancel(self, monkeypatch):
        monkeypatch.setattr(contract, "satisfaction", lambda item, p: 1.0)
        menu = ContractMenu.from_arrays([0.5, 0.5], [2.0, 2.0])
        u = provider_expected_utility(menu, pop([1.0, 2.0], [0.3, 0.7]), params(beta=2))
        assert u == pytest.approx(0.0, abs=1e-15)

    def test_linear_in_rewards(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            f, r, d, q = random_menu_arrays(rng, 3)
            p, hp = params(max_aoi=rng.uniform(30, 60)), pop(d, q)
            base = provider_expected_utility(ContractMenu.from_arrays(f, r), hp, p)
            doubled = provider_expected_utility(ContractMenu.from_arrays(f, 2 * r), hp, p)
            assert doubled - base == pytest.approx(-np.dot(hp.probabilities, r), abs=1e-10)

    def test_matches_literal_formula(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            K = int(rng.integers(1, 5))
            f, r, d, q = random_menu_arrays(rng, K)
            m = rng.uniform(30, 60)
            hp = pop(d, q)
            u = provider_expected_utility(ContractMenu.from_arrays(f, r), hp,
                                          params(max_aoi=m))
            ref = literal_utility(f, r, list(hp.probabilities), d, 39.9, 10.0, 2.0, m)
            assert u == pytest.approx(ref, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(MenuShapeError):
            provider_expected_utility(ContractMenu.from_arrays([0.5], [1.0]),
                                      pop([1.0, 2.0]), params())


class TestConstraints:
    def test_boundary_counts_as_satisfied(self):
        d = [2.0, 4.0, 7.0]
        f = [0.2, 0.5, 0.9]
        menu = ContractMenu.from_arrays(f, [fi / di for fi, di in zip(f, d)])
        assert check_ir(menu, pop(d)) == [True, True, True]

    def test_ir_examples(self):
        menu = ContractMenu.from_arrays([0.4, 0.8], [0.2, 0.3])
        assert check_ir(menu, pop([2.0, 4.0])) == [True, True]
        assert check_ir(ContractMenu.from_arrays([0.5], [0.1]), pop([2.0])) == [False]

    def test_single_type_ic_is_trivial(self):
        ic = check_ic(ContractMenu.from_arrays([0.9], [0.0]), pop([3.0]))
        np.testing.assert_array_equal(ic, [[True]])

    def test_ic_all_hold(self):
        menu = ContractMenu.from_arrays([0.4, 0.8], [0.2, 0.3])
        assert check_ic(menu, pop([2.0, 4.0])).all()
        assert is_feasible(menu, pop([2.0, 4.0]))

    def test_ic_violation_entry(self):
        menu = ContractMenu.from_arrays([0.8, 0.4], [0.4, 0.1])
        ic = check_ic(menu, pop([2.0, 4.0]))
        # type 2 (row 1) strictly prefers item 1
        assert not ic[1, 0]
        assert ic[0, 1]
        assert not is_feasible(menu, pop([2.0, 4.0]))

    def test_zero_menu_is_feasible(self):
        menu = ContractMenu.from_arrays([0.0, 0.0], [0.0, 0.0])
        assert is_feasible(menu, pop([1.0, 5.0]))

    def test_agrees_with_literal_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            K = int(rng.integers(1, 6))
            f, r, d, _ = random_menu_arrays(rng, K)
            menu, hp = ContractMenu.from_arrays(f, r), pop(d)
            assert check_ir(menu, hp) == literal_ir(f, r, d)
            np.testing.assert_array_equal(check_ic(menu, hp), literal_ic(f, r, d))

    def test_violation_is_zero_exactly_when_feasible(self):
        rng = np.random.default_rng(12)
        for _ in range(500):
            f, r, d, _ = random_menu_arrays(rng, 2)
            menu, hp = ContractMenu.from_arrays(f, r), pop(d)
            assert (total_violation(menu, hp) == 0.0) == is_feasible(menu, hp)

    def test_violation_sums_shortfalls(self):
        menu = ContractMenu.from_arrays([0.5, 0.5], [0.05, 0.0])
        hp = pop([2.0, 4.0])
        # IR shortfalls 0.2 and 0.125; type 2 gains 0.05 by taking item 1
        assert total_violation(menu, hp) == pytest.approx(0.375, abs=1e-15)

    def test_monotone_feasible_menus_on_a_grid(self):
        """Every feasible K=2 grid menu has f and R nondecreasing in delta."""
        d = [2.0, 5.0]
        hp = pop(d)
        grid_f = np.linspace(0.0, 1.0, 21)
        grid_r = np.linspace(0.0, 0.6, 25)
        count = 0
        for f1, f2, r1, r2 in itertools.product(grid_f, grid_f, grid_r, grid_r):
            menu = ContractMenu.from_arrays([f1, f2], [r1, r2])
            if is_feasible(menu, hp):
                count += 1
                assert f1 <= f2 + 1e-12 and r1 <= r2 + 1e-12
        assert count > 100


class TestReward:
    def test_feasible_passthrough(self, monkeypatch):
        monkeypatch.setattr(contract, "satisfaction", lambda item, p: [2.0, 4.0][
            int(item.frequency > 0.5)])
        # type 2 is exactly indifferent between the two items
        menu = ContractMenu.from_arrays([0.4, 0.8], [5.0, 5.1])
        hp = pop([2.0, 4.0], [0.5, 0.5])
        assert is_feasible(menu, hp)
        assert mdp_reward(menu, hp, params(beta=10)) == pytest.approx(0.5 * 15 + 0.5 * 34.9)

    def test_feasible_equals_utility_exactly(self):
        rng = np.random.default_rng(5)
        hits = 0
        for _ in range(300):
            f, r, d, q = random_menu_arrays(rng, 2)
            menu, hp = ContractMenu.from_arrays(f, r), pop(d, q)
            if is_feasible(menu, hp):
                hits += 1
                p = params()
                assert mdp_reward(menu, hp, p) == provider_expected_utility(menu, hp, p)
        assert hits > 0

    def test_constant_penalty(self):
        menu = ContractMenu.from_arrays([0.5], [0.0])
        r = mdp_reward(menu, pop([2.0]), params(penalty=-50.0), PenaltyPolicy("constant"))
        assert r == -50.0

    def test_graded_penalty(self):
        # violation 0.25 - 0.05 = 0.2
        menu = ContractMenu.from_arrays([0.5], [0.05])
        r = mdp_reward(menu, pop([2.0]), params(), PenaltyPolicy("graded", 100.0))
        assert r == pytest.approx(-20.0, abs=1e-12)

    def test_graded_penalty_is_floored(self):
        menu = ContractMenu.from_arrays([1.0], [0.0])
        r = mdp_reward(menu, pop([0.001]), params(penalty=-100.0))
        assert r == -100.0

    def test_infeasible_never_beats_its_utility(self):
        """A mild constant penalty does not rescue a menu that loses money."""
        menu = ContractMenu.from_arrays([0.01, 0.01], [200.0, 190.0])
        hp = pop([2.0, 4.0])
        p = params(penalty=-1.0)
        u = provider_expected_utility(menu, hp, p)
        assert not is_feasible(menu, hp) and u < -1.0
        assert mdp_reward(menu, hp, p, PenaltyPolicy("constant")) == u

    def test_shaped_penalty_is_continuous_at_the_boundary(self):
        hp = pop([2.0])
        p = params()
        policy = PenaltyPolicy("shaped", 1000.0)
        at = ContractMenu.from_arrays([0.5], [0.25])
        below = ContractMenu.from_arrays([0.5], [0.25 - 1e-6])
        gap = mdp_reward(at, hp, p, policy) - mdp_reward(below, hp, p, policy)
        assert gap == pytest.approx(1e-6 * 1000.0 - 1e-6, rel=1e-3)

    def test_margin_bites_inside_the_feasible_set(self):
        hp = pop([2.0])
        p = params()
        policy = PenaltyPolicy("shaped", 1000.0, margin=0.05)
        menu = ContractMenu.from_arrays([0.5], [0.27])  # IR slack 0.02 < margin
        u = provider_expected_utility(menu, hp, p)
        assert mdp_reward(menu, hp, p, policy) == pytest.approx(u - 1000.0 * 0.03)
        roomy = ContractMenu.from_arrays([0.5], [0.40])
        assert mdp_reward(roomy, hp, p, policy) == provider_expected_utility(roomy, hp, p)

    def test_margin_requires_shaped_mode(self):
        with pytest.raises(ValueError):
            PenaltyPolicy("graded", 100.0, margin=0.1)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            PenaltyPolicy("harsh")
