import math

import numpy as np
import pytest

from tomlab import oracle
from tomlab.gridworld import ContractViolation, GridWorld


class TestDirichletPredictive:
    def test_zero_counts_gives_uniform(self):
        p = oracle.dirichlet_posterior_predictive([0, 0, 0, 0, 0], 0.7)
        assert np.allclose(p, 0.2)
        assert abs(p.sum() - 1.0) < 1e-12

    def test_sharp_prior_one_observation(self):
        # (1 + 0.01) / (1 + 0.05), cross-checked against numeric integration
        # of the Dirichlet posterior when these tests were written.
        p = oracle.dirichlet_posterior_predictive([1, 0, 0, 0, 0], 0.01)
        assert abs(p[0] - 1.01 / 1.05) < 1e-12
        assert abs(p[0] - 0.9619047619) < 1e-9

    def test_flat_prior_one_observation(self):
        p = oracle.dirichlet_posterior_predictive([0, 1, 0, 0, 0], 3.0)
        assert abs(p[1] - 4.0 / 16.0) < 1e-12

    def test_sums_to_one_and_monotone_in_counts(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            counts = rng.integers(0, 20, size=5)
            alpha = float(rng.uniform(0.01, 5))
            p = oracle.dirichlet_posterior_predictive(counts, alpha)
            assert abs(p.sum() - 1.0) < 1e-12
            bumped = counts.copy()
            bumped[2] += 1
            q = oracle.dirichlet_posterior_predictive(bumped, alpha)
            assert q[2] > p[2]

    def test_rejects_bad_alpha(self):
        with pytest.raises(ContractViolation):
            oracle.dirichlet_posterior_predictive([0] * 5, 0.0)


class TestMixturePredictive:
    def test_single_component_reduces_to_plain_predictive(self):
        counts = [2, 0, 1, 0, 0]
        a = oracle.mixture_posterior_predictive(counts, [(1.0, 0.3)])
        b = oracle.dirichlet_posterior_predictive(counts, 0.3)
        assert np.allclose(a, b, atol=1e-12)

    def test_zero_counts_gives_uniform(self):
        p = oracle.mixture_posterior_predictive([0] * 5, [(0.5, 0.01), (0.5, 3.0)])
        assert np.allclose(p, 0.2, atol=1e-12)

    def test_five_repeats_favours_sharp_component(self):
        # Evidence ratio evaluated numerically before the build: the sharp
        # component takes posterior weight ~0.990.
        w = oracle.mixture_posterior_weights([5, 0, 0, 0, 0], [(0.5, 0.01), (0.5, 3.0)])
        assert w[0] > 0.9
        assert abs(w[0] - 0.9902967) < 1e-4

    def test_weights_form_simplex(self):
        w = oracle.mixture_posterior_weights([1, 2, 0, 0, 0], [(0.2, 0.01), (0.3, 0.3), (0.5, 3.0)])
        assert abs(w.sum() - 1.0) < 1e-9
        assert (w >= 0).all()

    def test_rejects_empty_components(self):
        with pytest.raises(ContractViolation):
            oracle.mixture_posterior_predictive([0] * 5, [])


class TestExpectedKl:
    def test_non_negative(self):
        est = oracle.expected_kl_species(0.3, 3.0, 1, 2000, np.random.default_rng(0))
        assert est.value >= -2 * est.stderr

    def test_matched_species_minimises_each_column(self):
        alphas = [0.01, 0.3, 3.0]
        rng = np.random.default_rng(42)
        matrix = {
            (at, ats): oracle.expected_kl_species(at, ats, 1, 20000, rng)
            for at in alphas
            for ats in alphas
        }
        for ats in alphas:
            column = {at: matrix[(at, ats)].value for at in alphas}
            assert min(column, key=column.get) == ats

    def test_kl_decreases_with_more_observations(self):
        rng = np.random.default_rng(7)
        values = [
            oracle.expected_kl_species(0.01, 0.01, n, 20000, rng).value for n in (1, 2, 5)
        ]
        assert values[0] > values[1] > values[2]

    def test_rejects_small_sample_budget(self):
        with pytest.raises(ContractViolation):
            oracle.expected_kl_species(0.3, 0.3, 1, 10)


def corridor_world():
    # agent at (5,2), object 0 three steps right at (5,5); other objects remote
    return GridWorld(
        width=7, height=7, walls=frozenset(), wall_segments=(),
        objects=((5, 5), (0, 0), (0, 6), (6, 0)), subgoal=None, agent_start=(5, 2),
    )


class TestExhaustiveBestReturn:
    def test_adjacent_object(self):
        world = GridWorld(
            width=7, height=7, walls=frozenset(), wall_segments=(),
            objects=((5, 3), (0, 0), (0, 6), (6, 0)), subgoal=None, agent_start=(5, 2),
        )
        value = oracle.exhaustive_best_return(world, [1.0, 0.0, 0.0, 0.0], 0.01, 0.05, 8)
        assert abs(value - 0.99) < 1e-12

    def test_three_step_corridor(self):
        value = oracle.exhaustive_best_return(corridor_world(), [1.0, 0.0, 0.0, 0.0], 0.01, 0.05, 8)
        assert abs(value - 0.97) < 1e-12

    def test_unreachable_object_idles(self):
        # nothing is reachable within the horizon: cheapest play is to stay
        world = GridWorld(
            width=7, height=7, walls=frozenset(), wall_segments=(),
            objects=((0, 0), (0, 6), (6, 0), (6, 6)), subgoal=None, agent_start=(3, 3),
        )
        value = oracle.exhaustive_best_return(world, [1.0, 1.0, 1.0, 1.0], 0.01, 0.05, 2)
        assert abs(value - (-0.02)) < 1e-12

    def test_worthless_reachable_object_still_ends_episode(self):
        # consuming a zero-reward object beats paying move costs to the timeout
        value = oracle.exhaustive_best_return(corridor_world(), [0.0, 0.0, 0.0, 0.0], 0.01, 0.05, 6)
        assert abs(value - (-0.03)) < 1e-12

    def test_budget_error(self):
        with pytest.raises(oracle.BudgetError):
            oracle.exhaustive_best_return(corridor_world(), [1, 0, 0, 0], 0.01, 0.05, 13)


class TestExactBeliefFilter:
    def small_world(self):
        return GridWorld(
            width=5, height=5, walls=frozenset(), wall_segments=(),
            objects=((1, 3), (4, 4), (0, 0), (0, 4)), subgoal=None, agent_start=(2, 2),
        )

    def test_no_observations_returns_prior(self):
        world = self.small_world()
        post = oracle.exact_belief_filter(world, [], [0])
        assert np.allclose(post[0, :25], 1 / 25)
        assert post[0, 25] == 0

    def test_full_visibility_is_point_mass(self):
        world = self.small_world()
        vis = np.ones((5, 5), dtype=bool)
        post = oracle.exact_belief_filter(world, [vis], [0])
        assert post[0, 1 * 5 + 3] == 1.0

    def test_one_empty_cell_renormalizes(self):
        world = self.small_world()
        vis = np.zeros((5, 5), dtype=bool)
        vis[2, 2] = True  # visible and empty
        post = oracle.exact_belief_filter(world, [vis], [0])
        assert post[0, 2 * 5 + 2] == 0.0
        assert np.allclose(post[0, :25].sum(), 1.0)
        nonzero = post[0, :25][post[0, :25] > 0]
        assert np.allclose(nonzero, 1 / 24)

    def test_budget_errors(self):
        world = self.small_world()
        with pytest.raises(oracle.BudgetError):
            oracle.exact_belief_filter(world, [], [0, 1, 2])
        big = GridWorld(
            width=11, height=11, walls=frozenset(), wall_segments=(),
            objects=((1, 3), (4, 4), (0, 0), (0, 9)), subgoal=None, agent_start=(2, 2),
        )
        with pytest.raises(oracle.BudgetError):
            oracle.exact_belief_filter(big, [], [0])


def test_djs_style_kl_helper():
    p = np.array([0.5, 0.5, 0.0, 0.0, 0.0])
    q = np.array([0.25, 0.25, 0.25, 0.25, 0.0])
    assert oracle.kl_divergence(p, q) == pytest.approx(math.log(2))
    assert oracle.kl_divergence(p, p) == 0.0
