"""
Unit tests for the NSGA-II, greedy F-beta and front-selection baselines.
"""
from itertools import combinations

import numpy as np
import pytest

from conftest import point_solution

from app.core.exceptions import InvalidConfigurationError, RuleError
from app.services.baselines import (
    NsgaConfig,
    NsgaRunner,
    crowding_distance,
    front_select,
    greedy_fbeta,
    non_dominated_ranks,
    nsga2_run,
)
from app.services.pareto import make_pareto_front
from app.services.rules import RulePool, f_beta


class TestNsgaConfig:
    """Test NSGA-II parameters."""

    @pytest.mark.parametrize("kwargs", [
        {"population": 2},
        {"population": 7},
        {"generations": -1},
        {"mutation_rate": 1.5},
        {"crossover_rate": -0.1},
        {"history_every": 0},
    ])
    def test_invalid(self, kwargs):
        """Test rejected parameter values."""
        with pytest.raises(InvalidConfigurationError):
            NsgaConfig(**kwargs)


class TestSorting:
    """Test non-dominated sorting and crowding."""

    def test_ranks(self):
        """Test layered fronts of maximised objectives."""
        objectives = np.array([[0.9, 0.1], [0.5, 0.5], [0.4, 0.4], [0.1, 0.9], [0.2, 0.2]])
        assert non_dominated_ranks(objectives).tolist() == [0, 0, 1, 0, 2]

    def test_duplicates_share_a_rank(self):
        """Test that identical objectives do not dominate each other."""
        objectives = np.array([[0.5, 0.5], [0.5, 0.5]])
        assert non_dominated_ranks(objectives).tolist() == [0, 0]

    def test_crowding_boundaries_infinite(self):
        """Test that extreme points of a rank get infinite distance."""
        objectives = np.array([[0.9, 0.1], [0.6, 0.5], [0.5, 0.6], [0.1, 0.9]])
        ranks = non_dominated_ranks(objectives)
        distance = crowding_distance(objectives, ranks)

        assert np.isinf(distance[0]) and np.isinf(distance[3])
        assert distance[1] == pytest.approx((0.9 - 0.5) / 0.8 + (0.6 - 0.1) / 0.8)

    def test_small_ranks_all_infinite(self):
        """Test that ranks with at most two members are all boundary points."""
        objectives = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.isinf(crowding_distance(objectives, non_dominated_ranks(objectives))).all()


class TestNsga:
    """Test the NSGA-II run."""

    def test_single_rule_pool(self, pool_factory):
        """Test that a one-rule pool yields an archive holding that rule."""
        pool = pool_factory([[1, 0, 1, 0]], [1, 1, 0, 0])
        result = NsgaRunner(pool, NsgaConfig(population=4, generations=5)).run()

        assert result.archive.members() == [(0,)]
        assert result.evaluations == 4 * 6

    def test_deterministic(self, small_pool):
        """Test that equal seeds give equal archives."""
        cfg = NsgaConfig(population=8, generations=10, seed=4)
        assert nsga2_run(small_pool, cfg) == nsga2_run(small_pool, cfg)

    def test_archive_is_a_valid_front(self, small_pool):
        """Test archive entries against their exact union metrics."""
        result = NsgaRunner(small_pool, NsgaConfig(population=8, generations=10, history_every=5)).run()
        archive = result.archive

        assert make_pareto_front(archive.entries) == archive
        for entry in archive.entries:
            expected = small_pool.evaluate_subset(entry.members).objective
            assert entry.point == expected
            assert entry.coverage is not None
        assert [h.generation for h in result.history] == [0, 5, 10]
        hv = [h.train_hv for h in result.history]
        assert all(b >= a - 1e-12 for a, b in zip(hv, hv[1:]))
        assert archive.hypervolume >= result.population_front.hypervolume - 1e-12

    def test_validation_history(self, small_pool):
        """Test validation HV recorded alongside training HV."""
        validation = small_pool.view.dataset.view(np.array([0, 2, 4, 6, 8, 10]), name="validation")
        result = NsgaRunner(small_pool, NsgaConfig(population=4, generations=2), validation).run()
        assert all(h.validation_hv is not None for h in result.history)

    def test_empty_pool(self, small_pool):
        """Test that NSGA-II needs rules."""
        with pytest.raises(RuleError):
            NsgaRunner(RulePool([], small_pool.view))


class TestGreedyFbeta:
    """Test beam forward selection."""

    @pytest.mark.parametrize("beta", [0.1, 0.5, 1.0, 2.0])
    def test_between_best_single_and_optimum(self, small_pool, beta):
        """Test the result against single rules and exhaustive search."""
        result = greedy_fbeta(small_pool, beta, beam=2)

        def score(members):
            point = small_pool.evaluate_subset(members).objective
            return f_beta(point.precision, point.recall, beta)

        singles = max(score((rule_id,)) for rule_id in small_pool.ids)
        optimum = max(
            score(members)
            for size in range(1, len(small_pool) + 1)
            for members in combinations(small_pool.ids, size)
        )
        assert singles - 1e-9 <= result.train_fbeta <= optimum + 1e-9
        assert result.train_fbeta == pytest.approx(score(result.subset.members))
        assert result.steps == len(result.subset.members)

    def test_wide_beam_reaches_optimum(self, small_pool):
        """Test that a beam of 10 finds the best of all 63 subsets by F1."""
        result = greedy_fbeta(small_pool, 1.0, beam=10)
        assert result.train_fbeta == pytest.approx(0.8)
        assert len(result.subset.members) == 2

    def test_redundant_rule_not_added(self, pool_factory):
        """Test that a duplicate rule brings no strict improvement."""
        pool = pool_factory([[1, 1, 0, 0], [1, 1, 0, 0]], [1, 0, 1, 0])
        result = greedy_fbeta(pool, 1.0, beam=3)
        assert result.subset.members == (0,)

    def test_validation_score(self, small_pool):
        """Test F-beta of the chosen subset on another split."""
        validation = small_pool.view.dataset.view(np.arange(12), name="validation")
        result = greedy_fbeta(small_pool, 1.0, beam=1, validation=validation)
        assert result.validation_fbeta == pytest.approx(result.train_fbeta)

    def test_invalid_beam(self, small_pool):
        """Test that the beam must hold a subset."""
        with pytest.raises(InvalidConfigurationError):
            greedy_fbeta(small_pool, 1.0, beam=0)

    @pytest.mark.parametrize("beta", [0.0, -1.0])
    def test_invalid_beta(self, small_pool, beta):
        """Test that F-beta needs a positive beta."""
        with pytest.raises(InvalidConfigurationError):
            greedy_fbeta(small_pool, beta, beam=1)


class TestFrontSelect:
    """Test picking one entry from a finished front."""

    @pytest.fixture
    def front(self):
        points = [(0.2, 0.9), (0.4, 0.8), (0.6, 0.6), (0.8, 0.4)]
        return make_pareto_front([point_solution(r, p, (i,)) for i, (r, p) in enumerate(points)])

    def test_precision_threshold(self, front):
        """Test the highest-recall entry that reaches the precision floor."""
        chosen = front_select(front, min_precision=0.7)
        assert (chosen.point.precision, chosen.point.recall) == (0.8, 0.4)

    def test_unreachable_threshold(self, front):
        """Test that no qualifying entry gives None."""
        assert front_select(front, min_precision=0.95) is None

    @pytest.mark.parametrize("beta,expected", [(1.0, (0.6, 0.6)), (0.01, (0.9, 0.2))])
    def test_fbeta(self, front, beta, expected):
        """Test the highest F-beta entry."""
        chosen = front_select(front, beta=beta)
        assert (chosen.point.precision, chosen.point.recall) == expected

    @pytest.mark.parametrize("kwargs", [{}, {"min_precision": 0.5, "beta": 1.0}])
    def test_exactly_one_criterion(self, front, kwargs):
        """Test that one criterion must be given."""
        with pytest.raises(InvalidConfigurationError):
            front_select(front, **kwargs)
