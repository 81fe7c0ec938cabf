"""
Unit tests for solution selection on the front.
"""
import math
from itertools import combinations

import numpy as np
import pytest

from conftest import coverage_front, point_solution

from app.core.exceptions import EmptyFrontError, InvalidConfigurationError, SelectionError, UnknownSsfMethodError
from app.services.dataset import Coverage
from app.services.pareto import ParetoFront, Solution, hv_contribution, hypervolume, igd, igd_plus, make_pareto_front
from app.services.rules import ObjectivePoint
from app.services.ssf import (
    SsfMethod,
    SsfName,
    equi_arc_indices,
    pam,
    sample_equi_arc,
    sample_equi_jaccard,
    select_greedy_indicator,
    select_ssf,
    tsp_tour,
)

DIAGONAL = [(0.1 * (i + 1), 1.0 - 0.1 * i) for i in range(8)]


def random_front(rng: np.random.Generator, max_size: int = 12) -> ParetoFront:
    """Anti-correlated random points, so every point is non-dominated."""
    m = int(rng.integers(4, max_size + 1))
    recall = np.sort(rng.random(m))
    precision = np.sort(rng.random(m))[::-1]
    return make_pareto_front(
        [point_solution(float(r), float(p), (i,)) for i, (r, p) in enumerate(zip(recall, precision))]
    )


def medoid_cost(distance: np.ndarray, medoids) -> float:
    return float(distance[:, list(medoids)].min(axis=1).sum())


class TestSsfMethod:
    """Test method parsing and validation."""

    def test_parse_every_name(self):
        """Test that all nine method names parse."""
        names = ["equi-spaced", "equi-dist", "equi-jaccard", "hv-ss", "igd-ss", "igd+-ss",
                 "hvc-ss", "k-medoids-pr", "k-medoids-jaccard"]
        assert [SsfName.parse(n).value for n in names] == names

    def test_unknown_name(self):
        """Test that unknown names are rejected."""
        with pytest.raises(UnknownSsfMethodError):
            SsfMethod.parse("random-ss")

    def test_k_must_be_positive(self):
        """Test that k below 1 is rejected."""
        with pytest.raises(InvalidConfigurationError):
            SsfMethod(SsfName.HV_SS, k=0)

    def test_parse_keeps_explicit_zero(self):
        """Test that an explicit k=0 is rejected rather than defaulted."""
        with pytest.raises(InvalidConfigurationError):
            SsfMethod.parse("hv-ss", k=0)


class TestSelectSsf:
    """Test the dispatcher's contract."""

    @pytest.mark.parametrize("name", list(SsfName))
    def test_returns_k_distinct_entries(self, name):
        """Test that every method picks k distinct front entries in recall order."""
        front = coverage_front(DIAGONAL)
        selected = select_ssf(front, SsfMethod(name, k=3), seed=1)

        assert len(selected) == 3
        assert len({s.members for s in selected}) == 3
        assert all(any(s is e for e in front.entries) for s in selected)
        recalls = [s.recall for s in selected]
        assert recalls == sorted(recalls)

    @pytest.mark.parametrize("name", list(SsfName))
    def test_deterministic(self, name):
        """Test that equal fronts and seeds give equal selections."""
        front = coverage_front(DIAGONAL)
        first = select_ssf(front, SsfMethod(name, k=4), seed=7)
        second = select_ssf(front, SsfMethod(name, k=4), seed=7)
        assert [s.members for s in first] == [s.members for s in second]

    def test_small_front_returned_whole(self, reference_front):
        """Test that fronts no larger than k are returned unchanged."""
        selected = select_ssf(reference_front, SsfMethod(SsfName.HVC_SS, k=5))
        assert [s.members for s in selected] == reference_front.members()

    def test_empty_front(self):
        """Test that selection needs a non-empty front."""
        with pytest.raises(EmptyFrontError):
            select_ssf(ParetoFront([]), SsfMethod(SsfName.HV_SS, k=2))

    @pytest.mark.parametrize("name", [SsfName.EQUI_JACCARD, SsfName.KMEDOIDS_JACCARD])
    def test_coverage_methods_need_coverage(self, reference_front, name):
        """Test that coverage-space methods reject solutions without bitsets."""
        with pytest.raises(SelectionError):
            select_ssf(reference_front, SsfMethod(name, k=2))

    def test_previous_front_reference(self, reference_front):
        """Test hvc-ss against the previous round's front."""
        previous = ParetoFront(reference_front.entries[1:4])
        method = SsfMethod(SsfName.HVC_SS, k=2, hvc_reference="previous")
        selected = select_ssf(reference_front, method, previous_front=previous)
        expected = select_greedy_indicator(reference_front, 2, "hvc", previous)
        assert [s.members for s in selected] == [s.members for s in expected]


class TestEquiArc:
    """Test uniform sampling along the front."""

    def test_manhattan_reference_front(self, reference_front):
        """Test staircase positions 0, 1.5, 3, 5, 7 with targets 0, 3.5, 7."""
        selected = sample_equi_arc(reference_front, 3, "manhattan")
        assert [(s.recall, s.precision) for s in selected] == [(1, 4), (2.5, 2.5), (5, 1)]

    def test_euclidean_reference_front(self, reference_front):
        """Test chord lengths picking the same middle point."""
        selected = sample_equi_arc(reference_front, 3, "euclidean")
        assert [(s.recall, s.precision) for s in selected] == [(1, 4), (2.5, 2.5), (5, 1)]

    def test_even_positions(self):
        """Test evenly spaced positions and the single-sample case."""
        assert equi_arc_indices([0, 1, 2, 3, 4], 3) == [0, 2, 4]
        assert equi_arc_indices([0, 1, 2, 3, 4], 1) == [2]

    def test_nearest_position(self):
        """Test that a target maps to the nearest cumulative position."""
        assert equi_arc_indices([0, 0.1, 0.2, 10], 3) == [0, 2, 3]

    def test_duplicates_topped_up(self):
        """Test that a target landing on a chosen entry is refilled."""
        assert equi_arc_indices([0, 10, 10.1, 10.2], 4) == [0, 1, 2, 3]


class TestTsp:
    """Test the tour used by equi-jaccard."""

    def test_tour_on_a_line(self):
        """Test that points on a line are visited in order."""
        positions = np.arange(6, dtype=np.float64)
        distance = np.abs(positions[:, None] - positions[None, :])
        assert tsp_tour(distance, np.random.default_rng(0)) == list(range(6))

    def test_tour_is_permutation(self):
        """Test a random metric instance."""
        rng = np.random.default_rng(3)
        coords = rng.random((9, 2))
        distance = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        tour = tsp_tour(distance, np.random.default_rng(1))
        assert tour[0] == 0
        assert sorted(tour) == list(range(9))

    def test_zero_passes_rejected(self):
        """Test that max_passes=0 is rejected rather than defaulted."""
        distance = np.ones((5, 5)) - np.eye(5)
        with pytest.raises(InvalidConfigurationError):
            tsp_tour(distance, np.random.default_rng(0), max_passes=0)


class TestEquiJaccard:
    """Test equi-spaced sampling along the coverage tour."""

    @staticmethod
    def paired_front():
        """Entries 0/2 and 1/3 have near-identical coverage; the two pairs share no rows."""
        mask = np.zeros(20, dtype=bool)
        mask[:10] = True
        rows = {0: range(0, 8), 2: range(0, 7), 1: range(10, 18), 3: range(10, 17)}
        solutions = []
        for i in range(4):
            bits = np.zeros(20, dtype=bool)
            bits[list(rows[i])] = True
            point = ObjectivePoint(0.9 - 0.1 * i, 0.1 * (i + 1))
            solutions.append(Solution((i,), point, Coverage.from_bits(bits, mask)))
        return make_pareto_front(solutions)

    @pytest.mark.parametrize("seed", range(4))
    def test_one_pick_per_near_duplicate_pair(self, seed):
        """Test that k=2 takes one entry from each pair."""
        selected = sample_equi_jaccard(self.paired_front(), 2, seed=seed)
        members = {s.members[0] for s in selected}
        assert len(members) == 2
        assert len(members & {0, 2}) == 1
        assert len(members & {1, 3}) == 1

    def test_through_select_ssf(self):
        """Test the same picks through the method dispatcher."""
        selected = select_ssf(self.paired_front(), SsfMethod(SsfName.EQUI_JACCARD, k=2))
        assert sorted(s.members[0] for s in selected) == [1, 2]


class TestGreedyIndicators:
    """Test greedy indicator-based selection."""

    def test_hv_single(self, reference_front):
        """Test that hv-ss with k=1 picks the largest product p*r."""
        (selected,) = select_greedy_indicator(reference_front, 1, "hv")
        assert (selected.recall, selected.precision) == (4, 2)

    def test_hvc_single(self, reference_front):
        """Test that hvc-ss with k=1 picks the largest exclusive contribution."""
        (selected,) = select_greedy_indicator(reference_front, 1, "hvc")
        assert (selected.recall, selected.precision) == (4, 2)

    def test_igd_single(self, reference_front):
        """Test that igd-ss with k=1 picks the entry closest to all others."""
        (selected,) = select_greedy_indicator(reference_front, 1, "igd")
        assert (selected.recall, selected.precision) == (2.5, 2.5)

    def test_full_selection_is_whole_front(self, reference_front):
        """Test that k = |front| selects everything."""
        for indicator in ("hv", "hvc", "igd", "igd+"):
            selected = select_greedy_indicator(reference_front, 5, indicator)
            assert [s.members for s in selected] == reference_front.members()

    def test_unknown_indicator(self, reference_front):
        """Test that unknown indicators are rejected."""
        with pytest.raises(UnknownSsfMethodError):
            select_greedy_indicator(reference_front, 1, "r2")

    def test_single_pick_matches_exhaustive(self):
        """Test k=1 greedy picks against exhaustive optima on 100 random fronts."""
        rng = np.random.default_rng(17)
        scorers = {
            "hv": (lambda front, chosen: hypervolume(chosen), max),
            "hvc": (lambda front, chosen: hv_contribution(chosen, front.entries), max),
            "igd": (lambda front, chosen: igd(chosen, front.entries), min),
            "igd+": (lambda front, chosen: igd_plus(chosen, front.entries), min),
        }
        for _ in range(100):
            front = random_front(rng)
            for indicator, (score, best) in scorers.items():
                selected = select_greedy_indicator(front, 1, indicator)
                optimum = best(score(front, [entry]) for entry in front.entries)
                assert score(front, selected) == pytest.approx(optimum, abs=1e-9)

    def test_hv_greedy_bound(self):
        """Test greedy hv-ss against exhaustive k-subsets for k <= 3."""
        rng = np.random.default_rng(23)
        exact_matches = 0
        trials = 0
        bound = 1 - 1 / math.e
        for _ in range(100):
            front = random_front(rng)
            for k in (2, 3):
                selected = select_greedy_indicator(front, k, "hv")
                optimum = max(hypervolume(c) for c in combinations(front.entries, k))
                greedy = hypervolume(selected)
                assert greedy >= bound * optimum - 1e-12
                trials += 1
                exact_matches += math.isclose(greedy, optimum, rel_tol=1e-12)
        assert 0 < exact_matches <= trials

    @staticmethod
    def greedy_chain(entries, k, score, best):
        """Reference greedy: each step adds the entry with the best score of the grown selection."""
        chosen = []
        for _ in range(k):
            rest = [entry for entry in entries if all(entry is not c for c in chosen)]
            chosen.append(best(rest, key=lambda entry: score(chosen + [entry])))
        return chosen

    @pytest.mark.parametrize("indicator", ["hvc", "igd", "igd+"])
    def test_small_k_against_oracle_and_exhaustive(self, indicator):
        """Test k <= 3 picks against a stepwise oracle and exhaustive k-subsets on 100 random fronts."""
        scorers = {
            "hvc": (lambda front, chosen: hv_contribution(chosen, front.entries), max),
            "igd": (lambda front, chosen: igd(chosen, front.entries), min),
            "igd+": (lambda front, chosen: igd_plus(chosen, front.entries), min),
        }
        score, best = scorers[indicator]
        rng = np.random.default_rng(29)
        exact_matches = 0
        for _ in range(100):
            front = random_front(rng)
            for k in (1, 2, 3):
                selected = select_greedy_indicator(front, k, indicator)
                value = score(front, selected)
                oracle = self.greedy_chain(front.entries, k, lambda chosen: score(front, chosen), best)
                assert value == pytest.approx(score(front, oracle), abs=1e-9)

                optimum = best(score(front, list(c)) for c in combinations(front.entries, k))
                if best is max:
                    assert value <= optimum + 1e-9
                else:
                    assert value >= optimum - 1e-9
                exact_matches += math.isclose(value, optimum, abs_tol=1e-9)
        # every k=1 pick is optimal, and some larger selections are too
        assert exact_matches > 100

    def test_hvc_against_previous_front(self):
        """Test hvc-ss against another front that shares some solutions."""
        rng = np.random.default_rng(31)
        for _ in range(50):
            front = random_front(rng)
            shared = [entry for entry in front.entries if rng.random() < 0.5]
            others = [point_solution(float(r), float(p), (100 + i,)) for i, (r, p) in enumerate(rng.random((4, 2)))]
            previous = make_pareto_front(shared + others)
            for k in (1, 2, 3):
                selected = select_greedy_indicator(front, k, "hvc", previous)
                oracle = self.greedy_chain(
                    front.entries, k, lambda chosen: hv_contribution(chosen, previous.entries), max
                )
                assert hv_contribution(selected, previous.entries) == pytest.approx(
                    hv_contribution(oracle, previous.entries), abs=1e-9
                )

    def test_large_front(self):
        """Test a 400-entry front with k=10."""
        rng = np.random.default_rng(37)
        recall = np.sort(rng.random(400))
        precision = np.sort(rng.random(400))[::-1]
        front = make_pareto_front(
            [point_solution(float(r), float(p), (i,)) for i, (r, p) in enumerate(zip(recall, precision))]
        )
        for indicator in ("hv", "hvc", "igd", "igd+"):
            selected = select_greedy_indicator(front, 10, indicator)
            assert len({s.members for s in selected}) == 10
            first = select_greedy_indicator(front, 1, indicator)
            assert first[0] in selected


class TestKMedoids:
    """Test PAM and the k-medoids selectors."""

    def test_single_medoid_matches_exhaustive(self):
        """Test that k=1 picks the point with the smallest distance sum."""
        rng = np.random.default_rng(5)
        for _ in range(50):
            coords = rng.random((int(rng.integers(2, 9)), 2))
            distance = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
            (medoid,) = pam(distance, 1)
            assert medoid_cost(distance, [medoid]) == pytest.approx(
                min(medoid_cost(distance, [i]) for i in range(len(coords)))
            )

    def test_swap_local_optimum(self):
        """Test that no single medoid swap improves the returned solution."""
        rng = np.random.default_rng(6)
        for _ in range(50):
            m = int(rng.integers(3, 9))
            k = int(rng.integers(1, min(3, m - 1) + 1))
            coords = rng.random((m, 2))
            distance = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
            medoids = pam(distance, k)
            cost = medoid_cost(distance, medoids)
            for position in range(k):
                for candidate in set(range(m)) - set(medoids):
                    trial = list(medoids)
                    trial[position] = candidate
                    assert medoid_cost(distance, trial) >= cost - 1e-12

    def test_two_clusters_match_exhaustive(self):
        """Test that well separated clusters get one medoid each."""
        coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.2]])
        distance = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        medoids = pam(distance, 2)
        best = min(combinations(range(6), 2), key=lambda c: medoid_cost(distance, c))
        assert medoid_cost(distance, medoids) == pytest.approx(medoid_cost(distance, best))
        assert medoids == [0, 3]

    def test_zero_iterations_rejected(self):
        """Test that max_iter=0 is rejected rather than defaulted."""
        distance = np.ones((4, 4)) - np.eye(4)
        with pytest.raises(InvalidConfigurationError):
            pam(distance, 2, max_iter=0)

    def test_identical_coverages(self):
        """Test that an all-zero Jaccard matrix picks the first k entries."""
        mask = np.array([True, False, False, True])
        bits = np.array([True, True, False, False])
        solutions = [
            Solution((i,), ObjectivePoint(1.0 - 0.1 * i, 0.1 * (i + 1)), Coverage.from_bits(bits.copy(), mask))
            for i in range(5)
        ]
        front = make_pareto_front(solutions)
        selected = select_ssf(front, SsfMethod(SsfName.KMEDOIDS_JACCARD, k=3))
        assert [s.members for s in selected] == [(0,), (1,), (2,)]
