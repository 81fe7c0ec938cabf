"""
Comparison methods: NSGA-II with an unbounded external archive, greedy F-beta
forward selection with beam search, and Stage-2 selectors on a finished front.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import InvalidConfigurationError, RuleError
from app.core.seeding import make_rng
from app.services.dataset import DatasetView
from app.services.pareto import ParetoFront, Solution, hypervolume, make_pareto_front, reevaluate
from app.services.rules import ObjectivePoint, RulePool, RuleSubset, f_beta, fbeta_from_counts

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class NsgaConfig:
    """NSGA-II parameters; rates are probabilities."""
    population: int = field(default_factory=lambda: settings.NSGA_POPULATION)
    generations: int = field(default_factory=lambda: settings.NSGA_GENERATIONS)
    mutation_rate: float = field(default_factory=lambda: settings.NSGA_MUTATION_RATE)
    crossover_rate: float = field(default_factory=lambda: settings.NSGA_CROSSOVER_RATE)
    seed: int = 0
    history_every: int = 10

    def __post_init__(self) -> None:
        if self.population < 4 or self.population % 2:
            raise InvalidConfigurationError("population must be even and at least 4", config_key="population")
        if self.generations < 0:
            raise InvalidConfigurationError("generations must be non-negative", config_key="generations")
        for key in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise InvalidConfigurationError(f"{key} must be within [0, 1]", config_key=key)
        if self.history_every < 1:
            raise InvalidConfigurationError("history_every must be at least 1", config_key="history_every")


@dataclass
class NsgaHistoryPoint:
    generation: int
    seconds: float
    train_hv: float
    validation_hv: Optional[float]


@dataclass
class NsgaResult:
    archive: ParetoFront
    population_front: ParetoFront
    history: List[NsgaHistoryPoint]
    evaluations: int


def non_dominated_ranks(objectives: np.ndarray) -> np.ndarray:
    """Fast non-dominated sort of maximised objectives; rank 0 is the first front."""
    n = objectives.shape[0]
    geq = np.all(objectives[:, None, :] >= objectives[None, :, :], axis=2)
    gt = np.any(objectives[:, None, :] > objectives[None, :, :], axis=2)
    dominates = geq & gt  # dominates[i, j]: i dominates j
    dominated_by = dominates.sum(axis=0)
    ranks = np.full(n, -1, dtype=np.int64)
    current = np.flatnonzero(dominated_by == 0)
    rank = 0
    while current.size:
        ranks[current] = rank
        dominated_by = dominated_by - dominates[current].sum(axis=0)
        dominated_by[ranks >= 0] = -1
        current = np.flatnonzero(dominated_by == 0)
        rank += 1
    return ranks


def crowding_distance(objectives: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    """Crowding distance within each rank; boundary points get infinity."""
    distance = np.zeros(objectives.shape[0])
    for rank in np.unique(ranks):
        members = np.flatnonzero(ranks == rank)
        if members.size <= 2:
            distance[members] = np.inf
            continue
        for column in range(objectives.shape[1]):
            values = objectives[members, column]
            order = members[np.argsort(values, kind="stable")]
            spread = values.max() - values.min()
            distance[order[0]] = distance[order[-1]] = np.inf
            if spread == 0:
                continue
            sorted_values = objectives[order, column]
            distance[order[1:-1]] += (sorted_values[2:] - sorted_values[:-2]) / spread
    return distance


class NsgaRunner:
    """NSGA-II over rule-subset bitstrings (bit i selects the i-th pool rule)."""

    def __init__(self, pool: RulePool, cfg: Optional[NsgaConfig] = None, validation: Optional[DatasetView] = None):
        if not len(pool):
            raise RuleError("NSGA-II needs a non-empty rule pool")
        self.pool = pool
        self.cfg = cfg or NsgaConfig()
        self.validation = validation
        self.rng = make_rng(self.cfg.seed, "nsga2")
        self.dense = pool.matrix().astype(np.float32)
        self.positive = pool.view.positive_mask
        self.n_positive = pool.view.n_positive
        self.ids = np.array(pool.ids, dtype=np.int64)
        self.archive = ParetoFront([])
        self.evaluations = 0

    def evaluate(self, genomes: np.ndarray) -> Tuple[np.ndarray, List[Solution]]:
        """(precision, recall) per genome; every genome is also offered to the archive."""
        covered_rows = (genomes.astype(np.float32) @ self.dense) > 0
        covered = covered_rows.sum(axis=1)
        true_positive = (covered_rows & self.positive).sum(axis=1)
        solutions = [
            Solution(
                tuple(self.ids[genome].tolist()),
                ObjectivePoint.from_counts(int(tp), int(c), self.n_positive),
            )
            for genome, tp, c in zip(genomes, true_positive, covered)
        ]
        self.evaluations += len(solutions)
        self.archive = make_pareto_front(list(self.archive.entries) + solutions)
        objectives = np.array([s.point.as_tuple() for s in solutions], dtype=np.float64)
        return objectives, solutions

    def initial_population(self) -> np.ndarray:
        size, length = self.cfg.population, len(self.pool)
        genomes = self.rng.random((size, length)) < 1.0 / length
        for row in np.flatnonzero(~genomes.any(axis=1)):
            genomes[row, self.rng.integers(length)] = True
        return genomes

    def tournament(self, ranks: np.ndarray, crowding: np.ndarray, count: int) -> np.ndarray:
        """Binary tournaments on (rank, crowding); the first contestant wins ties."""
        first = self.rng.integers(ranks.shape[0], size=count)
        second = self.rng.integers(ranks.shape[0], size=count)
        second_wins = (ranks[second] < ranks[first]) | (
            (ranks[second] == ranks[first]) & (crowding[second] > crowding[first])
        )
        return np.where(second_wins, second, first)

    def vary(self, parents: np.ndarray) -> np.ndarray:
        """Uniform crossover on consecutive pairs followed by per-bit mutation."""
        children = parents.copy()
        for i in range(0, parents.shape[0] - 1, 2):
            if self.rng.random() < self.cfg.crossover_rate:
                swap = self.rng.random(parents.shape[1]) < 0.5
                children[i, swap] = parents[i + 1, swap]
                children[i + 1, swap] = parents[i, swap]
        flips = self.rng.random(children.shape) < self.cfg.mutation_rate
        return children ^ flips

    def record(self, history: List[NsgaHistoryPoint], generation: int, started: float) -> None:
        validation_hv = None
        if self.validation is not None:
            validation_hv = float(hypervolume(reevaluate(self.archive.entries, self.pool, self.validation)))
        history.append(
            NsgaHistoryPoint(generation, time.perf_counter() - started, self.archive.hypervolume, validation_hv)
        )

    def run(self) -> NsgaResult:
        cfg = self.cfg
        started = time.perf_counter()
        history: List[NsgaHistoryPoint] = []

        genomes = self.initial_population()
        objectives, solutions = self.evaluate(genomes)
        ranks = non_dominated_ranks(objectives)
        crowding = crowding_distance(objectives, ranks)
        self.record(history, 0, started)

        for generation in range(1, cfg.generations + 1):
            parents = genomes[self.tournament(ranks, crowding, cfg.population)]
            offspring = self.vary(parents)
            child_objectives, child_solutions = self.evaluate(offspring)

            merged = np.vstack([genomes, offspring])
            merged_objectives = np.vstack([objectives, child_objectives])
            merged_solutions = solutions + child_solutions
            merged_ranks = non_dominated_ranks(merged_objectives)
            merged_crowding = crowding_distance(merged_objectives, merged_ranks)
            survivors = np.lexsort((np.arange(merged.shape[0]), -merged_crowding, merged_ranks))[: cfg.population]

            genomes, objectives = merged[survivors], merged_objectives[survivors]
            solutions = [merged_solutions[i] for i in survivors]
            ranks, crowding = merged_ranks[survivors], merged_crowding[survivors]

            if generation % cfg.history_every == 0 or generation == cfg.generations:
                self.record(history, generation, started)
                logger.debug(
                    "nsga2_generation",
                    generation=generation,
                    archive=len(self.archive),
                    train_hv=self.archive.hypervolume,
                )

        archive = self._with_coverage(self.archive)
        population_front = make_pareto_front(solutions)
        logger.info(
            "nsga2_completed",
            generations=cfg.generations,
            evaluations=self.evaluations,
            archive=len(archive),
            train_hv=archive.hypervolume,
        )
        return NsgaResult(archive, population_front, history, self.evaluations)

    def _with_coverage(self, front: ParetoFront) -> ParetoFront:
        return ParetoFront(reevaluate(front.entries, self.pool, self.pool.view))


def nsga2_run(pool: RulePool, cfg: Optional[NsgaConfig] = None, validation: Optional[DatasetView] = None) -> ParetoFront:
    """Archive front of an NSGA-II run."""
    return NsgaRunner(pool, cfg, validation).run().archive


@dataclass
class GreedyResult:
    subset: RuleSubset
    beta: float
    train_fbeta: float
    validation_fbeta: Optional[float]
    steps: int


def greedy_fbeta(
    pool: RulePool,
    beta: float,
    beam: Optional[int] = None,
    validation: Optional[DatasetView] = None,
) -> GreedyResult:
    """
    Forward selection by training F-beta with a beam of `beam` subsets.

    Each step extends every beam member by every missing rule and keeps the
    best `beam` distinct subsets; the search stops as soon as a step does not
    strictly improve the best score.
    """
    beam = beam if beam is not None else settings.GREEDY_BEAM
    if beam < 1:
        raise InvalidConfigurationError("beam must be at least 1", config_key="beam")
    if not beta > 0:
        raise InvalidConfigurationError("beta must be positive", config_key="beta")
    if not len(pool):
        raise RuleError("Greedy selection needs a non-empty rule pool")

    matrix = pool.matrix()
    dense = matrix.astype(np.float32)
    positive = pool.view.positive_mask
    n_positive = pool.view.n_positive
    rule_covered = matrix.sum(axis=1)
    rule_positive = (matrix & positive).sum(axis=1)
    ids = pool.ids

    states: List[Tuple[Tuple[int, ...], np.ndarray]] = [((), np.zeros(pool.view.n_rows, dtype=bool))]
    best_members: Tuple[int, ...] = ()
    best_score = 0.0
    steps = 0
    while True:
        scored: Dict[Tuple[int, ...], float] = {}
        for members, bits in states:
            overlap = np.rint(dense @ bits.astype(np.float32))
            overlap_positive = np.rint(dense @ (bits & positive).astype(np.float32))
            covered = bits.sum() + rule_covered - overlap
            true_positive = (bits & positive).sum() + rule_positive - overlap_positive
            scores = fbeta_from_counts(true_positive, covered, n_positive, beta)
            present = set(members)
            for position, rule_id in enumerate(ids):
                if rule_id in present:
                    continue
                candidate = tuple(sorted(present | {rule_id}))
                scored.setdefault(candidate, float(scores[position]))
        if not scored:
            break
        ranked = sorted(scored.items(), key=lambda item: (-item[1], len(item[0]), item[0]))[:beam]
        if ranked[0][1] <= best_score + 1e-12:
            break
        best_members, best_score = ranked[0]
        states = [(members, pool.subset_bits(members)) for members, _ in ranked]
        steps += 1

    subset = pool.evaluate_subset(best_members)
    validation_score = None
    if validation is not None:
        point = pool.evaluate_subset(best_members, validation).objective
        validation_score = f_beta(point.precision, point.recall, beta)
    logger.info("greedy_fbeta_completed", beta=beta, beam=beam, steps=steps, members=len(best_members), train_fbeta=best_score)
    return GreedyResult(subset, beta, best_score, validation_score, steps)


def front_select(
    front: Sequence[Solution],
    min_precision: Optional[float] = None,
    beta: Optional[float] = None,
) -> Optional[Solution]:
    """
    Stage-2 choice of one front entry.

    With `min_precision` the highest-recall entry reaching that precision is
    returned (None when no entry qualifies); with `beta` the entry with the
    highest F-beta, ties going to higher precision.
    """
    if (min_precision is None) == (beta is None):
        raise InvalidConfigurationError("Pass exactly one of min_precision or beta", config_key="criterion")
    entries = list(front)
    if min_precision is not None:
        eligible = [s for s in entries if s.point.precision >= min_precision]
        if not eligible:
            return None
        return max(eligible, key=lambda s: (s.point.recall, s.point.precision))
    if not entries:
        return None
    return max(entries, key=lambda s: (f_beta(s.point.precision, s.point.recall, beta), s.point.precision))
