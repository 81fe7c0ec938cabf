"""
PORS: iterative expansion of a Pareto front of rule subsets.

Each round selects k solutions from the current front (SSF), extends each of
them by every pool rule it does not already contain, and merges the
candidates with the front. The loop stops at a fixed point or after
`max_rounds` rounds.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import InvalidConfigurationError, RuleError
from app.core.seeding import derive_seed
from app.services.dataset import Coverage, DatasetView
from app.services.pareto import ParetoFront, Solution, hypervolume, make_pareto_front, reevaluate
from app.services.rules import ObjectivePoint, RulePool
from app.services.ssf import SsfMethod, SsfName, select_ssf

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class PorsConfig:
    """Parameters of one PORS run."""
    k: int = field(default_factory=lambda: settings.SSF_K)
    max_rounds: int = field(default_factory=lambda: settings.MAX_ROUNDS)
    ssf: SsfName = SsfName.HVC_SS
    seed: int = 0
    hvc_reference: Literal["current", "previous"] = "current"
    threads: int = field(default_factory=lambda: settings.THREADS)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidConfigurationError("k must be at least 1", config_key="k")
        if self.max_rounds < 1:
            raise InvalidConfigurationError("max_rounds must be at least 1", config_key="max_rounds")
        if self.threads < 1:
            raise InvalidConfigurationError("threads must be at least 1", config_key="threads")
        if isinstance(self.ssf, str):
            object.__setattr__(self, "ssf", SsfName.parse(self.ssf))

    @property
    def method(self) -> SsfMethod:
        return SsfMethod(self.ssf, self.k, self.hvc_reference)


@dataclass
class PorsSnapshot:
    """State of the front after one round (round 0 is the singleton front)."""
    iteration: int
    front: ParetoFront
    train_hv: float
    validation_hv: Optional[float]
    seconds: float
    n_candidates: int = 0


@dataclass
class PorsTrace:
    snapshots: List[PorsSnapshot]
    converged_at: Optional[int]
    config: PorsConfig

    @property
    def final(self) -> PorsSnapshot:
        return self.snapshots[-1]

    def best_snapshot(self) -> PorsSnapshot:
        """Highest validation HV (training HV without a validation split); earliest wins ties."""
        def score(snapshot: PorsSnapshot) -> float:
            return snapshot.validation_hv if snapshot.validation_hv is not None else snapshot.train_hv

        best = self.snapshots[0]
        for snapshot in self.snapshots[1:]:
            if score(snapshot) > score(best):
                best = snapshot
        return best


class _CandidateBuilder:
    """Counts of S u {r} for every pool rule r, computed with one matrix product per S."""

    def __init__(self, pool: RulePool):
        self.pool = pool
        view = pool.view
        self.matrix = pool.matrix()
        self.dense = self.matrix.astype(np.float32)
        self.positive = view.positive_mask
        self.n_positive = view.n_positive
        self.rule_covered = self.matrix.sum(axis=1)
        self.rule_positive = (self.matrix & self.positive).sum(axis=1)
        self.ids = np.array(pool.ids, dtype=np.int64)

    def bits_of(self, solution: Solution) -> np.ndarray:
        if solution.coverage is not None:
            return solution.coverage.bits
        return self.pool.subset_bits(solution.members)

    def extend(self, solution: Solution) -> List[Solution]:
        base = self.bits_of(solution)
        base_positive = base & self.positive
        overlap = np.rint(self.dense @ base.astype(np.float32)).astype(np.int64)
        overlap_positive = np.rint(self.dense @ base_positive.astype(np.float32)).astype(np.int64)
        covered = int(base.sum()) + self.rule_covered - overlap
        true_positive = int(base_positive.sum()) + self.rule_positive - overlap_positive

        members = set(solution.members)
        candidates = []
        for position, rule_id in enumerate(self.ids.tolist()):
            if rule_id in members:
                continue
            point = ObjectivePoint.from_counts(
                int(true_positive[position]), int(covered[position]), self.n_positive
            )
            candidates.append(Solution(solution.members + (rule_id,), point))
        return candidates

    def materialize(self, front: ParetoFront) -> ParetoFront:
        entries = []
        for solution in front.entries:
            if solution.coverage is None:
                coverage = Coverage.from_bits(self.pool.subset_bits(solution.members), self.positive)
                solution = Solution(solution.members, solution.point, coverage)
            entries.append(solution)
        return ParetoFront(entries)


def singleton_front(pool: RulePool) -> ParetoFront:
    """Pareto front of all one-rule subsets."""
    if not len(pool):
        raise RuleError("PORS needs a non-empty rule pool")
    view = pool.view
    singletons = [
        Solution(
            (rule.id,),
            ObjectivePoint.from_counts(rule.coverage.n_positive, rule.coverage.n_covered, view.n_positive),
            rule.coverage,
        )
        for rule in pool
    ]
    return make_pareto_front(singletons)


def expand_candidates(
    selected: Sequence[Solution],
    pool: RulePool,
    threads: Optional[int] = None,
    _builder: Optional[_CandidateBuilder] = None,
) -> List[Solution]:
    """Every S u {r} for S in `selected` and r in the pool with r not in S, in selection order."""
    if not selected:
        return []
    builder = _builder or _CandidateBuilder(pool)
    with ThreadPoolExecutor(max_workers=threads if threads is not None else settings.THREADS) as executor:
        batches = list(executor.map(builder.extend, selected))
    return [candidate for batch in batches for candidate in batch]


def expand_front(
    front: ParetoFront,
    selected: Sequence[Solution],
    pool: RulePool,
    threads: Optional[int] = None,
) -> ParetoFront:
    """Merge the single-rule extensions of `selected` into `front`."""
    builder = _CandidateBuilder(pool)
    candidates = expand_candidates(selected, pool, threads, builder)
    if not candidates:
        return front
    return builder.materialize(make_pareto_front(list(front.entries) + candidates))


def validation_hypervolume(front: ParetoFront, pool: RulePool, view: DatasetView) -> float:
    """HV of the front's subsets re-evaluated on another split."""
    return float(hypervolume(reevaluate(front.entries, pool, view)))


def run_pors(
    pool: RulePool,
    cfg: Optional[PorsConfig] = None,
    validation: Optional[DatasetView] = None,
) -> PorsTrace:
    """
    Run PORS from the singleton front until the front stops changing or
    `cfg.max_rounds` rounds have run. One snapshot is recorded per round.
    """
    cfg = cfg or PorsConfig()
    method = cfg.method
    ssf_seed = derive_seed(cfg.seed, "ssf")
    builder = _CandidateBuilder(pool)
    started = time.perf_counter()

    def snapshot(iteration: int, front: ParetoFront, n_candidates: int) -> PorsSnapshot:
        return PorsSnapshot(
            iteration=iteration,
            front=front,
            train_hv=front.hypervolume,
            validation_hv=validation_hypervolume(front, pool, validation) if validation is not None else None,
            seconds=time.perf_counter() - started,
            n_candidates=n_candidates,
        )

    front = singleton_front(pool)
    previous: Optional[ParetoFront] = None
    snapshots = [snapshot(0, front, 0)]
    converged_at: Optional[int] = None
    logger.info("pors_started", pool=len(pool), ssf=method.name.value, k=cfg.k, front=len(front))

    for iteration in range(1, cfg.max_rounds + 1):
        selected = select_ssf(front, method, seed=ssf_seed + iteration, previous_front=previous)
        candidates = expand_candidates(selected, pool, cfg.threads, builder)
        expanded = builder.materialize(make_pareto_front(list(front.entries) + candidates))
        snapshots.append(snapshot(iteration, expanded, len(candidates)))
        logger.info(
            "pors_iteration_completed",
            iteration=iteration,
            selected=len(selected),
            candidates=len(candidates),
            front=len(expanded),
            train_hv=snapshots[-1].train_hv,
            validation_hv=snapshots[-1].validation_hv,
        )
        if expanded == front:
            converged_at = iteration
            break
        previous, front = front, expanded

    logger.info("pors_completed", rounds=len(snapshots) - 1, converged_at=converged_at, final_hv=snapshots[-1].train_hv)
    return PorsTrace(snapshots, converged_at, cfg)
