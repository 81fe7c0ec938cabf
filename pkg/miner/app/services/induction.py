"""
Stage 1: rule induction.

Rules are grown greedily (optionally with a beam) by F-beta on the residual
rows, collected by sequential covering, diversified across a spectrum of
betas, or extracted from a random forest as a tree-based baseline.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import structlog
from sklearn.ensemble import RandomForestClassifier

from app.core.config import settings
from app.core.exceptions import EmptyConditionPoolError, InvalidConfigurationError
from app.services.dataset import Condition, ConditionPool, Coverage, Operator
from app.services.rules import Rule, RulePool, evaluate_metrics, f_beta, fbeta_from_counts

logger = structlog.get_logger(__name__)

DEFAULT_BETAS: Tuple[float, ...] = (0.01, 0.02, 0.04, 0.06, 0.08, 0.10, 0.20, 0.40, 0.60, 0.80)


class Stage1Method(Enum):
    """Stage-1 rule generators."""
    SPECTRAL = "spectral"
    SEQUENTIAL = "sequential"
    TREE = "tree"


@dataclass(frozen=True)
class InductionConfig:
    """Parameters of a single rule growth."""
    beta: float
    max_len: int = field(default_factory=lambda: settings.MAX_RULE_LENGTH)
    beam_width: int = field(default_factory=lambda: settings.BEAM_WIDTH)

    def __post_init__(self) -> None:
        if self.max_len < 1:
            raise InvalidConfigurationError("max_len must be at least 1", config_key="max_len")
        if self.beam_width < 1:
            raise InvalidConfigurationError("beam_width must be at least 1", config_key="beam_width")
        if self.beta <= 0:
            raise InvalidConfigurationError("beta must be positive", config_key="beta")


@dataclass(frozen=True)
class BetaSpectrum:
    """Ordered betas swept by SpectralRules."""
    betas: Tuple[float, ...] = DEFAULT_BETAS

    def __post_init__(self) -> None:
        if not self.betas:
            raise InvalidConfigurationError("Beta spectrum must not be empty", config_key="betas")
        if any(b <= 0 for b in self.betas):
            raise InvalidConfigurationError("Betas must be positive", config_key="betas")
        if any(a >= b for a, b in zip(self.betas, self.betas[1:])):
            raise InvalidConfigurationError("Betas must be strictly increasing", config_key="betas")

    def __len__(self) -> int:
        return len(self.betas)


@dataclass
class _Candidate:
    conditions: Tuple[int, ...]
    mask: np.ndarray
    score: float
    true_positive: int

    def rank(self) -> Tuple[float, int, int, Tuple[int, ...]]:
        # higher score, fewer conditions, more positives, lower condition ids
        return (-self.score, len(self.conditions), -self.true_positive, self.conditions)


def _feature_operator_codes(pool: ConditionPool) -> np.ndarray:
    codes: Dict[Tuple[str, Operator], int] = {}
    return np.array(
        [codes.setdefault((c.feature, c.operator), len(codes)) for c in pool.conditions],
        dtype=np.int64,
    )


def _make_rule(pool: ConditionPool, condition_ids: Sequence[int], provenance: str) -> Rule:
    ids = sorted(condition_ids)
    bits = np.logical_and.reduce([pool.coverages[i].bits for i in ids])
    coverage = Coverage.from_bits(bits, pool.view.positive_mask)
    return Rule(id=-1, conditions=tuple(pool.conditions[i] for i in ids), coverage=coverage, provenance=provenance)


def induce_rule(
    cfg: InductionConfig,
    pool: ConditionPool,
    residual: Optional[np.ndarray] = None,
    provenance: str = "",
    _codes: Optional[np.ndarray] = None,
) -> Optional[Rule]:
    """
    Grow one rule top-down, scoring F-beta on the residual rows.

    Every beam member is extended with every condition whose (feature, operator)
    it does not use yet; the best `beam_width` distinct conjunctions survive.
    Growth stops at `max_len` or when a level fails to beat the best score so
    far. Returns the best rule seen, or None when nothing covers a residual positive.
    """
    if not len(pool):
        raise EmptyConditionPoolError()
    view = pool.view
    if residual is None:
        residual = np.ones(view.n_rows, dtype=bool)
    residual_idx = np.flatnonzero(residual)
    positives = view.positive_mask[residual_idx]
    n_positive = int(np.count_nonzero(positives))
    if n_positive == 0:
        return None

    matrix = pool.matrix[:, residual_idx]
    codes = _codes if _codes is not None else _feature_operator_codes(pool)

    beam = [_Candidate((), np.ones(residual_idx.shape[0], dtype=bool), 0.0, n_positive)]
    best: Optional[_Candidate] = None

    for _ in range(cfg.max_len):
        seen: Set[Tuple[int, ...]] = set()
        level: List[_Candidate] = []
        for member in beam:
            covered = np.count_nonzero(matrix & member.mask, axis=1)
            true_positive = np.count_nonzero(matrix & (member.mask & positives), axis=1)
            scores = fbeta_from_counts(true_positive, covered, n_positive, cfg.beta)
            allowed = true_positive > 0
            if member.conditions:
                used = np.isin(codes, codes[list(member.conditions)])
                allowed &= ~used
            for condition_id in np.flatnonzero(allowed):
                conditions = tuple(sorted(member.conditions + (int(condition_id),)))
                if conditions in seen:
                    continue
                seen.add(conditions)
                level.append(_Candidate(
                    conditions=conditions,
                    mask=None,  # type: ignore[arg-type]
                    score=float(scores[condition_id]),
                    true_positive=int(true_positive[condition_id]),
                ))
        if not level:
            break
        level.sort(key=_Candidate.rank)
        level = level[:cfg.beam_width]
        if best is not None and level[0].score <= best.score:
            break
        for candidate in level:
            candidate.mask = np.logical_and.reduce([matrix[i] for i in candidate.conditions])
        best = level[0]
        beam = level

    if best is None or best.true_positive == 0:
        return None
    return _make_rule(pool, best.conditions, provenance)


def sequential_covering(
    pool: ConditionPool,
    n: int,
    max_len: Optional[int] = None,
    beta: float = 0.1,
    beam_width: Optional[int] = None,
    provenance: Optional[str] = None,
) -> List[Rule]:
    """
    Learn up to `n` rules, removing every row a rule covers before learning the next.

    Stops early once the residual has no positives or induction finds nothing.
    Returned rules carry coverage on the full training view.
    """
    if n < 1:
        raise InvalidConfigurationError("n must be at least 1", config_key="n")
    cfg = InductionConfig(
        beta=beta,
        max_len=max_len if max_len is not None else settings.MAX_RULE_LENGTH,
        beam_width=beam_width if beam_width is not None else settings.BEAM_WIDTH,
    )
    provenance = provenance if provenance is not None else f"sequential:beta={beta:g}"
    codes = _feature_operator_codes(pool)
    residual = np.ones(pool.view.n_rows, dtype=bool)
    rules: List[Rule] = []

    for _ in range(n):
        if not np.any(residual & pool.view.positive_mask):
            logger.debug("sequential_covering_positives_exhausted", beta=beta, rules=len(rules))
            break
        rule = induce_rule(cfg, pool, residual, provenance, _codes=codes)
        if rule is None:
            break
        residual &= ~rule.coverage.bits
        rules.append(rule)

    logger.info(
        "sequential_covering_completed",
        beta=beta,
        budget=n,
        rules=len(rules),
        residual_rows=int(np.count_nonzero(residual)),
    )
    return rules


def _assign_ids(rules: Sequence[Rule]) -> List[Rule]:
    seen: Set[tuple] = set()
    unique: List[Rule] = []
    for rule in rules:
        signature = rule.signature()
        if signature in seen:
            continue
        seen.add(signature)
        unique.append(replace(rule, id=len(unique)))
    return unique


def spectral_rules(
    pool: ConditionPool,
    n: int,
    max_len: Optional[int] = None,
    spectrum: Optional[BetaSpectrum] = None,
    beam_width: Optional[int] = None,
    threads: Optional[int] = None,
) -> List[Rule]:
    """
    Run sequential covering once per beta with budget ceil(n / |B|) on the full
    training rows; concatenate in spectrum order and drop duplicate rules.
    """
    spectrum = spectrum or BetaSpectrum()
    if n < len(spectrum):
        raise InvalidConfigurationError(
            "n must be at least the number of betas", config_key="n_rules",
            details={"n": n, "betas": len(spectrum)},
        )
    budget = math.ceil(n / len(spectrum))
    threads = threads if threads is not None else settings.THREADS
    if threads < 1:
        raise InvalidConfigurationError("threads must be at least 1", config_key="threads")

    def run(beta: float) -> List[Rule]:
        return sequential_covering(pool, budget, max_len, beta, beam_width, provenance=f"spectral:beta={beta:g}")

    with ThreadPoolExecutor(max_workers=threads) as executor:
        per_beta = list(executor.map(run, spectrum.betas))

    rules = _assign_ids([rule for batch in per_beta for rule in batch])
    logger.info(
        "spectral_rules_completed",
        budget_per_beta=budget,
        betas=len(spectrum),
        rules=len(rules),
        duplicates=sum(len(b) for b in per_beta) - len(rules),
    )
    return rules


def _simplify(conditions: Sequence[Condition]) -> Tuple[Condition, ...]:
    """Keep the tightest <= and > threshold per feature and drop repeats."""
    upper: Dict[str, Condition] = {}
    lower: Dict[str, Condition] = {}
    others: List[Condition] = []
    for condition in conditions:
        if condition.operator is Operator.LE:
            current = upper.get(condition.feature)
            if current is None or condition.value < current.value:
                upper[condition.feature] = condition
        elif condition.operator is Operator.GT:
            current = lower.get(condition.feature)
            if current is None or condition.value > current.value:
                lower[condition.feature] = condition
        elif condition not in others:
            others.append(condition)
    return tuple(sorted([*upper.values(), *lower.values(), *others], key=Condition.sort_key))


def _forest_paths(forest: RandomForestClassifier) -> List[List[Tuple[int, bool]]]:
    """Root-to-leaf paths ending in a positive-majority leaf, as (feature, went_right) steps."""
    paths: List[List[Tuple[int, bool]]] = []
    for estimator in forest.estimators_:
        tree = estimator.tree_
        positive_class = int(np.flatnonzero(estimator.classes_ == 1)[0]) if 1 in estimator.classes_ else None
        if positive_class is None:
            continue
        stack: List[Tuple[int, List[Tuple[int, bool]]]] = [(0, [])]
        while stack:
            node, path = stack.pop()
            left, right = tree.children_left[node], tree.children_right[node]
            if left == -1:
                value = tree.value[node][0]
                if path and value[positive_class] > value.sum() - value[positive_class]:
                    paths.append(path)
                continue
            feature = int(tree.feature[node])
            stack.append((right, path + [(feature, True)]))
            stack.append((left, path + [(feature, False)]))
    return paths


def tree_rules(
    pool: ConditionPool,
    n: int,
    max_len: Optional[int] = None,
    seed: int = 0,
    n_trees: Optional[int] = None,
    rank_beta: float = 0.1,
) -> List[Rule]:
    """
    Extract rules from a seeded random forest of depth-limited trees.

    Trees split on the binary <= and = conditions of the pool; a false <=
    test becomes its paired > condition and a false = test is dropped.
    Positive-majority paths are ranked by training F-beta (beta=0.1) and the
    top `n` distinct rules are returned.
    """
    if n < 1:
        raise InvalidConfigurationError("n must be at least 1", config_key="n")
    if not len(pool):
        raise EmptyConditionPoolError()
    max_len = max_len if max_len is not None else settings.MAX_RULE_LENGTH
    n_trees = n_trees if n_trees is not None else settings.FOREST_TREES
    if max_len < 1:
        raise InvalidConfigurationError("max_len must be at least 1", config_key="max_len")
    if n_trees < 1:
        raise InvalidConfigurationError("n_trees must be at least 1", config_key="n_trees")
    view = pool.view
    feature_ids = [i for i, c in enumerate(pool.conditions) if c.operator is not Operator.GT]
    complements = {
        i: pool.index_of(Condition(c.feature, Operator.GT, c.value))
        for i, c in enumerate(pool.conditions) if c.operator is Operator.LE
    }

    forest = RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_depth=max_len,
        max_features="sqrt",
        bootstrap=True,
        random_state=seed,
        n_jobs=1,
    )
    forest.fit(pool.matrix[feature_ids].T.astype(np.uint8), view.positive_mask.astype(np.int8))

    candidates: Dict[tuple, Rule] = {}
    for path in _forest_paths(forest):
        conditions: List[Condition] = []
        for column, went_right in path:
            condition_id = feature_ids[column]
            if went_right:
                conditions.append(pool.conditions[condition_id])
            elif complements.get(condition_id) is not None:
                conditions.append(pool.conditions[complements[condition_id]])
        simplified = _simplify(conditions)
        if not simplified:
            continue
        coverage = view.conjunction_coverage(simplified)
        if coverage.n_positive == 0:
            continue
        rule = Rule(id=-1, conditions=simplified, coverage=coverage, provenance="tree")
        candidates.setdefault(rule.signature(), rule)

    def score(rule: Rule) -> float:
        point = evaluate_metrics(rule.coverage, view)
        return f_beta(point.precision, point.recall, rank_beta)

    ranked = sorted(candidates.values(), key=lambda r: (-score(r), len(r), r.signature()))
    rules = _assign_ids(ranked[:n])
    logger.info("tree_rules_completed", trees=len(forest.estimators_), paths=len(candidates), rules=len(rules))
    return rules


def build_rule_pool(
    method: Stage1Method,
    pool: ConditionPool,
    n: int,
    max_len: Optional[int] = None,
    betas: Optional[Sequence[float]] = None,
    beam_width: Optional[int] = None,
    seed: int = 0,
    threads: Optional[int] = None,
) -> RulePool:
    """Dispatch to a Stage-1 generator and wrap the result as a `RulePool`."""
    if method is Stage1Method.SPECTRAL:
        spectrum = BetaSpectrum(tuple(betas)) if betas else BetaSpectrum()
        rules = spectral_rules(pool, n, max_len, spectrum, beam_width, threads)
    elif method is Stage1Method.SEQUENTIAL:
        beta = betas[0] if betas else 0.1
        rules = _assign_ids(sequential_covering(pool, n, max_len, beta, beam_width))
    else:
        rules = tree_rules(pool, n, max_len, seed)
    return RulePool(rules, pool.view)
