"""
Rules, rule subsets and their bi-objective evaluation.
"""
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from app.core.exceptions import EmptyPositiveSetError, UnknownRuleError
from app.services.dataset import Condition, Coverage, DatasetView

logger = structlog.get_logger(__name__)

Exact = Union[Fraction, float]


class ObjectivePoint:
    """
    (precision, recall) image of a rule subset.

    Points built from counts compare exactly through rational keys; points
    built from plain coordinates compare on their float values.
    """

    __slots__ = ("precision", "recall", "counts", "_key")

    def __init__(
        self,
        precision: float,
        recall: float,
        counts: Optional[Tuple[int, int, int]] = None,
    ):
        if not (math.isfinite(precision) and math.isfinite(recall)):
            raise ValueError("Objective values must be finite")
        if precision < 0 or recall < 0:
            raise ValueError("Objective values must be non-negative")
        self.precision = float(precision)
        self.recall = float(recall)
        self.counts = counts
        if counts is not None:
            true_positive, covered, positives = counts
            exact_p = Fraction(true_positive, covered) if covered else Fraction(0)
            exact_r = Fraction(true_positive, positives)
            self._key: Tuple[Exact, Exact] = (exact_p, exact_r)
        else:
            self._key = (self.precision, self.recall)

    @classmethod
    def from_counts(cls, true_positive: int, covered: int, positives: int) -> "ObjectivePoint":
        """Empty coverage maps to precision 0 by convention."""
        if positives <= 0:
            raise EmptyPositiveSetError()
        precision = true_positive / covered if covered else 0.0
        return cls(precision, true_positive / positives, (true_positive, covered, positives))

    @property
    def key(self) -> Tuple[Exact, Exact]:
        """Exact (precision, recall) used for dominance and deduplication."""
        return self._key

    def as_tuple(self) -> Tuple[float, float]:
        return (self.precision, self.recall)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObjectivePoint):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"ObjectivePoint(precision={self.precision:.6g}, recall={self.recall:.6g})"


@dataclass(frozen=True, eq=False)
class Rule:
    """A conjunction of conditions predicting the positive class."""
    id: int
    conditions: Tuple[Condition, ...]
    coverage: Coverage
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.conditions)

    def signature(self) -> Tuple[Tuple[str, str, str], ...]:
        """Order-independent identity of the condition multiset."""
        return tuple(sorted(c.sort_key() for c in self.conditions))

    def render(self) -> str:
        return "IF " + " AND ".join(c.render() for c in self.conditions) + " THEN 1"


@dataclass(frozen=True, eq=False)
class RuleSubset:
    """Sorted member ids with their union coverage and objective on one split."""
    members: Tuple[int, ...]
    coverage: Coverage
    objective: ObjectivePoint
    split: str = "train"

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(sorted(set(self.members))))


ViewKey = Tuple[int, str]


@dataclass
class RulePool:
    """Stage-1 rules with their training coverage stacked for fast unions."""
    rules: List[Rule]
    view: DatasetView
    _by_id: Dict[int, int] = field(default_factory=dict, init=False, repr=False)
    _matrices: Dict[ViewKey, Tuple[DatasetView, np.ndarray]] = field(default_factory=dict, init=False, repr=False)
    _base_key: ViewKey = field(default=(0, ""), init=False, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {rule.id: position for position, rule in enumerate(self.rules)}
        self._base_key = self._view_key(self.view)
        if self.rules:
            self._matrices[self._base_key] = (self.view, np.vstack([r.coverage.bits for r in self.rules]))

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    @staticmethod
    def _view_key(view: DatasetView) -> ViewKey:
        """Dataset identity plus a digest of the row ids; cached entries pin their view."""
        rows = np.ascontiguousarray(view.rows, dtype=np.int64)
        return (id(view.dataset), hashlib.blake2b(rows.tobytes(), digest_size=16).hexdigest())

    @property
    def ids(self) -> List[int]:
        return [rule.id for rule in self.rules]

    def get(self, rule_id: int) -> Rule:
        position = self._by_id.get(rule_id)
        if position is None:
            raise UnknownRuleError(rule_id=rule_id)
        return self.rules[position]

    def position(self, rule_id: int) -> int:
        position = self._by_id.get(rule_id)
        if position is None:
            raise UnknownRuleError(rule_id=rule_id)
        return position

    def matrix(self, view: Optional[DatasetView] = None) -> np.ndarray:
        """(n_rules, n_rows) coverage on `view`, re-applying conditions for other splits."""
        view = view or self.view
        key = self._base_key if view is self.view else self._view_key(view)
        if key not in self._matrices:
            if not self.rules:
                matrix = np.zeros((0, view.n_rows), dtype=bool)
            else:
                matrix = np.vstack([view.conjunction_coverage(rule.conditions).bits for rule in self.rules])
            self._matrices[key] = (view, matrix)
            logger.debug("pool_evaluated_on_view", view=view.name, rules=len(self.rules))
        return self._matrices[key][1]

    def subset_bits(self, members: Sequence[int], view: Optional[DatasetView] = None) -> np.ndarray:
        view = view or self.view
        matrix = self.matrix(view)
        if not members:
            return np.zeros(view.n_rows, dtype=bool)
        positions = [self.position(m) for m in members]
        return np.any(matrix[positions], axis=0)

    def evaluate_subset(self, members: Sequence[int], view: Optional[DatasetView] = None) -> RuleSubset:
        view = view or self.view
        coverage = Coverage.from_bits(self.subset_bits(members, view), view.positive_mask)
        return RuleSubset(tuple(members), coverage, evaluate_metrics(coverage, view), view.name)


def union_coverage(members: Iterable[int], pool: Union[RulePool, Sequence[Rule]]) -> Coverage:
    """Bitwise OR of member coverages; the empty set yields empty coverage."""
    lookup = {rule.id: rule for rule in pool}
    if isinstance(pool, RulePool):
        positive_mask = pool.view.positive_mask
    elif lookup:
        positive_mask = next(iter(lookup.values())).coverage.positive_mask
    else:
        raise UnknownRuleError("Empty rule pool")
    bits = np.zeros(positive_mask.shape[0], dtype=bool)
    for member in members:
        if member not in lookup:
            raise UnknownRuleError(rule_id=member)
        bits |= lookup[member].coverage.bits
    return Coverage.from_bits(bits, positive_mask)


def evaluate_metrics(coverage: Coverage, view: DatasetView) -> ObjectivePoint:
    """Precision and recall of a coverage bitset expressed over `view`'s rows."""
    if len(coverage) != view.n_rows:
        raise ValueError(
            f"Coverage over {len(coverage)} rows cannot be evaluated on view {view.name!r} "
            f"with {view.n_rows} rows"
        )
    if view.n_positive == 0:
        raise EmptyPositiveSetError(split=view.name)
    true_positive = int(np.count_nonzero(coverage.bits & view.positive_mask))
    return ObjectivePoint.from_counts(true_positive, coverage.n_covered, view.n_positive)


def f_beta(precision: float, recall: float, beta: float) -> float:
    """Weighted harmonic mean; 0 when both inputs are 0."""
    beta_sq = beta * beta
    denominator = beta_sq * precision + recall
    if denominator == 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / denominator


def fbeta_from_counts(true_positive, covered, positives, beta: float):
    """Vectorised F-beta over count arrays."""
    true_positive = np.asarray(true_positive, dtype=np.float64)
    covered = np.asarray(covered, dtype=np.float64)
    precision = np.divide(true_positive, covered, out=np.zeros_like(true_positive), where=covered > 0)
    recall = true_positive / positives if positives else np.zeros_like(true_positive)
    beta_sq = beta * beta
    denominator = beta_sq * precision + recall
    return np.divide(
        (1 + beta_sq) * precision * recall,
        denominator,
        out=np.zeros_like(true_positive),
        where=denominator > 0,
    )


def jaccard_distance(a: Coverage, b: Coverage) -> float:
    """1 - |A n B| / |A u B|; two empty coverages are at distance 0."""
    if len(a) != len(b):
        raise ValueError("Coverages must share a bitset length")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return 1.0 - int(np.count_nonzero(a.bits & b.bits)) / union


def jaccard_matrix(bits: np.ndarray) -> np.ndarray:
    """Pairwise Jaccard distances between the rows of a boolean matrix."""
    dense = bits.astype(np.float64)
    intersection = dense @ dense.T
    sizes = dense.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - intersection
    distance = np.zeros_like(intersection)
    np.divide(intersection, union, out=distance, where=union > 0)
    distance = np.where(union > 0, 1.0 - distance, 0.0)
    np.fill_diagonal(distance, 0.0)
    return distance


def pool_statistics(pool: RulePool) -> Dict[str, object]:
    """Per-rule precision/recall spread, lengths and provenance counts of a pool."""
    if not len(pool):
        return {"rules": 0}
    points = [evaluate_metrics(rule.coverage, pool.view) for rule in pool]
    precision = np.array([p.precision for p in points])
    recall = np.array([p.recall for p in points])
    lengths: Dict[int, int] = {}
    provenance: Dict[str, int] = {}
    for rule in pool:
        lengths[len(rule)] = lengths.get(len(rule), 0) + 1
        provenance[rule.provenance] = provenance.get(rule.provenance, 0) + 1
    ddof = 1 if len(points) > 1 else 0
    return {
        "rules": len(pool),
        "precision_mean": float(precision.mean()),
        "precision_std": float(precision.std(ddof=ddof)),
        "recall_mean": float(recall.mean()),
        "recall_std": float(recall.std(ddof=ddof)),
        "lengths": dict(sorted(lengths.items())),
        "provenance": dict(sorted(provenance.items())),
    }
