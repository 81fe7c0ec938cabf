"""
Bi-objective geometry: dominance, Pareto fronts, hypervolume and IGD indicators.

Both objectives are maximised and the hypervolume reference point is (0, 0).
"""
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from app.core.exceptions import EmptyFrontError
from app.services.dataset import Coverage, DatasetView
from app.services.rules import ObjectivePoint, RulePool, evaluate_metrics

logger = structlog.get_logger(__name__)


@dataclass(frozen=True, eq=False)
class Solution:
    """A rule subset (canonical sorted ids) paired with its objective point."""
    members: Tuple[int, ...]
    point: ObjectivePoint
    coverage: Optional[Coverage] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(sorted(set(self.members))))

    @property
    def precision(self) -> float:
        return self.point.precision

    @property
    def recall(self) -> float:
        return self.point.recall

    def identity(self) -> Tuple[Tuple[int, ...], tuple]:
        return (self.members, self.point.key)


PointLike = Union[ObjectivePoint, Solution]


def _point(item: PointLike) -> ObjectivePoint:
    return item.point if isinstance(item, Solution) else item


def dominates(a: PointLike, b: PointLike) -> bool:
    """True iff `a` is no worse than `b` in both objectives and strictly better in one."""
    (ap, ar), (bp, br) = _point(a).key, _point(b).key
    return ap >= bp and ar >= br and (ap > bp or ar > br)


class ParetoFront:
    """Mutually non-dominated solutions sorted by recall ascending."""

    def __init__(self, entries: Sequence[Solution]):
        self.entries: List[Solution] = list(entries)
        self._hv: Optional[float] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index: int) -> Solution:
        return self.entries[index]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParetoFront):
            return NotImplemented
        return [s.identity() for s in self.entries] == [s.identity() for s in other.entries]

    def __repr__(self) -> str:
        return f"ParetoFront(size={len(self.entries)}, hv={self.hypervolume:.6g})"

    @property
    def hypervolume(self) -> float:
        if self._hv is None:
            self._hv = hypervolume(self.entries)
        return self._hv

    @property
    def points(self) -> List[ObjectivePoint]:
        return [s.point for s in self.entries]

    def as_array(self) -> np.ndarray:
        """(m, 2) array of (precision, recall)."""
        if not self.entries:
            return np.zeros((0, 2))
        return np.array([s.point.as_tuple() for s in self.entries], dtype=np.float64)

    def members(self) -> List[Tuple[int, ...]]:
        return [s.members for s in self.entries]


def _sweep(items: Sequence[PointLike], tie_key) -> List[PointLike]:
    """Sort by recall desc, precision desc, tie key; keep strictly improving precision."""
    ordered = sorted(
        items,
        key=lambda s: (-_point(s).key[1], -_point(s).key[0], tie_key(s)),
    )
    kept: List[PointLike] = []
    best_precision = None
    for item in ordered:
        precision = _point(item).key[0]
        if best_precision is None or precision > best_precision:
            kept.append(item)
            best_precision = precision
    kept.reverse()
    return kept


def make_pareto_front(solutions: Iterable[Solution]) -> ParetoFront:
    """
    Keep the non-dominated solutions; identical points keep the smallest member list.

    Runs in O(m log m) by sorting on recall and sweeping precision.
    """
    return ParetoFront(_sweep(list(solutions), tie_key=lambda s: s.members))


def nondominated_points(points: Iterable[PointLike]) -> List[ObjectivePoint]:
    return [_point(p) for p in _sweep(list(points), tie_key=lambda _: 0)]


def hypervolume(points: Iterable[PointLike], exact: bool = False) -> Union[float, Fraction]:
    """
    Area dominated by `points` relative to (0, 0): the staircase sum of
    p_i * (r_i - r_{i-1}) over the non-dominated points sorted by recall.

    With `exact=True` the sum is carried out on the exact keys and returned as a Fraction.
    """
    front = nondominated_points(points)
    if exact:
        area = Fraction(0)
        previous = Fraction(0)
        for point in front:
            precision, recall = (Fraction(v) for v in point.key)
            area += precision * (recall - previous)
            previous = recall
        return area
    area = 0.0
    previous = 0.0
    for point in front:
        area += point.precision * (point.recall - previous)
        previous = point.recall
    return area


def _identity(item: PointLike):
    return item.members if isinstance(item, Solution) else item.key


def hv_contribution(t: Iterable[PointLike], s: Iterable[PointLike]) -> float:
    """HV(T u S) - HV(S \\ T); identity is canonical members for solutions, the point otherwise."""
    t = list(t)
    s = list(s)
    t_ids = {_identity(item) for item in t}
    remainder = [item for item in s if _identity(item) not in t_ids]
    return hypervolume(t + s) - hypervolume(remainder)


def _as_array(points: Iterable[PointLike]) -> np.ndarray:
    rows = [_point(p).as_tuple() for p in points]
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def staircase(points: np.ndarray) -> np.ndarray:
    """Non-dominated, distinct rows of an (n, 2) (precision, recall) array, sorted by recall ascending."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if points.shape[0] == 0:
        return points
    ordered = points[np.lexsort((-points[:, 0], -points[:, 1]))]
    running = np.maximum.accumulate(ordered[:, 0])
    keep = np.ones(ordered.shape[0], dtype=bool)
    keep[1:] = ordered[1:, 0] > running[:-1]
    return ordered[keep][::-1]


def staircase_area(stairs: np.ndarray) -> float:
    """Hypervolume of a staircase array."""
    if stairs.shape[0] == 0:
        return 0.0
    widths = np.diff(stairs[:, 1], prepend=0.0)
    return float(np.dot(stairs[:, 0], widths))


def staircase_gain(stairs: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Area each candidate row would add to the region dominated by `stairs`."""
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    precision, recall = candidates[:, 0], candidates[:, 1]
    if stairs.shape[0] == 0:
        return precision * recall
    rights = stairs[:, 1]
    lefts = np.concatenate([[0.0], rights[:-1]])
    # column j is the segment (lefts[j], rights[j]] at height stairs[j, 0]
    widths = np.clip(np.minimum(recall[:, None], rights[None, :]) - lefts[None, :], 0.0, None)
    lifts = np.clip(precision[:, None] - stairs[None, :, 0], 0.0, None)
    tail = np.clip(recall - rights[-1], 0.0, None) * precision
    return (widths * lifts).sum(axis=1) + tail


def exclusive_contributions(points: np.ndarray) -> np.ndarray:
    """HV(P) - HV(P without row i) for every row i of an (n, 2) array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = points.shape[0]
    result = np.zeros(n)
    if n == 0:
        return result
    order = np.lexsort((-points[:, 0], -points[:, 1]))
    ordered = points[order]
    running = np.maximum.accumulate(ordered[:, 0])
    keep = np.ones(n, dtype=bool)
    keep[1:] = ordered[1:, 0] > running[:-1]

    if keep.all():
        # mutually non-dominated: only the two staircase neighbours bound a point's share
        stairs = ordered[::-1]
        widths = np.diff(stairs[:, 1], prepend=0.0)
        drops = stairs[:, 0] - np.append(stairs[1:, 0], 0.0)
        result[order[::-1]] = widths * drops
        return result

    total = staircase_area(staircase(points))
    for row in order[keep]:
        result[row] = total - staircase_area(staircase(np.delete(points, row, axis=0)))
    return result


def igd(candidates: Iterable[PointLike], reference: Iterable[PointLike]) -> float:
    """Mean Euclidean distance from each reference point to its nearest candidate."""
    a, r = _as_array(candidates), _as_array(reference)
    if r.shape[0] == 0:
        raise EmptyFrontError("IGD needs a non-empty reference set")
    if a.shape[0] == 0:
        raise EmptyFrontError("IGD needs a non-empty candidate set")
    distances = np.linalg.norm(r[:, None, :] - a[None, :, :], axis=2)
    return float(distances.min(axis=1).mean())


def igd_plus(candidates: Iterable[PointLike], reference: Iterable[PointLike]) -> float:
    """IGD with only the shortfall of a candidate below the reference point counted."""
    a, r = _as_array(candidates), _as_array(reference)
    if r.shape[0] == 0:
        raise EmptyFrontError("IGD+ needs a non-empty reference set")
    if a.shape[0] == 0:
        raise EmptyFrontError("IGD+ needs a non-empty candidate set")
    shortfall = np.maximum(r[:, None, :] - a[None, :, :], 0.0)
    distances = np.linalg.norm(shortfall, axis=2)
    return float(distances.min(axis=1).mean())


def reevaluate(solutions: Iterable[Solution], pool: RulePool, view: DatasetView) -> List[Solution]:
    """Recompute coverage and objectives of `solutions` on the rows of `view`."""
    matrix = pool.matrix(view)
    result = []
    for solution in solutions:
        positions = [pool.position(m) for m in solution.members]
        if positions:
            bits = np.any(matrix[positions], axis=0)
        else:
            bits = np.zeros(view.n_rows, dtype=bool)
        coverage = Coverage.from_bits(bits, view.positive_mask)
        result.append(Solution(solution.members, evaluate_metrics(coverage, view), coverage))
    return result
