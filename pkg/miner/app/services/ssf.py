"""
Solution selection on the front (SSF).

Nine ways of picking k representative solutions from a Pareto front, split
into uniform vs non-uniform sampling and objective-space vs coverage-space
distances:

    uniform / objective         equi-spaced (Manhattan arc), equi-dist (Euclidean arc)
    uniform / coverage          equi-jaccard (Jaccard arc along a TSP tour)
    non-uniform / objective     hv-ss, hvc-ss, igd-ss, igd+-ss, k-medoids-pr
    non-uniform / coverage      k-medoids-jaccard
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Literal, Optional, Sequence

import numpy as np
import structlog

from app.core.config import settings
from app.core.exceptions import EmptyFrontError, InvalidConfigurationError, SelectionError, UnknownSsfMethodError
from app.services.pareto import (
    ParetoFront,
    Solution,
    exclusive_contributions,
    staircase,
    staircase_area,
    staircase_gain,
)
from app.services.rules import jaccard_matrix

logger = structlog.get_logger(__name__)


class SsfName(Enum):
    """Available SSF methods."""
    EQUI_SPACED = "equi-spaced"
    EQUI_DIST = "equi-dist"
    EQUI_JACCARD = "equi-jaccard"
    HV_SS = "hv-ss"
    IGD_SS = "igd-ss"
    IGD_PLUS_SS = "igd+-ss"
    HVC_SS = "hvc-ss"
    KMEDOIDS_PR = "k-medoids-pr"
    KMEDOIDS_JACCARD = "k-medoids-jaccard"

    @classmethod
    def parse(cls, name: str) -> "SsfName":
        try:
            return cls(name)
        except ValueError:
            raise UnknownSsfMethodError(f"Unknown SSF method: {name}", method=name) from None


@dataclass(frozen=True)
class SsfMethod:
    """An SSF method with its sample size."""
    name: SsfName
    k: int = field(default_factory=lambda: settings.SSF_K)
    hvc_reference: Literal["current", "previous"] = "current"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidConfigurationError("k must be at least 1", config_key="k")

    @classmethod
    def parse(cls, name: str, k: Optional[int] = None, hvc_reference: str = "current") -> "SsfMethod":
        return cls(SsfName.parse(name), k if k is not None else settings.SSF_K, hvc_reference)  # type: ignore[arg-type]


def _is_better(score: float, best: Optional[float], maximize: bool) -> bool:
    if best is None:
        return True
    tolerance = 1e-12 * max(1.0, abs(best))
    return score > best + tolerance if maximize else score < best - tolerance


def equi_arc_indices(positions: Sequence[float], k: int) -> List[int]:
    """
    Map k evenly spaced targets along a cumulative arc to entry indices.

    Each target goes to the entry with the nearest cumulative position
    (ties to the lower index); both ends are always kept and targets that
    land on an already chosen entry are filled with the nearest unchosen one.
    """
    positions = np.asarray(positions, dtype=np.float64)
    m = positions.shape[0]
    k = min(k, m)
    length = float(positions[-1]) if m else 0.0
    if k == 1:
        return [int(np.argmin(np.abs(positions - length / 2)))]

    targets = [i * length / (k - 1) for i in range(k)]
    chosen: List[int] = [0] if m == 1 else [0, m - 1]
    unfilled: List[float] = []
    for target in targets[1:-1]:
        index = int(np.argmin(np.abs(positions - target)))
        if index in chosen:
            unfilled.append(target)
        else:
            chosen.append(index)

    for target in unfilled:
        if len(chosen) >= k:
            break
        gaps = np.abs(positions - target)
        gaps[chosen] = np.inf
        chosen.append(int(np.argmin(gaps)))
    return sorted(chosen)


def sample_equi_arc(front: ParetoFront, k: int, metric: Literal["manhattan", "euclidean"] = "manhattan") -> List[Solution]:
    """Evenly spaced samples along the front ordered by recall."""
    points = front.as_array()
    if points.shape[0] <= 1:
        return list(front.entries)
    steps = np.diff(points, axis=0)
    if metric == "manhattan":
        lengths = np.abs(steps).sum(axis=1)
    else:
        lengths = np.linalg.norm(steps, axis=1)
    positions = np.concatenate([[0.0], np.cumsum(lengths)])
    return [front.entries[i] for i in equi_arc_indices(positions, k)]


def _coverage_bits(front: ParetoFront) -> np.ndarray:
    if any(s.coverage is None for s in front.entries):
        raise SelectionError("Coverage-space SSF needs solutions with coverage")
    return np.vstack([s.coverage.bits for s in front.entries])  # type: ignore[union-attr]


def tsp_tour(distance: np.ndarray, rng: np.random.Generator, max_passes: Optional[int] = None) -> List[int]:
    """Nearest-neighbour tour from node 0 refined by first-improvement 2-opt."""
    m = distance.shape[0]
    max_passes = max_passes if max_passes is not None else settings.TSP_MAX_PASSES
    if max_passes < 1:
        raise InvalidConfigurationError("max_passes must be at least 1", config_key="max_passes")
    tour = [0]
    unvisited = np.ones(m, dtype=bool)
    unvisited[0] = False
    while unvisited.any():
        row = np.where(unvisited, distance[tour[-1]], np.inf)
        nxt = int(np.argmin(row))
        tour.append(nxt)
        unvisited[nxt] = False

    if m < 4:
        return tour
    for _ in range(max_passes):
        improved = False
        for i in rng.permutation(m - 1):
            for j in range(i + 2, m):
                if i == 0 and j == m - 1:
                    continue
                a, b = tour[i], tour[i + 1]
                c, d = tour[j], tour[(j + 1) % m]
                delta = distance[a, c] + distance[b, d] - distance[a, b] - distance[c, d]
                if delta < -1e-12:
                    tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]
                    improved = True
        if not improved:
            break
    return tour


def sample_equi_jaccard(front: ParetoFront, k: int, seed: int = 0, max_passes: Optional[int] = None) -> List[Solution]:
    """Evenly spaced samples along a TSP path over coverage Jaccard distances."""
    m = len(front)
    if m <= 2:
        return list(front.entries)
    distance = jaccard_matrix(_coverage_bits(front))
    tour = tsp_tour(distance, np.random.default_rng(seed), max_passes)
    edges = [distance[tour[i], tour[(i + 1) % m]] for i in range(m)]
    cut = int(np.argmax(edges))
    path = tour[cut + 1:] + tour[:cut + 1]
    positions = np.concatenate([[0.0], np.cumsum([distance[a, b] for a, b in zip(path, path[1:])])])
    picked = sorted(path[i] for i in equi_arc_indices(positions, k))
    return [front.entries[i] for i in picked]


def _objective_distances(front: ParetoFront, plus: bool = False) -> np.ndarray:
    points = front.as_array()
    difference = points[:, None, :] - points[None, :, :]
    if plus:
        difference = np.maximum(difference, 0.0)
    return np.linalg.norm(difference, axis=2)


def _greedy_hypervolume(
    front: ParetoFront,
    k: int,
    reference: Optional[Sequence[Solution]],
) -> List[int]:
    """
    Greedy HV (no reference) or HVC (with reference) selection on staircase arrays.

    Each pick rebuilds the staircase of selection plus reference and the
    exclusive shares of the reference entries not yet selected.
    """
    entries = front.entries
    points = front.as_array()
    union = np.zeros((0, 2))
    remaining: List[Solution] = []
    if reference is not None:
        union = staircase(np.array([s.point.as_tuple() for s in reference], dtype=np.float64).reshape(-1, 2))
        remaining = list(reference)

    selected: List[int] = []
    for _ in range(k):
        values = staircase_area(union) + staircase_gain(union, points)
        if reference is not None:
            remaining_points = np.array([s.point.as_tuple() for s in remaining], dtype=np.float64).reshape(-1, 2)
            shares = exclusive_contributions(remaining_points)
            position = {s.members: i for i, s in enumerate(remaining)}
            removed = np.array([shares[position[s.members]] if s.members in position else 0.0 for s in entries])
            values = values - (staircase_area(staircase(remaining_points)) - removed)

        best_index, best_score = None, None
        for index in range(len(entries)):
            if index in selected:
                continue
            if _is_better(float(values[index]), best_score, True):
                best_index, best_score = index, float(values[index])
        selected.append(best_index)  # type: ignore[arg-type]
        union = staircase(np.vstack([union, points[best_index]]))
        if reference is not None:
            members = entries[best_index].members  # type: ignore[index]
            remaining = [s for s in remaining if s.members != members]
    return selected


def select_greedy_indicator(
    front: ParetoFront,
    k: int,
    indicator: Literal["hv", "hvc", "igd", "igd+"],
    reference: Optional[ParetoFront] = None,
) -> List[Solution]:
    """
    Greedy forward selection of min(k, |front|) entries.

    hv maximises the hypervolume of the selection, hvc maximises
    HVC(selection, reference) with the front itself as default reference, and
    igd / igd+ minimise the indicator of the selection against the front.
    Ties go to the earlier entry (lower recall).
    """
    entries = front.entries
    m = len(entries)
    k = min(k, m)
    selected: List[int]
    if indicator == "hv":
        selected = _greedy_hypervolume(front, k, None)
    elif indicator == "hvc":
        selected = _greedy_hypervolume(front, k, reference.entries if reference is not None else entries)
    elif indicator in ("igd", "igd+"):
        # distance[r, a]: reference entry r to candidate a
        distance = _objective_distances(front, plus=indicator == "igd+")
        nearest = np.full(m, np.inf)
        selected = []
        for _ in range(k):
            values = np.minimum(nearest[:, None], distance).mean(axis=0)
            best_index, best_score = None, None
            for index in range(m):
                if index in selected:
                    continue
                if _is_better(float(values[index]), best_score, False):
                    best_index, best_score = index, float(values[index])
            selected.append(best_index)  # type: ignore[arg-type]
            nearest = np.minimum(nearest, distance[:, best_index])
    else:
        raise UnknownSsfMethodError(f"Unknown indicator: {indicator}", method=indicator)
    return [entries[i] for i in sorted(selected)]


def pam(distance: np.ndarray, k: int, max_iter: Optional[int] = None) -> List[int]:
    """
    Partitioning around medoids with deterministic BUILD and best-swap SWAP.

    Ties always resolve to the lowest index.
    """
    m = distance.shape[0]
    k = min(k, m)
    max_iter = max_iter if max_iter is not None else settings.KMEDOIDS_MAX_ITER
    if max_iter < 1:
        raise InvalidConfigurationError("max_iter must be at least 1", config_key="max_iter")
    medoids = [int(np.argmin(distance.sum(axis=1)))]
    while len(medoids) < k:
        nearest = distance[:, medoids].min(axis=1)
        gains = np.maximum(nearest[:, None] - distance, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        medoids.append(int(np.argmax(gains)))

    cost = distance[:, medoids].min(axis=1).sum()
    for _ in range(max_iter):
        best_swap, best_cost = None, cost
        for position in range(k):
            for candidate in range(m):
                if candidate in medoids:
                    continue
                trial = medoids.copy()
                trial[position] = candidate
                trial_cost = distance[:, trial].min(axis=1).sum()
                if trial_cost < best_cost - 1e-12:
                    best_swap, best_cost = (position, candidate), trial_cost
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        cost = best_cost
    return sorted(medoids)


def kmedoids_select(
    front: ParetoFront,
    k: int,
    distance: Literal["euclidean-objective", "jaccard-coverage"] = "euclidean-objective",
    seed: int = 0,
    max_iter: Optional[int] = None,
) -> List[Solution]:
    """k-medoids over objective-space Euclidean or coverage Jaccard distances."""
    if distance == "euclidean-objective":
        matrix = _objective_distances(front)
    else:
        matrix = jaccard_matrix(_coverage_bits(front))
    return [front.entries[i] for i in pam(matrix, k, max_iter)]


def select_ssf(
    front: ParetoFront,
    method: SsfMethod,
    seed: int = 0,
    previous_front: Optional[ParetoFront] = None,
) -> List[Solution]:
    """Select min(k, |front|) distinct entries of `front` with `method`."""
    if not len(front):
        raise EmptyFrontError("SSF needs a non-empty front")
    k = method.k
    if len(front) <= k:
        return list(front.entries)

    name = method.name
    if name is SsfName.EQUI_SPACED:
        selected = sample_equi_arc(front, k, "manhattan")
    elif name is SsfName.EQUI_DIST:
        selected = sample_equi_arc(front, k, "euclidean")
    elif name is SsfName.EQUI_JACCARD:
        selected = sample_equi_jaccard(front, k, seed)
    elif name is SsfName.HV_SS:
        selected = select_greedy_indicator(front, k, "hv")
    elif name is SsfName.HVC_SS:
        reference = previous_front if method.hvc_reference == "previous" and previous_front else None
        selected = select_greedy_indicator(front, k, "hvc", reference)
    elif name is SsfName.IGD_SS:
        selected = select_greedy_indicator(front, k, "igd")
    elif name is SsfName.IGD_PLUS_SS:
        selected = select_greedy_indicator(front, k, "igd+")
    elif name is SsfName.KMEDOIDS_PR:
        selected = kmedoids_select(front, k, "euclidean-objective", seed)
    elif name is SsfName.KMEDOIDS_JACCARD:
        selected = kmedoids_select(front, k, "jaccard-coverage", seed)
    else:
        raise UnknownSsfMethodError(method=str(name))

    logger.debug("ssf_selected", method=name.value, front=len(front), k=k, selected=len(selected))
    return selected
