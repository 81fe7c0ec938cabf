"""
Pytest configuration and fixtures for the rule subset miner tests.
"""
import os

os.environ.setdefault("ENVIRONMENT", "test")

from typing import Callable, List, Sequence, Tuple  # noqa: E402

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

from app.services.dataset import ColumnKind, Condition, Coverage, Dataset, Operator  # noqa: E402
from app.services.pareto import ParetoFront, Solution, make_pareto_front  # noqa: E402
from app.services.rules import ObjectivePoint, Rule, RulePool  # noqa: E402

# (recall, precision) coordinates of the five-point reference front
REFERENCE_FRONT: List[Tuple[float, float]] = [(1, 4), (2, 3.5), (2.5, 2.5), (4, 2), (5, 1)]


def point_solution(recall: float, precision: float, members: Tuple[int, ...]) -> Solution:
    return Solution(members, ObjectivePoint(precision, recall))


@pytest.fixture
def reference_front() -> ParetoFront:
    """The five mutually non-dominated reference points, one member id each."""
    return make_pareto_front(
        [point_solution(r, p, (i,)) for i, (r, p) in enumerate(REFERENCE_FRONT)]
    )


@pytest.fixture
def pool_factory() -> Callable[[Sequence[Sequence[int]], Sequence[int]], RulePool]:
    """
    Build a rule pool from explicit coverage rows.

    Rule i reads a dedicated 0/1 column `r{i}` through `r{i} > 0.5`, so its
    coverage can be re-applied to any view of the synthetic dataset.
    """
    def build(bits: Sequence[Sequence[int]], labels: Sequence[int]) -> RulePool:
        matrix = np.asarray(bits, dtype=np.float64).reshape(len(bits), len(labels))
        dataset = Dataset(
            columns={f"r{i}": row for i, row in enumerate(matrix)},
            kinds={f"r{i}": ColumnKind.NUMERIC for i in range(len(bits))},
            labels=np.asarray(labels),
            name="synthetic",
        )
        view = dataset.view(name="train")
        rules = []
        for i in range(len(bits)):
            conditions = (Condition(f"r{i}", Operator.GT, 0.5),)
            rules.append(Rule(i, conditions, view.conjunction_coverage(conditions), "synthetic"))
        return RulePool(rules, view)

    return build


@pytest.fixture
def small_pool(pool_factory) -> RulePool:
    """Six overlapping rules over twelve rows, six of them positive."""
    labels = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    bits = [
        [1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0],
        [1, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0, 0],
        [0, 1, 0, 1, 0, 1, 0, 0, 0, 0, 1, 1],
        [1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    ]
    return pool_factory(bits, labels)


@pytest.fixture
def threshold_dataset() -> Dataset:
    """x = 0..19 labelled positive above 9, plus an uninformative colour column."""
    x = np.arange(20, dtype=np.float64)
    colour = np.array(["red" if i % 2 else "blue" for i in range(20)], dtype=object)
    return Dataset(
        columns={"x": x, "colour": colour},
        kinds={"x": ColumnKind.NUMERIC, "colour": ColumnKind.CATEGORICAL},
        labels=(x > 9).astype(np.int8),
        name="threshold",
    )


def write_marketing_csv(path, rows: int = 240, seed: int = 11, delimiter: str = ",") -> None:
    """A small bank-marketing style table with a yes/no label that depends on two features."""
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 80, size=rows)
    balance = rng.integers(-500, 5000, size=rows)
    job = rng.choice(["admin", "technician", "services", "retired"], size=rows)
    housing = rng.choice(["yes", "no"], size=rows)
    score = (age > 60).astype(int) + (balance > 3000).astype(int) + (job == "retired").astype(int)
    noise = rng.random(rows) < 0.1
    positive = (score >= 2) ^ noise
    frame = pd.DataFrame({
        "age": age,
        "job": job,
        "balance": balance,
        "housing": housing,
        "y": np.where(positive, "yes", "no"),
    })
    frame.to_csv(path, index=False, sep=delimiter)


@pytest.fixture
def marketing_csv(tmp_path):
    path = tmp_path / "marketing.csv"
    write_marketing_csv(path)
    return path


def coverage_front(points: Sequence[Tuple[float, float]], n_rows: int = 30, seed: int = 5) -> ParetoFront:
    """Front of (recall, precision) points whose solutions carry random coverage bitsets."""
    rng = np.random.default_rng(seed)
    positive_mask = np.zeros(n_rows, dtype=bool)
    positive_mask[: n_rows // 3] = True
    solutions = []
    for i, (recall, precision) in enumerate(points):
        bits = rng.random(n_rows) < 0.4
        bits[i % n_rows] = True
        solutions.append(
            Solution((i,), ObjectivePoint(precision, recall), Coverage.from_bits(bits, positive_mask))
        )
    return make_pareto_front(solutions)
