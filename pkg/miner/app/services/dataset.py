"""
Dataset ingestion, deterministic splits and rule-condition derivation.

A `Dataset` holds full columns; a `DatasetView` restricts it to the row ids of
one split. Every coverage bitset is expressed over the positions of a view, so
evaluating on another split always means re-applying predicates to that split.
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from app.core.config import settings
from app.core.exceptions import (
    DatasetLoadError,
    EmptyDatasetError,
    ExportError,
    InvalidConfigurationError,
    InvalidSplitError,
    LabelError,
    RuleFormatError,
)

logger = structlog.get_logger(__name__)

POSITIVE_TOKENS = {"1", "1.0", "yes", "y", "true", "t", "positive", "pos", "fraud"}


class ColumnKind(Enum):
    """Kinds of feature columns."""
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class Operator(Enum):
    """Comparison operators allowed in a condition."""
    LE = "<="
    GT = ">"
    EQ = "="


def format_value(value: Union[float, str]) -> str:
    """Render a threshold or category for rule text."""
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else repr(value)
    return str(value)


@dataclass(frozen=True)
class Condition:
    """A single (feature, operator, value) test."""
    feature: str
    operator: Operator
    value: Union[float, str]

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """Boolean mask of rows satisfying the condition; missing values never satisfy it."""
        if self.operator is Operator.EQ:
            return np.asarray(values == self.value, dtype=bool)
        with np.errstate(invalid="ignore"):
            if self.operator is Operator.LE:
                return np.less_equal(values, self.value)
            return np.greater(values, self.value)

    def render(self) -> str:
        return f"{self.feature} {self.operator.value} {format_value(self.value)}"

    def sort_key(self) -> Tuple[str, str, str]:
        return (self.feature, self.operator.value, format_value(self.value))


@dataclass(frozen=True, eq=False)
class Coverage:
    """Bitset over the rows of one view with cached counts."""
    bits: np.ndarray
    positive_mask: np.ndarray
    n_covered: int
    n_positive: int

    @classmethod
    def from_bits(cls, bits: np.ndarray, positive_mask: np.ndarray) -> "Coverage":
        bits = np.asarray(bits, dtype=bool)
        return cls(
            bits=bits,
            positive_mask=positive_mask,
            n_covered=int(np.count_nonzero(bits)),
            n_positive=int(np.count_nonzero(bits & positive_mask)),
        )

    @classmethod
    def empty(cls, positive_mask: np.ndarray) -> "Coverage":
        return cls.from_bits(np.zeros(positive_mask.shape[0], dtype=bool), positive_mask)

    def union(self, other: "Coverage") -> "Coverage":
        return Coverage.from_bits(self.bits | other.bits, self.positive_mask)

    def intersect(self, other: "Coverage") -> "Coverage":
        return Coverage.from_bits(self.bits & other.bits, self.positive_mask)

    def rows(self) -> np.ndarray:
        """Covered positions within the view."""
        return np.flatnonzero(self.bits)

    def __len__(self) -> int:
        return int(self.bits.shape[0])


@dataclass
class Dataset:
    """Columnar feature matrix with binary labels."""
    columns: Dict[str, np.ndarray]
    kinds: Dict[str, ColumnKind]
    labels: np.ndarray
    name: str = "dataset"
    positive_label: str = "1"

    def __post_init__(self) -> None:
        n_rows = int(self.labels.shape[0])
        for column, values in self.columns.items():
            if values.shape[0] != n_rows:
                raise DatasetLoadError(
                    f"Column {column!r} has {values.shape[0]} entries, expected {n_rows}"
                )
        self.labels = np.asarray(self.labels, dtype=np.int8)

    @property
    def n_rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def features(self) -> List[str]:
        return list(self.columns)

    @property
    def positive_index(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    @property
    def positive_ratio(self) -> float:
        return float(self.positive_index.shape[0]) / self.n_rows if self.n_rows else 0.0

    def view(self, rows: Optional[np.ndarray] = None, name: str = "all") -> "DatasetView":
        if rows is None:
            rows = np.arange(self.n_rows)
        return DatasetView(self, np.asarray(rows, dtype=np.int64), name)


@dataclass
class DatasetView:
    """The rows of one split, in ascending row-id order."""
    dataset: Dataset
    rows: np.ndarray
    name: str = "all"
    positive_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.rows = np.sort(self.rows)
        self.positive_mask = self.dataset.labels[self.rows] == 1

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.positive_mask))

    def column(self, feature: str) -> np.ndarray:
        return self.dataset.columns[feature][self.rows]

    def condition_bits(self, condition: Condition) -> np.ndarray:
        if condition.feature not in self.dataset.columns:
            raise RuleFormatError(reason=f"unknown feature {condition.feature!r}")
        return condition.evaluate(self.column(condition.feature))

    def conjunction_coverage(self, conditions: Sequence[Condition]) -> Coverage:
        bits = np.ones(self.n_rows, dtype=bool)
        for condition in conditions:
            bits &= self.condition_bits(condition)
        return Coverage.from_bits(bits, self.positive_mask)


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/validation/test fractions."""
    seed: int = 0
    fractions: Tuple[float, float, float] = (0.60, 0.20, 0.20)

    def __post_init__(self) -> None:
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise InvalidSplitError("Split needs three non-negative fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvalidSplitError("Split fractions must sum to 1", details={"fractions": list(self.fractions)})


@dataclass
class SplitResult:
    """Row-id partition produced by `split_dataset`."""
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def views(self, dataset: Dataset) -> Tuple[DatasetView, DatasetView, DatasetView]:
        return (
            dataset.view(self.train, "train"),
            dataset.view(self.validation, "validation"),
            dataset.view(self.test, "test"),
        )

    def sizes(self) -> Tuple[int, int, int]:
        return (len(self.train), len(self.validation), len(self.test))

    def write_manifest(self, path: Union[str, Path]) -> None:
        """Write the row ids of each split as a plain-text audit file."""
        lines = [f"# split manifest seed={self.seed}"]
        for name, rows in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            lines.append(f"{name}: " + " ".join(str(int(r)) for r in rows))
        try:
            Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        except OSError as e:
            raise ExportError(f"Cannot write split manifest: {e}", path=str(path)) from e


def _map_labels(raw: pd.Series, label_column: str, positive_label: Optional[str]) -> Tuple[np.ndarray, str]:
    if raw.isna().any() or (raw == "").any():
        raise LabelError("label column has missing values", label_column=label_column)
    distinct = sorted(raw.unique().tolist())
    if len(distinct) != 2:
        raise LabelError("non-binary label", label_column=label_column, distinct_values=len(distinct))

    if positive_label is not None:
        if positive_label not in distinct:
            raise LabelError(
                f"positive label {positive_label!r} not present in label column",
                label_column=label_column,
            )
        positive = positive_label
    else:
        # two numbers: the larger; otherwise a yes-like token; otherwise the later value in sort order
        numeric = pd.to_numeric(pd.Series(distinct), errors="coerce")
        tokens = [value for value in distinct if value.lower() in POSITIVE_TOKENS]
        if numeric.notna().all():
            positive = distinct[int(numeric.idxmax())]
        elif len(tokens) == 1:
            positive = tokens[0]
        else:
            positive = distinct[1]
    return (raw == positive).to_numpy().astype(np.int8), positive


def load_dataset(
    path: Union[str, Path],
    label_column: str,
    delimiter: Optional[str] = None,
    schema_hints: Optional[Mapping[str, str]] = None,
    positive_label: Optional[str] = None,
) -> Dataset:
    """
    Read a delimiter-separated file with a header row into a `Dataset`.

    Columns are numeric when every non-missing value parses as a number and
    categorical otherwise; `schema_hints` ({column: "numeric"|"categorical"})
    overrides the inference. Missing numeric values become NaN.

    Without `positive_label` the positive class is the larger of two numeric
    labels ({1, 2} gives 2), else the single yes-like token (yes, true, fraud, ...),
    else the later of the two values in sort order.
    """
    path = Path(path)
    delimiter = delimiter or settings.CSV_DELIMITER
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            dtype=str,
            encoding="utf-8",
            keep_default_na=True,
            skipinitialspace=True,
        )
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise DatasetLoadError(f"Cannot read dataset: {e}", path=str(path)) from e
    except pd.errors.EmptyDataError as e:
        raise EmptyDatasetError(f"Dataset file is empty: {path}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if label_column not in frame.columns:
        raise LabelError(f"label column {label_column!r} not found", label_column=label_column)
    if frame.shape[0] == 0:
        raise EmptyDatasetError(details={"path": str(path)})

    frame = frame.apply(lambda s: s.str.strip())
    labels, positive = _map_labels(frame[label_column], label_column, positive_label)

    hints = {k: ColumnKind(v) for k, v in (schema_hints or {}).items()}
    columns: Dict[str, np.ndarray] = {}
    kinds: Dict[str, ColumnKind] = {}
    for column in frame.columns:
        if column == label_column:
            continue
        raw = frame[column]
        present = raw.notna() & (raw != "")
        parsed = pd.to_numeric(raw.where(present), errors="coerce")
        kind = hints.get(column)
        if kind is None:
            parses = bool(present.any()) and bool(parsed[present].notna().all())
            kind = ColumnKind.NUMERIC if parses else ColumnKind.CATEGORICAL
        kinds[column] = kind
        if kind is ColumnKind.NUMERIC:
            columns[column] = parsed.to_numpy(dtype=np.float64)
        else:
            columns[column] = raw.where(present, None).to_numpy(dtype=object)

    dataset = Dataset(columns=columns, kinds=kinds, labels=labels, name=path.stem, positive_label=positive)
    logger.info(
        "dataset_loaded",
        path=str(path),
        rows=dataset.n_rows,
        features=len(columns),
        positives=int(dataset.positive_index.shape[0]),
        positive_ratio=dataset.positive_ratio,
    )
    return dataset


def split_dataset(dataset: Dataset, spec: SplitSpec) -> SplitResult:
    """Seeded shuffle of row ids cut into floor(f_train*N) / floor(f_val*N) / remainder."""
    n = dataset.n_rows
    if n < 5:
        raise InvalidSplitError("Splitting needs at least 5 rows", details={"rows": n})
    permutation = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(np.floor(spec.fractions[0] * n))
    n_validation = int(np.floor(spec.fractions[1] * n))
    train = np.sort(permutation[:n_train])
    validation = np.sort(permutation[n_train:n_train + n_validation])
    test = np.sort(permutation[n_train + n_validation:])
    logger.debug("dataset_split", seed=spec.seed, sizes=(len(train), len(validation), len(test)))
    return SplitResult(train=train, validation=validation, test=test, seed=spec.seed)


@dataclass
class ConditionPool:
    """Candidate conditions with their coverage on one view; ids are list positions."""
    view: DatasetView
    conditions: List[Condition]
    coverages: List[Coverage]
    _matrix: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __len__(self) -> int:
        return len(self.conditions)

    def __iter__(self) -> Iterator[Tuple[Condition, Coverage]]:
        return iter(zip(self.conditions, self.coverages))

    @property
    def matrix(self) -> np.ndarray:
        """(n_conditions, n_rows) boolean coverage matrix."""
        if self._matrix is None:
            if self.conditions:
                self._matrix = np.vstack([c.bits for c in self.coverages])
            else:
                self._matrix = np.zeros((0, self.view.n_rows), dtype=bool)
        return self._matrix

    def index_of(self, condition: Condition) -> Optional[int]:
        try:
            return self.conditions.index(condition)
        except ValueError:
            return None


def _numeric_thresholds(values: np.ndarray, max_bins: int) -> np.ndarray:
    distinct = np.unique(values[~np.isnan(values)])
    if distinct.shape[0] < 2:
        return np.empty(0)
    quantiles = np.arange(1, max_bins) / max_bins
    thresholds = np.unique(np.quantile(distinct, quantiles, method="lower"))
    # x <= max / x > max would be vacuous
    return thresholds[thresholds < distinct[-1]]


def _top_categories(values: np.ndarray, max_bins: int) -> List[str]:
    present = pd.Series(values[pd.notna(values)], dtype=object)
    if present.empty:
        return []
    counts = present.value_counts()
    if counts.shape[0] < 2:
        return []
    ranked = sorted(counts.items(), key=lambda item: (-item[1], str(item[0])))
    return [str(category) for category, _ in ranked[:max_bins]]


def derive_conditions(
    source: Union[Dataset, DatasetView],
    max_bins: Optional[int] = None,
) -> ConditionPool:
    """
    Discretize every feature into candidate conditions with coverage on `source`.

    Numeric columns get up to max_bins-1 thresholds at evenly spaced lower
    quantiles of their distinct values, each producing a <= and a > condition.
    Categorical columns get one = condition per category, keeping the
    max_bins most frequent. Constant columns contribute nothing.
    """
    max_bins = max_bins if max_bins is not None else settings.MAX_BINS
    if max_bins < 2:
        raise InvalidConfigurationError("max_bins must be at least 2", config_key="max_bins")
    view = source.view(name="all") if isinstance(source, Dataset) else source

    conditions: List[Condition] = []
    for feature in view.dataset.features:
        values = view.column(feature)
        if view.dataset.kinds[feature] is ColumnKind.NUMERIC:
            for threshold in _numeric_thresholds(values, max_bins):
                conditions.append(Condition(feature, Operator.LE, float(threshold)))
                conditions.append(Condition(feature, Operator.GT, float(threshold)))
        else:
            for category in _top_categories(values, max_bins):
                conditions.append(Condition(feature, Operator.EQ, category))

    coverages = [Coverage.from_bits(view.condition_bits(c), view.positive_mask) for c in conditions]
    logger.info("conditions_derived", view=view.name, conditions=len(conditions), max_bins=max_bins)
    return ConditionPool(view=view, conditions=conditions, coverages=coverages)
