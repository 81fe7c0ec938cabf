"""
JSON file formats for rule pools, fronts and PORS traces.

A pool file records how its dataset was loaded and split, so loading it back
rebuilds the same split views and re-applies every rule's conditions.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Type, TypeVar, Union

import structlog
from pydantic import BaseModel, Field, ValidationError

from app.core.exceptions import DatasetLoadError, ExportError, RuleFormatError
from app.services.dataset import (
    Condition,
    Dataset,
    DatasetView,
    Operator,
    SplitResult,
    SplitSpec,
    load_dataset,
    split_dataset,
)
from app.services.pareto import ParetoFront, Solution, make_pareto_front
from app.services.pors import PorsTrace
from app.services.rules import ObjectivePoint, Rule, RulePool, RuleSubset, evaluate_metrics

logger = structlog.get_logger(__name__)

FORMAT_VERSION = 1

ModelT = TypeVar("ModelT", bound=BaseModel)


class DatasetMeta(BaseModel):
    path: str = Field(..., description="Dataset file the pool was mined from")
    label_column: str
    delimiter: str = ","
    positive_label: Optional[str] = Field(None, description="Positive label value as found in the file")
    split_seed: int = 0
    fractions: Tuple[float, float, float] = (0.60, 0.20, 0.20)


class ConditionRecord(BaseModel):
    feature: str
    operator: str = Field(..., pattern=r"^(<=|>|=)$")
    value: Union[float, str]


class RuleRecord(BaseModel):
    id: int
    conditions: List[ConditionRecord]
    provenance: str = ""
    text: str = ""
    precision: Optional[float] = None
    recall: Optional[float] = None


class PoolFile(BaseModel):
    version: int = FORMAT_VERSION
    dataset: DatasetMeta
    stage1: str
    rules: List[RuleRecord]


class FrontEntryRecord(BaseModel):
    precision: float
    recall: float
    rule_ids: List[int]
    size: int
    true_positive: Optional[int] = None
    covered: Optional[int] = None


class FrontFile(BaseModel):
    version: int = FORMAT_VERSION
    split: str = "train"
    source: str = Field("", description="Method that produced the front")
    hypervolume: float
    entries: List[FrontEntryRecord]


class SnapshotRecord(BaseModel):
    iteration: int
    train_hv: float
    validation_hv: Optional[float] = None
    seconds: float
    n_candidates: int
    front: List[FrontEntryRecord]


class TraceFile(BaseModel):
    version: int = FORMAT_VERSION
    ssf: str
    k: int
    max_rounds: int
    seed: int
    converged_at: Optional[int] = None
    best_iteration: int
    snapshots: List[SnapshotRecord]


class HistoryRecord(BaseModel):
    generation: int
    seconds: float
    train_hv: float
    validation_hv: Optional[float] = None


class HistoryFile(BaseModel):
    version: int = FORMAT_VERSION
    method: str = "nsga2"
    evaluations: int
    history: List[HistoryRecord]


class SubsetFile(BaseModel):
    version: int = FORMAT_VERSION
    method: str
    rule_ids: List[int]
    rules: List[str] = Field(default_factory=list, description="Rendered member rules")
    train: FrontEntryRecord
    score: Optional[float] = None
    validation_score: Optional[float] = None


@dataclass
class LoadedPool:
    """A pool file materialised against its dataset and split."""
    meta: DatasetMeta
    stage1: str
    dataset: Dataset
    split: SplitResult
    train: DatasetView
    validation: DatasetView
    test: DatasetView
    pool: RulePool


def write_model(model: BaseModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}", path=str(path)) from e
    logger.debug("file_written", path=str(path), kind=type(model).__name__)
    return path


def read_model(model_type: Type[ModelT], path: Union[str, Path]) -> ModelT:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetLoadError(f"Cannot read {path}: {e}", path=str(path)) from e
    try:
        return model_type.model_validate_json(raw)
    except ValidationError as e:
        raise RuleFormatError(
            f"{path} is not a valid {model_type.__name__}",
            reason=str(e.errors()[0].get("msg", "")) if e.errors() else None,
        ) from e


def rule_to_record(rule: Rule, view: Optional[DatasetView] = None) -> RuleRecord:
    record = RuleRecord(
        id=rule.id,
        conditions=[
            ConditionRecord(feature=c.feature, operator=c.operator.value, value=c.value) for c in rule.conditions
        ],
        provenance=rule.provenance,
        text=rule.render(),
    )
    if view is not None:
        point = evaluate_metrics(rule.coverage, view)
        record.precision, record.recall = point.precision, point.recall
    return record


def record_to_conditions(record: RuleRecord) -> Tuple[Condition, ...]:
    if not record.conditions:
        raise RuleFormatError(reason=f"rule {record.id} has no conditions")
    return tuple(Condition(c.feature, Operator(c.operator), c.value) for c in record.conditions)


def pool_to_file(pool: RulePool, meta: DatasetMeta, stage1: str) -> PoolFile:
    return PoolFile(dataset=meta, stage1=stage1, rules=[rule_to_record(rule, pool.view) for rule in pool])


def load_pool(path: Union[str, Path]) -> LoadedPool:
    """Reload a pool file, its dataset and split; rule coverage is recomputed on the training rows."""
    document = read_model(PoolFile, path)
    meta = document.dataset
    dataset = load_dataset(meta.path, meta.label_column, meta.delimiter, positive_label=meta.positive_label)
    split = split_dataset(dataset, SplitSpec(meta.split_seed, meta.fractions))
    train, validation, test = split.views(dataset)

    rules = []
    seen = set()
    for record in document.rules:
        if record.id in seen:
            raise RuleFormatError(reason=f"duplicate rule id {record.id}")
        seen.add(record.id)
        conditions = record_to_conditions(record)
        rules.append(Rule(record.id, conditions, train.conjunction_coverage(conditions), record.provenance))
    logger.info("pool_loaded", path=str(path), rules=len(rules), stage1=document.stage1)
    return LoadedPool(meta, document.stage1, dataset, split, train, validation, test, RulePool(rules, train))


def entry_record(solution: Solution) -> FrontEntryRecord:
    counts = solution.point.counts
    return FrontEntryRecord(
        precision=solution.precision,
        recall=solution.recall,
        rule_ids=list(solution.members),
        size=len(solution.members),
        true_positive=counts[0] if counts else None,
        covered=counts[1] if counts else None,
    )


def front_to_file(front: ParetoFront, split: str = "train", source: str = "") -> FrontFile:
    return FrontFile(
        split=split,
        source=source,
        hypervolume=front.hypervolume,
        entries=[entry_record(s) for s in front.entries],
    )


def front_from_file(document: FrontFile) -> ParetoFront:
    """Rebuild a front from its records; points carry the stored float coordinates."""
    solutions = [
        Solution(tuple(entry.rule_ids), ObjectivePoint(entry.precision, entry.recall)) for entry in document.entries
    ]
    return make_pareto_front(solutions)


def trace_to_file(trace: PorsTrace) -> TraceFile:
    cfg = trace.config
    return TraceFile(
        ssf=cfg.ssf.value,
        k=cfg.k,
        max_rounds=cfg.max_rounds,
        seed=cfg.seed,
        converged_at=trace.converged_at,
        best_iteration=trace.best_snapshot().iteration,
        snapshots=[
            SnapshotRecord(
                iteration=s.iteration,
                train_hv=s.train_hv,
                validation_hv=s.validation_hv,
                seconds=s.seconds,
                n_candidates=s.n_candidates,
                front=[entry_record(e) for e in s.front.entries],
            )
            for s in trace.snapshots
        ],
    )


def subset_record(subset: RuleSubset) -> FrontEntryRecord:
    counts = subset.objective.counts
    return FrontEntryRecord(
        precision=subset.objective.precision,
        recall=subset.objective.recall,
        rule_ids=list(subset.members),
        size=len(subset.members),
        true_positive=counts[0] if counts else None,
        covered=counts[1] if counts else None,
    )
