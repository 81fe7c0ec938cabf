"""
Experiment harness: repeated seeded trials of Stage 1 plus a set of search
methods, evaluated on held-out rows and aggregated into mean/std tables.
"""
import json
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import pandas as pd
import structlog
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.config import settings
from app.core.exceptions import (
    DatasetLoadError,
    EmptyPositiveSetError,
    ExperimentError,
    ExportError,
    InvalidConfigurationError,
    RuleMinerError,
    UnknownSsfMethodError,
)
from app.core.seeding import derive_seed
from app.services.baselines import NsgaConfig, NsgaRunner, front_select, greedy_fbeta
from app.services.dataset import Dataset, DatasetView, SplitSpec, derive_conditions, load_dataset, split_dataset
from app.services.induction import Stage1Method, build_rule_pool
from app.services.pareto import Solution, hypervolume, make_pareto_front, reevaluate
from app.services.pors import PorsConfig, PorsTrace, run_pors
from app.services.rules import RulePool, f_beta
from app.services.ssf import SsfName

logger = structlog.get_logger(__name__)


class Stage1Plan(BaseModel):
    method: Literal["spectral", "sequential", "tree"] = "spectral"
    n_rules: int = Field(default_factory=lambda: settings.N_RULES, ge=1)
    max_len: int = Field(default_factory=lambda: settings.MAX_RULE_LENGTH, ge=1)
    betas: Optional[List[float]] = Field(None, description="Beta spectrum; the default spectrum when omitted")
    beam_width: int = Field(default_factory=lambda: settings.BEAM_WIDTH, ge=1)
    max_bins: int = Field(default_factory=lambda: settings.MAX_BINS, ge=2)


class MethodPlan(BaseModel):
    kind: Literal["pors", "nsga2", "greedy"]
    ssf: str = Field("hvc-ss", description="SSF method for PORS")
    hvc_reference: Literal["current", "previous"] = "current"
    max_rounds: int = Field(default_factory=lambda: settings.MAX_ROUNDS, ge=1)
    population: int = Field(default_factory=lambda: settings.NSGA_POPULATION)
    generations: int = Field(default_factory=lambda: settings.NSGA_GENERATIONS, ge=0)
    mutation_rate: float = Field(default_factory=lambda: settings.NSGA_MUTATION_RATE, ge=0.0, le=1.0)
    crossover_rate: float = Field(default_factory=lambda: settings.NSGA_CROSSOVER_RATE, ge=0.0, le=1.0)
    beta: float = Field(0.1, gt=0.0, description="F-beta weight for the greedy baseline")
    beam: int = Field(default_factory=lambda: settings.GREEDY_BEAM, ge=1)

    @field_validator("ssf")
    @classmethod
    def validate_ssf(cls, v):
        try:
            return SsfName.parse(v).value
        except UnknownSsfMethodError as e:
            raise ValueError(e.message) from e

    @property
    def label(self) -> str:
        if self.kind == "pors":
            suffix = "-prev" if self.hvc_reference == "previous" else ""
            return f"pors:{self.ssf}{suffix}"
        if self.kind == "greedy":
            return f"greedy:beta={self.beta:g}"
        return "nsga2"


class ExperimentPlan(BaseModel):
    """A dataset, a Stage-1 recipe and the methods to compare over repeated trials."""
    name: str = "experiment"
    dataset: str
    label_column: str
    delimiter: Optional[str] = None
    positive_label: Optional[str] = None
    fractions: Tuple[float, float, float] = (0.60, 0.20, 0.20)
    stage1: Stage1Plan = Field(default_factory=Stage1Plan)
    methods: List[MethodPlan] = Field(..., min_length=1)
    trials: int = Field(default_factory=lambda: settings.TRIALS, ge=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    k_values: List[int] = Field(default_factory=lambda: [settings.SSF_K], min_length=1)
    precision_thresholds: List[float] = Field(default_factory=list)
    f_betas: List[float] = Field(default_factory=list)

    @field_validator("k_values")
    @classmethod
    def validate_k_values(cls, v):
        if any(k < 1 for k in v):
            raise ValueError("k values must be at least 1")
        return v

    @model_validator(mode="after")
    def resolve_dataset(self):
        self.delimiter = self.delimiter or settings.CSV_DELIMITER
        return self

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentPlan":
        path = Path(path)
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as e:
            raise DatasetLoadError(f"Cannot read plan: {e}", path=str(path)) from e
        try:
            plan = cls.model_validate_json(raw)
        except ValidationError as e:
            raise InvalidConfigurationError(
                f"Invalid experiment plan {path}", config_key="plan", details={"errors": e.errors(include_url=False)}
            ) from e
        dataset = Path(plan.dataset)
        if not dataset.is_absolute() and not dataset.exists():
            for base in (path.parent, Path(settings.DATA_DIR)):
                if (base / dataset).exists():
                    plan.dataset = str(base / dataset)
                    break
        return plan

    def cells(self) -> List[Tuple[MethodPlan, Optional[int]]]:
        """(method, k) pairs; k only varies for PORS."""
        pairs: List[Tuple[MethodPlan, Optional[int]]] = []
        for method in self.methods:
            if method.kind == "pors":
                pairs.extend((method, k) for k in self.k_values)
            else:
                pairs.append((method, None))
        return pairs


@dataclass
class TrialRecord:
    """Outcome of one method on one trial."""
    trial: int
    method: str
    k: Optional[int]
    test_hv: float
    validation_hv: float
    train_hv: float
    final_test_hv: float
    seconds: float
    stage1_seconds: float
    front_size: int
    best_iteration: Optional[int] = None
    rounds: Optional[int] = None
    recall_at_precision: Dict[str, Optional[float]] = field(default_factory=dict)
    fbeta: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ResultCell:
    """Aggregated statistics of one (dataset, method, k) cell."""
    dataset: str
    method: str
    k: Optional[int]
    trials: int
    test_hv_mean: float
    test_hv_std: float
    single_trial: bool
    final_test_hv_mean: float
    seconds_mean: float
    stage1_seconds_mean: float
    recall_at_precision: Dict[str, Optional[float]] = field(default_factory=dict)
    fbeta: Dict[str, Optional[float]] = field(default_factory=dict)

    def row(self) -> Dict[str, Any]:
        """Flat row for tabular export."""
        row: Dict[str, Any] = {
            "dataset": self.dataset,
            "method": self.method,
            "k": self.k,
            "trials": self.trials,
            "test_hv_mean": self.test_hv_mean,
            "test_hv_std": self.test_hv_std,
            "single_trial": self.single_trial,
            "final_test_hv_mean": self.final_test_hv_mean,
            "seconds_mean": self.seconds_mean,
            "stage1_seconds_mean": self.stage1_seconds_mean,
        }
        for key, value in self.recall_at_precision.items():
            row[f"recall_at_precision_{key}"] = value
        for key, value in self.fbeta.items():
            row[f"fbeta_{key}"] = value
        return row


@dataclass
class ResultTable:
    plan_name: str
    cells: List[ResultCell]
    records: List[TrialRecord]
    traces: Dict[Tuple[int, str, Optional[int]], PorsTrace] = field(default_factory=dict, repr=False)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(sorted(values)) / len(values)


def _std(values: Sequence[float]) -> float:
    return statistics.stdev(sorted(values)) if len(values) > 1 else 0.0


def _optional_mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return _mean(present) if present else None


def aggregate(dataset: str, records: Sequence[TrialRecord]) -> List[ResultCell]:
    """Mean and sample std per (method, k), sorted by method then k; independent of record order."""
    groups: Dict[Tuple[str, Optional[int]], List[TrialRecord]] = {}
    for record in records:
        groups.setdefault((record.method, record.k), []).append(record)

    cells = []
    for (method, k), group in sorted(groups.items(), key=lambda item: (item[0][0], item[0][1] or 0)):
        hv = [r.test_hv for r in group]
        thresholds = sorted({key for r in group for key in r.recall_at_precision})
        betas = sorted({key for r in group for key in r.fbeta})
        cells.append(
            ResultCell(
                dataset=dataset,
                method=method,
                k=k,
                trials=len(group),
                test_hv_mean=_mean(hv),
                test_hv_std=_std(hv),
                single_trial=len(group) == 1,
                final_test_hv_mean=_mean([r.final_test_hv for r in group]),
                seconds_mean=_mean([r.seconds for r in group]),
                stage1_seconds_mean=_mean([r.stage1_seconds for r in group]),
                recall_at_precision={t: _optional_mean([r.recall_at_precision.get(t) for r in group]) for t in thresholds},
                fbeta={b: _optional_mean([r.fbeta.get(b) for r in group]) for b in betas},
            )
        )
    return cells


def downstream_columns(
    front: Sequence[Solution],
    pool: RulePool,
    validation: DatasetView,
    test: DatasetView,
    thresholds: Sequence[float],
    betas: Sequence[float],
) -> Tuple[Dict[str, Optional[float]], Dict[str, Optional[float]]]:
    """
    Choose one subset per criterion on validation points and report its test
    recall (precision thresholds) or test F-beta.
    """
    validation_front = make_pareto_front(reevaluate(front, pool, validation))
    recall_at: Dict[str, Optional[float]] = {}
    for threshold in thresholds:
        chosen = front_select(validation_front.entries, min_precision=threshold)
        recall_at[f"{threshold:g}"] = (
            pool.evaluate_subset(chosen.members, test).objective.recall if chosen is not None else None
        )
    fbeta: Dict[str, Optional[float]] = {}
    for beta in betas:
        chosen = front_select(validation_front.entries, beta=beta)
        if chosen is None:
            fbeta[f"{beta:g}"] = None
            continue
        point = pool.evaluate_subset(chosen.members, test).objective
        fbeta[f"{beta:g}"] = f_beta(point.precision, point.recall, beta)
    return recall_at, fbeta


class ExperimentRunner:
    """Runs the trials of a plan and aggregates them."""

    def __init__(self, plan: ExperimentPlan, threads: Optional[int] = None):
        self.plan = plan
        self.threads = threads if threads is not None else settings.THREADS
        if self.threads < 1:
            raise InvalidConfigurationError("threads must be at least 1", config_key="threads")
        self.dataset: Optional[Dataset] = None

    def load(self) -> Dataset:
        if self.dataset is None:
            plan = self.plan
            self.dataset = load_dataset(
                plan.dataset, plan.label_column, plan.delimiter, positive_label=plan.positive_label
            )
        return self.dataset

    def run(self) -> ResultTable:
        dataset = self.load()
        started = time.perf_counter()
        logger.info(
            "experiment_started",
            plan=self.plan.name,
            trials=self.plan.trials,
            cells=len(self.plan.cells()),
            threads=self.threads,
        )
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            outcomes = list(executor.map(self.run_trial, range(self.plan.trials)))

        records = [record for trial_records, _ in outcomes for record in trial_records]
        traces = {key: trace for _, trial_traces in outcomes for key, trace in trial_traces.items()}
        table = ResultTable(self.plan.name, aggregate(dataset.name, records), records, traces)
        logger.info(
            "experiment_completed",
            plan=self.plan.name,
            records=len(records),
            duration_seconds=time.perf_counter() - started,
        )
        return table

    def run_trial(self, trial: int) -> Tuple[List[TrialRecord], Dict[Tuple[int, str, Optional[int]], PorsTrace]]:
        plan = self.plan
        dataset = self.load()
        trial_seed = plan.seed + trial
        try:
            split = split_dataset(dataset, SplitSpec(trial_seed, plan.fractions))
            train, validation, test = split.views(dataset)
            for view in (train, validation, test):
                if view.n_positive == 0:
                    raise EmptyPositiveSetError(split=view.name)

            stage1_started = time.perf_counter()
            conditions = derive_conditions(train, plan.stage1.max_bins)
            pool = build_rule_pool(
                Stage1Method(plan.stage1.method),
                conditions,
                plan.stage1.n_rules,
                plan.stage1.max_len,
                plan.stage1.betas,
                plan.stage1.beam_width,
                seed=derive_seed(trial_seed, "stage1"),
                threads=1,
            )
            stage1_seconds = time.perf_counter() - stage1_started
        except RuleMinerError as e:
            raise ExperimentError(f"Trial {trial} failed during setup: {e.message}", trial=trial, method="stage1", cause=e) from e

        records: List[TrialRecord] = []
        traces: Dict[Tuple[int, str, Optional[int]], PorsTrace] = {}
        for method, k in plan.cells():
            try:
                record, trace = self._run_method(trial, trial_seed, method, k, pool, validation, test, stage1_seconds)
            except RuleMinerError as e:
                raise ExperimentError(
                    f"Trial {trial} failed in {method.label}: {e.message}", trial=trial, method=method.label, cause=e
                ) from e
            records.append(record)
            if trace is not None:
                traces[(trial, method.label, k)] = trace
            logger.info("trial_completed", trial=trial, method=method.label, k=k, test_hv=record.test_hv, seconds=record.seconds)
        return records, traces

    def _run_method(
        self,
        trial: int,
        trial_seed: int,
        method: MethodPlan,
        k: Optional[int],
        pool: RulePool,
        validation: DatasetView,
        test: DatasetView,
        stage1_seconds: float,
    ) -> Tuple[TrialRecord, Optional[PorsTrace]]:
        plan = self.plan
        started = time.perf_counter()
        trace: Optional[PorsTrace] = None
        best_iteration = rounds = None

        if method.kind == "greedy":
            result = greedy_fbeta(pool, method.beta, method.beam, validation)
            seconds = time.perf_counter() - started
            test_point = pool.evaluate_subset(result.subset.members, test).objective
            validation_point = pool.evaluate_subset(result.subset.members, validation).objective
            test_hv = test_point.precision * test_point.recall
            return (
                TrialRecord(
                    trial=trial,
                    method=method.label,
                    k=None,
                    test_hv=test_hv,
                    validation_hv=validation_point.precision * validation_point.recall,
                    train_hv=result.subset.objective.precision * result.subset.objective.recall,
                    final_test_hv=test_hv,
                    seconds=seconds,
                    stage1_seconds=stage1_seconds,
                    front_size=1,
                    fbeta={f"{method.beta:g}": f_beta(test_point.precision, test_point.recall, method.beta)},
                ),
                None,
            )

        if method.kind == "pors":
            cfg = PorsConfig(
                k=k if k is not None else settings.SSF_K,
                max_rounds=method.max_rounds,
                ssf=SsfName.parse(method.ssf),
                seed=trial_seed,
                hvc_reference=method.hvc_reference,
                threads=1,
            )
            trace = run_pors(pool, cfg, validation)
            seconds = time.perf_counter() - started
            best = trace.best_snapshot()
            front, final_front = best.front, trace.final.front
            validation_hv = best.validation_hv or 0.0
            best_iteration, rounds = best.iteration, len(trace.snapshots) - 1
        else:
            cfg_nsga = NsgaConfig(
                population=method.population,
                generations=method.generations,
                mutation_rate=method.mutation_rate,
                crossover_rate=method.crossover_rate,
                seed=trial_seed,
            )
            result = NsgaRunner(pool, cfg_nsga, validation).run()
            seconds = time.perf_counter() - started
            front = final_front = result.archive
            validation_hv = float(hypervolume(reevaluate(front.entries, pool, validation)))

        test_hv = float(hypervolume(reevaluate(front.entries, pool, test)))
        final_test_hv = (
            test_hv if final_front is front else float(hypervolume(reevaluate(final_front.entries, pool, test)))
        )
        recall_at, fbeta = downstream_columns(
            front.entries, pool, validation, test, plan.precision_thresholds, plan.f_betas
        )
        record = TrialRecord(
            trial=trial,
            method=method.label,
            k=k,
            test_hv=test_hv,
            validation_hv=validation_hv,
            train_hv=front.hypervolume,
            final_test_hv=final_test_hv,
            seconds=seconds,
            stage1_seconds=stage1_seconds,
            front_size=len(front),
            best_iteration=best_iteration,
            rounds=rounds,
            recall_at_precision=recall_at,
            fbeta=fbeta,
        )
        return record, trace


def run_experiment(plan: ExperimentPlan, threads: Optional[int] = None) -> ResultTable:
    """Run every trial of `plan` and aggregate the results."""
    return ExperimentRunner(plan, threads).run()


def _fixed(value: Any) -> Any:
    """Floats as 4-decimal fixed-point text, so JSON files show the same digits as the CSV."""
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, dict):
        return {k: _fixed(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_fixed(v) for v in value]
    return value


def export_results(table: ResultTable, format_type: Literal["csv", "json"], path: Union[str, Path]) -> Path:
    """Write the aggregated cells with floats rendered to 4 decimals."""
    if not table.cells:
        raise ExportError("Result table is empty", path=str(path))
    path = Path(path)
    rows = [cell.row() for cell in table.cells]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if format_type == "csv":
            frame = pd.DataFrame(rows)
            frame["k"] = frame["k"].astype("Int64")
            frame.to_csv(path, index=False, float_format="%.4f", lineterminator="\n")
        elif format_type == "json":
            document = {"plan": table.plan_name, "cells": _fixed(rows)}
            path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        else:
            raise ExportError(f"Unsupported export format: {format_type}", path=str(path))
    except OSError as e:
        raise ExportError(f"Cannot write results: {e}", path=str(path)) from e
    logger.info("results_exported", path=str(path), format=format_type, cells=len(rows))
    return path


def export_records(table: ResultTable, path: Union[str, Path]) -> Path:
    """Write every per-trial record as JSON."""
    path = Path(path)
    document = {"plan": table.plan_name, "records": [_fixed(r.to_dict()) for r in table.records]}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ExportError(f"Cannot write trial records: {e}", path=str(path)) from e
    return path
