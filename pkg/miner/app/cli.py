"""
Command line interface for the rule subset miner.

Subcommands cover data preparation, Stage-1 rule generation, PORS, the
baselines, Stage-2 selection on a saved front and full experiments.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import structlog
from rich.console import Console
from rich.table import Table

from app.core.config import settings
from app.core.exceptions import RuleMinerError
from app.core.seeding import derive_seed
from app.services.baselines import NsgaConfig, NsgaRunner, front_select, greedy_fbeta
from app.services.dataset import SplitSpec, derive_conditions, load_dataset, split_dataset
from app.services.experiment import ExperimentPlan, export_records, export_results, run_experiment
from app.services.induction import DEFAULT_BETAS, Stage1Method, build_rule_pool
from app.services.pareto import ParetoFront
from app.services.pors import PorsConfig, run_pors
from app.services.rules import pool_statistics
from app.services.serialization import (
    DatasetMeta,
    FrontFile,
    HistoryFile,
    HistoryRecord,
    SubsetFile,
    entry_record,
    front_from_file,
    front_to_file,
    load_pool,
    pool_to_file,
    read_model,
    subset_record,
    trace_to_file,
    write_model,
)
from app.services.ssf import SsfName
from app.telemetry.logging import bind_run_context, setup_logging

logger = structlog.get_logger(__name__)


def _float_list(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}")
    return number


class RuleMinerCLI:
    """Command line interface for Pareto-optimal rule subset mining."""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()
        self.parser = self._create_parser()
        self.handlers: Dict[str, Callable[[argparse.Namespace], int]] = {
            "prep": self.cmd_prep,
            "stage1": self.cmd_stage1,
            "pors:run": self.cmd_pors_run,
            "baseline:nsga2": self.cmd_nsga2,
            "baseline:greedy": self.cmd_greedy,
            "select": self.cmd_select,
            "experiment:run": self.cmd_experiment_run,
        }

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create command line argument parser."""
        # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument(
            "--seed",
            type=int,
            default=argparse.SUPPRESS,
            help=f"Base seed for every random stream (default: {settings.DEFAULT_SEED})",
        )
        common.add_argument(
            "--threads",
            type=_positive_int,
            default=argparse.SUPPRESS,
            help=f"Upper bound on worker threads (default: {settings.THREADS})",
        )
        common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="Enable debug logging")

        parser = argparse.ArgumentParser(
            prog="pors-rules",
            description="Mine precision/recall Pareto-optimal rule subsets",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            parents=[common],
            epilog="""
Examples:
  # Generate a SpectralRules pool of 500 rules
  pors-rules stage1 --data bank.csv --label y --n-rules 500 --output pool.json

  # Run PORS with HVC-based selection and keep the trace
  pors-rules pors run --pool pool.json --ssf hvc-ss --k 10 --trace trace.json --front front.json

  # Pick the highest-recall subset with precision >= 0.9
  pors-rules select --front front.json --min-precision 0.9

  # Run a reproduction plan
  pors-rules experiment run --plan experiments/plans/bank_reproduction.json --output-dir output/bank
            """,
        )
        commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

        prep = commands.add_parser("prep", parents=[common], help="Load and split a dataset")
        self._add_dataset_arguments(prep)
        prep.add_argument("--manifest", help="Write the split row ids to this file")

        stage1 = commands.add_parser("stage1", parents=[common], help="Generate a Stage-1 rule pool")
        self._add_dataset_arguments(stage1)
        stage1.add_argument(
            "--stage1",
            choices=[m.value for m in Stage1Method],
            default=Stage1Method.SPECTRAL.value,
            help="Rule generator (default: spectral)",
        )
        stage1.add_argument("--n-rules", type=_positive_int, default=settings.N_RULES, help="Rule budget")
        stage1.add_argument("--max-len", type=_positive_int, default=settings.MAX_RULE_LENGTH, help="Conditions per rule")
        stage1.add_argument("--betas", type=_float_list, help="Beta spectrum, comma separated")
        stage1.add_argument("--beta", type=float, default=0.1, help="Beta of the sequential generator (default: 0.1)")
        stage1.add_argument("--beam-width", type=_positive_int, default=settings.BEAM_WIDTH, help="Rule growth beam")
        stage1.add_argument("--max-bins", type=int, default=settings.MAX_BINS, help="Bins per feature")
        stage1.add_argument("--output", required=True, help="Pool file to write")

        pors = commands.add_parser("pors", help="PORS front expansion")
        pors_commands = pors.add_subparsers(dest="action", required=True, metavar="ACTION")
        pors_run = pors_commands.add_parser("run", parents=[common], help="Run PORS on a pool")
        pors_run.add_argument("--pool", required=True, help="Pool file from `stage1`")
        pors_run.add_argument("--ssf", choices=[m.value for m in SsfName], default=SsfName.HVC_SS.value)
        pors_run.add_argument("--k", type=_positive_int, default=settings.SSF_K, help="Solutions selected per round")
        pors_run.add_argument("--max-rounds", type=_positive_int, default=settings.MAX_ROUNDS)
        pors_run.add_argument(
            "--hvc-reference",
            choices=["current", "previous"],
            default="current",
            help="Front that hvc-ss measures contributions against",
        )
        pors_run.add_argument("--trace", help="Trace file to write")
        pors_run.add_argument("--front", help="Front file to write (best snapshot by validation HV)")
        pors_run.add_argument("--final", action="store_true", help="Write the last front instead of the best one")

        baseline = commands.add_parser("baseline", help="Comparison methods")
        baseline_commands = baseline.add_subparsers(dest="action", required=True, metavar="ACTION")
        nsga2 = baseline_commands.add_parser("nsga2", parents=[common], help="NSGA-II with an external archive")
        nsga2.add_argument("--pool", required=True)
        nsga2.add_argument("--population", type=int, default=settings.NSGA_POPULATION)
        nsga2.add_argument("--generations", type=int, default=settings.NSGA_GENERATIONS)
        nsga2.add_argument("--mutation-rate", type=float, default=settings.NSGA_MUTATION_RATE)
        nsga2.add_argument("--crossover-rate", type=float, default=settings.NSGA_CROSSOVER_RATE)
        nsga2.add_argument("--history-every", type=_positive_int, default=10)
        nsga2.add_argument("--front", help="Archive front file to write")
        nsga2.add_argument("--history", help="HV-over-time file to write")

        greedy = baseline_commands.add_parser("greedy", parents=[common], help="Greedy F-beta forward selection")
        greedy.add_argument("--pool", required=True)
        greedy.add_argument("--beta", type=float, default=0.1)
        greedy.add_argument("--beam", type=_positive_int, default=settings.GREEDY_BEAM)
        greedy.add_argument("--output", help="Subset file to write")

        select = commands.add_parser("select", parents=[common], help="Stage-2 choice from a front file")
        select.add_argument("--front", required=True)
        criterion = select.add_mutually_exclusive_group(required=True)
        criterion.add_argument("--min-precision", type=float, help="Highest recall with at least this precision")
        criterion.add_argument("--beta", type=float, help="Highest F-beta")

        experiment = commands.add_parser("experiment", help="Repeated-trial experiments")
        experiment_commands = experiment.add_subparsers(dest="action", required=True, metavar="ACTION")
        experiment_run = experiment_commands.add_parser("run", parents=[common], help="Run an experiment plan")
        experiment_run.add_argument("--plan", required=True, help="Plan file (JSON)")
        experiment_run.add_argument("--output-dir", help="Directory for result tables, trial records and traces")
        experiment_run.add_argument("--trials", type=_positive_int, help="Override the plan's trial count")

        return parser

    @staticmethod
    def global_defaults() -> Dict[str, object]:
        return {"seed": settings.DEFAULT_SEED, "threads": settings.THREADS, "verbose": False}

    @staticmethod
    def _add_dataset_arguments(parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", required=True, help="Delimited text file with a header row")
        parser.add_argument("--label", required=True, help="Binary label column")
        parser.add_argument("--delimiter", default=settings.CSV_DELIMITER)
        parser.add_argument("--positive-label", help="Label value of the positive class")
        parser.add_argument(
            "--fractions",
            type=_float_list,
            default=[0.6, 0.2, 0.2],
            help="Train/validation/test fractions (default: 0.6,0.2,0.2)",
        )

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Parse `argv`, dispatch, and map errors to exit codes."""
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
        for key, default in self.global_defaults().items():
            if not hasattr(args, key):
                setattr(args, key, default)

        setup_logging("DEBUG" if args.verbose else None)
        key = f"{args.command}:{args.action}" if getattr(args, "action", None) else args.command
        bind_run_context(command=key, seed=args.seed, threads=args.threads)
        try:
            return self.handlers[key](args)
        except RuleMinerError as e:
            logger.debug("command_failed", command=key, error=e.error_code)
            sys.stderr.write(json.dumps(e.to_dict(), default=str) + "\n")
            return e.exit_code
        except KeyboardInterrupt:
            sys.stderr.write("interrupted\n")
            return 130
        except Exception as e:
            logger.debug("command_crashed", command=key, exc_info=True)
            error = RuleMinerError(
                str(e) or type(e).__name__, error_code="INTERNAL_ERROR", details={"type": type(e).__name__}
            )
            sys.stderr.write(json.dumps(error.to_dict(), default=str) + "\n")
            return error.exit_code

    def cmd_prep(self, args: argparse.Namespace) -> int:
        dataset = load_dataset(args.data, args.label, args.delimiter, positive_label=args.positive_label)
        split = split_dataset(dataset, SplitSpec(derive_seed(args.seed, "split"), tuple(args.fractions)))
        train, validation, test = split.views(dataset)
        if args.manifest:
            split.write_manifest(args.manifest)

        table = Table(title=f"{dataset.name}: {dataset.n_rows} rows, {len(dataset.features)} features")
        for column in ("split", "rows", "positives", "positive ratio"):
            table.add_column(column, justify="right" if column != "split" else "left")
        for view in (train, validation, test):
            ratio = view.n_positive / view.n_rows if view.n_rows else 0.0
            table.add_row(view.name, str(view.n_rows), str(view.n_positive), f"{ratio:.4f}")
        self.console.print(table)
        return 0

    def cmd_stage1(self, args: argparse.Namespace) -> int:
        dataset = load_dataset(args.data, args.label, args.delimiter, positive_label=args.positive_label)
        split_seed = derive_seed(args.seed, "split")
        split = split_dataset(dataset, SplitSpec(split_seed, tuple(args.fractions)))
        train, _, _ = split.views(dataset)

        method = Stage1Method(args.stage1)
        betas = args.betas if method is not Stage1Method.SEQUENTIAL else [args.beta]
        conditions = derive_conditions(train, args.max_bins)
        pool = build_rule_pool(
            method,
            conditions,
            args.n_rules,
            args.max_len,
            betas or list(DEFAULT_BETAS),
            args.beam_width,
            seed=derive_seed(args.seed, "stage1"),
            threads=args.threads,
        )
        meta = DatasetMeta(
            path=str(Path(args.data).resolve()),
            label_column=args.label,
            delimiter=args.delimiter,
            positive_label=dataset.positive_label,
            split_seed=split_seed,
            fractions=tuple(args.fractions),
        )
        write_model(pool_to_file(pool, meta, method.value), args.output)

        stats = pool_statistics(pool)
        table = Table(title=f"Stage-1 pool ({method.value}) -> {args.output}")
        table.add_column("statistic")
        table.add_column("value", justify="right")
        for key, value in stats.items():
            table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))
        self.console.print(table)
        return 0

    def _print_front(self, front: ParetoFront, title: str) -> None:
        table = Table(title=title)
        for column in ("#", "precision", "recall", "rules"):
            table.add_column(column, justify="right")
        for index, solution in enumerate(front.entries):
            table.add_row(str(index), f"{solution.precision:.4f}", f"{solution.recall:.4f}", str(len(solution.members)))
        self.console.print(table)

    def cmd_pors_run(self, args: argparse.Namespace) -> int:
        loaded = load_pool(args.pool)
        cfg = PorsConfig(
            k=args.k,
            max_rounds=args.max_rounds,
            ssf=SsfName.parse(args.ssf),
            seed=args.seed,
            hvc_reference=args.hvc_reference,
            threads=args.threads,
        )
        trace = run_pors(loaded.pool, cfg, loaded.validation)
        chosen = trace.final if args.final else trace.best_snapshot()
        if args.trace:
            write_model(trace_to_file(trace), args.trace)
        if args.front:
            write_model(front_to_file(chosen.front, "train", f"pors:{cfg.ssf.value}"), args.front)

        self._print_front(
            chosen.front,
            f"PORS {cfg.ssf.value} k={cfg.k}: round {chosen.iteration}, train HV {chosen.train_hv:.4f}"
            + (f", validation HV {chosen.validation_hv:.4f}" if chosen.validation_hv is not None else ""),
        )
        return 0

    def cmd_nsga2(self, args: argparse.Namespace) -> int:
        loaded = load_pool(args.pool)
        cfg = NsgaConfig(
            population=args.population,
            generations=args.generations,
            mutation_rate=args.mutation_rate,
            crossover_rate=args.crossover_rate,
            seed=args.seed,
            history_every=args.history_every,
        )
        result = NsgaRunner(loaded.pool, cfg, loaded.validation).run()
        if args.front:
            write_model(front_to_file(result.archive, "train", "nsga2"), args.front)
        if args.history:
            history = HistoryFile(
                evaluations=result.evaluations,
                history=[
                    HistoryRecord(
                        generation=h.generation, seconds=h.seconds, train_hv=h.train_hv, validation_hv=h.validation_hv
                    )
                    for h in result.history
                ],
            )
            write_model(history, args.history)
        self._print_front(result.archive, f"NSGA-II archive: train HV {result.archive.hypervolume:.4f}")
        return 0

    def cmd_greedy(self, args: argparse.Namespace) -> int:
        loaded = load_pool(args.pool)
        result = greedy_fbeta(loaded.pool, args.beta, args.beam, loaded.validation)
        subset = result.subset
        if args.output:
            document = SubsetFile(
                method=f"greedy:beta={args.beta:g}",
                rule_ids=list(subset.members),
                rules=[loaded.pool.get(m).render() for m in subset.members],
                train=subset_record(subset),
                score=result.train_fbeta,
                validation_score=result.validation_fbeta,
            )
            write_model(document, args.output)

        table = Table(title=f"Greedy F-beta (beta={args.beta:g}, beam={args.beam})")
        table.add_column("rule")
        table.add_column("text")
        for member in subset.members:
            table.add_row(str(member), loaded.pool.get(member).render())
        self.console.print(table)
        validation = f"{result.validation_fbeta:.4f}" if result.validation_fbeta is not None else "n/a"
        self.console.print(
            f"train F-beta {result.train_fbeta:.4f}, validation F-beta {validation}, "
            f"precision {subset.objective.precision:.4f}, recall {subset.objective.recall:.4f}"
        )
        return 0

    def cmd_select(self, args: argparse.Namespace) -> int:
        front = front_from_file(read_model(FrontFile, args.front))
        chosen = front_select(front.entries, min_precision=args.min_precision, beta=args.beta)
        record = entry_record(chosen).model_dump() if chosen is not None else None
        self.console.print_json(json.dumps(record))
        return 0

    def cmd_experiment_run(self, args: argparse.Namespace) -> int:
        plan = ExperimentPlan.from_file(args.plan)
        if args.trials:
            plan.trials = args.trials
        table = run_experiment(plan, threads=args.threads)

        if args.output_dir:
            output = Path(args.output_dir)
            export_results(table, "csv", output / "results.csv")
            export_results(table, "json", output / "results.json")
            export_records(table, output / "trials.json")
            for (trial, method, k), trace in sorted(table.traces.items(), key=lambda item: (item[0][0], item[0][1], item[0][2] or 0)):
                name = f"trace_trial{trial}_{method.replace(':', '_')}_k{k}.json"
                write_model(trace_to_file(trace), output / "traces" / name)

        rich_table = Table(title=f"{plan.name}: {plan.trials} trial(s)")
        for column in ("method", "k", "test HV", "std", "seconds"):
            rich_table.add_column(column, justify="right" if column != "method" else "left")
        for cell in table.cells:
            std = f"{cell.test_hv_std:.4f}" + (" (1 trial)" if cell.single_trial else "")
            rich_table.add_row(
                cell.method, "" if cell.k is None else str(cell.k), f"{cell.test_hv_mean:.4f}", std, f"{cell.seconds_mean:.1f}"
            )
        self.console.print(rich_table)
        return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for CLI."""
    return RuleMinerCLI().run(argv)
