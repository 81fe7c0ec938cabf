"""
Efficiency report: HV-over-time of PORS against NSGA-II on one rule pool.

Both methods run on the same pool; the report gives the wall-clock time each
needs to get within a tolerance (1% by default) of PORS's final training HV.
"""
import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from app.core.exceptions import RuleMinerError
from app.services.baselines import NsgaConfig, NsgaRunner
from app.services.pors import PorsConfig, run_pors
from app.services.serialization import load_pool
from app.services.ssf import SsfName
from app.telemetry.logging import setup_logging


def time_to_reach(series: Sequence[Tuple[float, float]], target: float) -> Optional[float]:
    """First elapsed time at which the HV series reaches `target`, or None."""
    for seconds, hv in series:
        if hv >= target:
            return seconds
    return None


class EfficiencyReportGenerator:
    """Builds a markdown report from two HV-over-time series."""

    def __init__(self, data: Dict[str, Any]):
        self.data = data
        self.report_time = datetime.now(timezone.utc)

    def generate_markdown_report(self) -> str:
        data = self.data
        lines = [
            f"# Efficiency report ({self.report_time:%Y-%m-%d %H:%M} UTC)",
            "",
            f"Pool: `{data['pool']}` ({data['rules']} rules)",
            f"Target: {data['target']:.4f} training HV ({data['tolerance'] * 100:g}% below PORS final {data['pors_final_hv']:.4f})",
            "",
            "| method | final train HV | time to target (s) | total time (s) |",
            "|---|---:|---:|---:|",
        ]
        for method in ("pors", "nsga2"):
            entry = data[method]
            reached = entry["time_to_target"]
            lines.append(
                f"| {entry['label']} | {entry['final_hv']:.4f} | "
                f"{'not reached' if reached is None else f'{reached:.2f}'} | {entry['total_seconds']:.2f} |"
            )
        lines.append("")
        pors_time, nsga_time = data["pors"]["time_to_target"], data["nsga2"]["time_to_target"]
        if pors_time is not None and (nsga_time is None or pors_time < nsga_time):
            lines.append("PORS reached the target first.")
        elif nsga_time is not None:
            lines.append("NSGA-II reached the target first.")
        return "\n".join(lines) + "\n"


def build_report(
    pool_path: str,
    ssf: str,
    k: int,
    max_rounds: int,
    generations: int,
    seed: int,
    tolerance: float,
) -> Dict[str, Any]:
    loaded = load_pool(pool_path)
    trace = run_pors(loaded.pool, PorsConfig(k=k, max_rounds=max_rounds, ssf=SsfName.parse(ssf), seed=seed))
    pors_series: List[Tuple[float, float]] = [(s.seconds, s.train_hv) for s in trace.snapshots]
    pors_final = trace.final.train_hv
    target = (1.0 - tolerance) * pors_final

    nsga = NsgaRunner(loaded.pool, NsgaConfig(generations=generations, seed=seed, history_every=1)).run()
    nsga_series = [(h.seconds, h.train_hv) for h in nsga.history]

    return {
        "pool": pool_path,
        "rules": len(loaded.pool),
        "tolerance": tolerance,
        "target": target,
        "pors_final_hv": pors_final,
        "pors": {
            "label": f"PORS {ssf} k={k}",
            "final_hv": pors_final,
            "time_to_target": time_to_reach(pors_series, target),
            "total_seconds": trace.final.seconds,
            "series": pors_series,
        },
        "nsga2": {
            "label": f"NSGA-II {generations} generations",
            "final_hv": nsga.archive.hypervolume,
            "time_to_target": time_to_reach(nsga_series, target),
            "total_seconds": nsga_series[-1][0] if nsga_series else 0.0,
            "series": nsga_series,
        },
    }


def main():
    """Main entry point for the efficiency report."""
    parser = argparse.ArgumentParser(description="Compare PORS and NSGA-II HV over wall-clock time")
    parser.add_argument("pool", help="Pool file from `pors-rules stage1`")
    parser.add_argument("--ssf", default="hvc-ss")
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--max-rounds", type=int, default=30)
    parser.add_argument("--generations", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tolerance", type=float, default=0.01)
    parser.add_argument("-o", "--output", help="Markdown report file (default: efficiency_report.md)")
    parser.add_argument("--json", help="Also write the raw series to this JSON file")

    args = parser.parse_args()
    setup_logging()

    try:
        data = build_report(args.pool, args.ssf, args.k, args.max_rounds, args.generations, args.seed, args.tolerance)
    except RuleMinerError as e:
        sys.stderr.write(json.dumps(e.to_dict(), default=str) + "\n")
        sys.exit(1)

    output_file = Path(args.output or "efficiency_report.md")
    output_file.write_text(EfficiencyReportGenerator(data).generate_markdown_report(), encoding="utf-8")
    if args.json:
        Path(args.json).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    print(f"Efficiency report generated: {output_file}")


if __name__ == "__main__":
    main()
