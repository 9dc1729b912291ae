"""Experiment outputs: deterministic CSV tables and a plain-text summary report."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import pandas as pd

from effort_lab.exceptions import DatasetParseError, ExperimentError
from effort_lab.harness import (
    METRIC_COLUMNS,
    METRIC_ORIENTATION,
    ExperimentResult,
    WinTally,
    combined_tally,
    config_histogram,
    feature_usage,
    rank_and_tally,
    rank_frame,
    tally,
    threshold_summary,
)
from effort_lab.stats import Orientation, RankConfig, RankResult
from effort_lab.tuners import CONFIG_FIELDS

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
RANK_COLUMNS = ["dataset", "metric", "treatment", "rank", "median", "best"]


def _write(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise DatasetParseError(f"metrics file not found: {path}", context={"path": str(path)}) from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetParseError(f"unreadable metrics file {path.name}: {exc}", context={"path": str(path)}) from exc
    missing = [c for c in METRIC_COLUMNS[:-1] if c not in frame.columns]
    if missing:
        raise DatasetParseError(
            f"{path.name}: missing column '{missing[0]}'", context={"path": str(path), "column": missing[0]}
        )
    return frame


def rank_table(ranks: Dict[str, RankResult], metric: str) -> pd.DataFrame:
    rows = []
    for dataset, result in ranks.items():
        for name in result.order:
            rank = result.ranks[name]
            rows.append((dataset, metric, name, rank, result.medians[name], "*" if rank == 1 else ""))
    return pd.DataFrame(rows, columns=RANK_COLUMNS)


def _grid(
    title: str,
    datasets: Sequence[str],
    treatments: Sequence[str],
    cells: Dict[tuple, str],
) -> List[str]:
    header = ["dataset"] + list(treatments)
    body = [[d] + [cells.get((d, t), "N/A") for t in treatments] for d in datasets]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = [title]
    for row in [header] + body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return lines


def format_rank_section(
    ranks: Dict[str, RankResult],
    metric: str,
    datasets: Sequence[str],
    treatments: Sequence[str],
) -> List[str]:
    orientation = METRIC_ORIENTATION[metric]
    better = "lower" if orientation == Orientation.LOWER_BETTER else "higher"
    cells = {}
    for dataset, result in ranks.items():
        for name, median in result.medians.items():
            marker = "*" if result.ranks[name] == 1 else ""
            cells[(dataset, name)] = f"{median:.2f}{marker}"
    return _grid(f"{metric.upper()} median per dataset ({better} is better, * = rank 1)", datasets, treatments, cells)


def format_tally(wins: WinTally, title: str) -> List[str]:
    lines = [title]
    width = max((len(name) for name in wins.counts), default=9)
    for name, count in wins.counts.items():
        percent = 100.0 * count / wins.denominator if wins.denominator else 0.0
        lines.append(f"{name.ljust(width)}  {count:>3}/{wins.denominator:<3} {percent:5.1f}%")
    return lines


def format_fallbacks(metrics: pd.DataFrame) -> List[str]:
    """Per dataset x treatment, how many folds predicted the training mean instead."""
    lines = ["Folds that fell back to the training mean"]
    if "fallback" not in metrics.columns:
        return lines + ["  not recorded"]
    folds = metrics.drop_duplicates(["dataset", "treatment", "repeat", "fold"])
    counts = folds.groupby(["dataset", "treatment"], sort=False).fallback.agg(["sum", "size"])
    hit = counts[counts["sum"] > 0]
    if hit.empty:
        return lines + ["  none"]
    for (dataset, treatment), row in hit.iterrows():
        lines.append(f"  {dataset} {treatment}: {int(row['sum'])}/{int(row['size'])}")
    return lines


def format_report(
    result: ExperimentResult,
    rank_config: RankConfig = RankConfig(),
    metrics: Sequence[str] = ("mre", "sa"),
    unit: str = "fold",
) -> str:
    lines: List[str] = ["effort_lab experiment report", ""]
    for metric in metrics:
        ranks, wins = rank_and_tally(result, metric, rank_config, unit)
        lines += format_rank_section(ranks, metric, result.datasets, result.treatments)
        lines.append("")
        lines += format_tally(wins, f"Rank-1 frequency ({metric.upper()})")
        lines.append("")
    if len(metrics) > 1:
        lines += format_tally(combined_tally(result, metrics, rank_config, unit), "Rank-1 frequency (all metrics)")
        lines.append("")
    if "mre" in metrics:
        summary = threshold_summary(result)
        lines.append(f"Datasets with pooled median MRE <= {summary.threshold.iloc[0]:.2f}")
        for row in summary.itertuples(index=False):
            lines.append(f"  {row.treatment}: {row.within}/{row.datasets}")
        lines.append("")
    lines += format_fallbacks(result.metrics)
    lines.append("")
    return "\n".join(lines)


def write_outputs(
    result: ExperimentResult,
    out_dir: Union[str, Path],
    rank_config: RankConfig = RankConfig(),
    metrics: Sequence[str] = ("mre", "sa"),
    unit: str = "fold",
) -> Dict[str, Path]:
    """Write every result table under `out_dir`; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {
        "metrics": _write(result.metrics, out / "metrics.csv"),
        "predictions": _write(result.predictions, out / "predictions.csv"),
    }

    rank_frames, tally_frames = [], []
    for metric in metrics:
        ranks, wins = rank_and_tally(result, metric, rank_config, unit)
        rank_frames.append(rank_table(ranks, metric))
        frame = wins.to_frame()
        frame.insert(0, "metric", metric)
        tally_frames.append(frame)
    if len(metrics) > 1:
        frame = combined_tally(result, metrics, rank_config, unit).to_frame()
        frame.insert(0, "metric", "all")
        tally_frames.append(frame)
    written["ranks"] = _write(pd.concat(rank_frames, ignore_index=True), out / "ranks.csv")
    written["tallies"] = _write(pd.concat(tally_frames, ignore_index=True), out / "tallies.csv")
    if "mre" in metrics:
        written["threshold"] = _write(threshold_summary(result), out / "threshold.csv")

    if result.tuned:
        written["histogram"] = _write(config_histogram(result), out / "histogram.csv")
        usage = []
        for treatment in dict.fromkeys(run.treatment for run in result.tuned):
            frame = feature_usage(result, treatment, collapse_lags=True).to_frame()
            frame.insert(0, "treatment", treatment)
            usage.append(frame)
        written["feature_usage"] = _write(pd.concat(usage, ignore_index=True), out / "feature_usage.csv")
        configs = pd.DataFrame(
            [
                (r.dataset, r.group, r.treatment, r.repeat, r.fold, *(getattr(r.config, f) for f in CONFIG_FIELDS), r.score)
                for r in result.tuned
            ],
            columns=["dataset", "group", "treatment", "repeat", "fold", *CONFIG_FIELDS, "score"],
        )
        written["tuned_configs"] = _write(configs, out / "tuned_configs.csv")
        trees = []
        for r in result.tuned:
            trees.append(f"# {r.dataset} {r.treatment} repeat={r.repeat} fold={r.fold}")
            trees.append(r.tree.to_text())
            trees.append("")
        (out / "trees.txt").write_text("\n".join(trees), encoding="utf-8")
        written["trees"] = out / "trees.txt"

    (out / "report.txt").write_text(format_report(result, rank_config, metrics, unit), encoding="utf-8")
    written["report"] = out / "report.txt"
    logger.info(f"📝 Wrote {len(written)} outputs to {out}")
    return written


def report_from_directory(result_dir: Union[str, Path], rank_config: RankConfig = RankConfig()) -> str:
    """Text report rebuilt from a results directory's metrics table."""
    metrics = read_metrics(Path(result_dir) / "metrics.csv")
    if metrics.empty:
        raise ExperimentError(f"no metric rows in {result_dir}")
    datasets = list(dict.fromkeys(metrics.dataset))
    treatments = list(dict.fromkeys(metrics.treatment))
    lines: List[str] = [f"effort_lab report for {result_dir}", ""]
    for metric in dict.fromkeys(metrics.metric):
        ranks = rank_frame(metrics, metric, rank_config, treatments)
        lines += format_rank_section(ranks, metric, datasets, treatments)
        lines.append("")
        lines += format_tally(tally(ranks.values(), treatments), f"Rank-1 frequency ({metric.upper()})")
        lines.append("")
    lines += format_fallbacks(metrics)
    lines.append("")
    return "\n".join(lines)
