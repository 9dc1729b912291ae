"""
Experiment orchestration.

Every treatment on a dataset sees the same splits: an M x N plan for project
tables, the last-month chronological split (repeated R times) for repository
activity. Tuned treatments tune on a validation slice of the training fold,
then refit on the whole fold. Test rows sit behind an `AccessSentinel` that
stays sealed until the final prediction.
"""
from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from effort_lab.cocomo import CocomoEstimator, RatingTable
from effort_lab.datasets import (
    AccessSentinel,
    Dataset,
    Provenance,
    mxn_folds,
    time_series_split,
    validation_split,
)
from effort_lab.exceptions import EffortLabError, ExperimentError, InadmissibleTreatmentError, IsolationError
from effort_lab.learners import (
    AtlmEstimator,
    CartConfig,
    CartEstimator,
    CartTree,
    Estimator,
    KnnEstimator,
    RandomForestEstimator,
)
from effort_lab.lp_solver import Lp4eeEstimator
from effort_lab.metrics import aggregate, rguess_mae
from effort_lab.stats import Orientation, RankConfig, RankResult, TreatmentScores, scott_knott
from effort_lab.tuners import DeParams, TuneObjective, de_tune, flash_tune
from effort_lab.utils.error_handler import error_handler

logger = logging.getLogger(__name__)

TREATMENT_NAMES = ("KNN", "CART", "RF", "ATLM", "LP4EE", "COCOMO-II", "CART_DE", "ROME")
TUNED_TREATMENTS = ("CART_DE", "ROME")
METRIC_ORIENTATION = {"mre": Orientation.LOWER_BETTER, "sa": Orientation.HIGHER_BETTER}
METRIC_COLUMNS = ["dataset", "treatment", "repeat", "fold", "metric", "value", "fallback"]
PREDICTION_COLUMNS = ["dataset", "treatment", "repeat", "fold", "row", "actual", "predicted"]
CONTEMPORARY_GROUP = "contemporary"
MRE_THRESHOLD = 0.40

HISTOGRAM_BINS: Dict[str, Tuple[float, ...]] = {
    "max_features_fraction": (0.25, 0.5, 0.75, 1.0),
    "max_depth": (3, 6, 9, 12),
    "min_sample_split": (5, 10, 15, 20),
    "min_samples_leaf": (3, 6, 9, 12),
}

_LAG_SUFFIX = re.compile(r"@t-\d+$")


def derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class Treatment(BaseModel):
    """A named estimation pipeline and its settings."""

    model_config = ConfigDict(frozen=True)

    name: Literal["KNN", "CART", "RF", "ATLM", "LP4EE", "COCOMO-II", "CART_DE", "ROME"]
    knn_k: int = Field(default=5, ge=1)
    rf_trees: int = Field(default=100, ge=1)
    budget: int = Field(default=200, ge=2)
    init: int = Field(default=20, ge=1)
    pool: int = Field(default=10_000, ge=3)
    de: DeParams = DeParams()
    tune_metric: Literal["mre", "sa"] = "mre"
    validation_fraction: float = Field(default=0.2, gt=0, lt=1)

    @property
    def tuned(self) -> bool:
        return self.name in TUNED_TREATMENTS

    def admissible(self, provenance: Provenance) -> bool:
        return self.name != "COCOMO-II" or provenance == Provenance.COCOMO

    def build(self, seed: int, tables: Optional[RatingTable] = None, config: Optional[CartConfig] = None) -> Estimator:
        if self.name == "KNN":
            return KnnEstimator(self.knn_k)
        if self.name == "RF":
            return RandomForestEstimator(self.rf_trees, seed)
        if self.name == "ATLM":
            return AtlmEstimator()
        if self.name == "LP4EE":
            return Lp4eeEstimator()
        if self.name == "COCOMO-II":
            return CocomoEstimator(tables)
        return CartEstimator(config, seed)


@dataclass(frozen=True)
class PlanParams:
    m: int = 20
    n: int = 3
    contemporary_repeats: int = 20


@dataclass(frozen=True)
class ExperimentDataset:
    data: Dataset
    group: Optional[str] = None

    @property
    def name(self) -> str:
        return self.data.name

    @property
    def group_name(self) -> str:
        if self.group:
            return self.group
        return CONTEMPORARY_GROUP if self.data.provenance == Provenance.CONTEMPORARY else self.data.name


@dataclass(frozen=True)
class TunedRun:
    dataset: str
    group: str
    treatment: str
    repeat: int
    fold: int
    config: CartConfig
    score: float
    tree: CartTree


class _Task(NamedTuple):
    dataset: int
    repeat: int
    fold: int
    treatment: int
    train: np.ndarray
    test: np.ndarray


@dataclass
class _FoldOutcome:
    predictions: np.ndarray
    actuals: np.ndarray
    train_targets: np.ndarray
    fallback: bool
    tuned: Optional[TunedRun] = None


@dataclass
class ExperimentResult:
    metrics: pd.DataFrame
    predictions: pd.DataFrame
    tuned: List[TunedRun]
    plan_digests: Dict[str, str]
    groups: Dict[str, str]
    datasets: Tuple[str, ...]
    treatments: Tuple[str, ...]
    inadmissible: Set[Tuple[str, str]] = field(default_factory=set)

    def scores(self, dataset: str, treatment: str, metric: str, unit: str = "fold") -> np.ndarray:
        if unit == "prediction" and metric == "mre":
            frame = self.predictions
            rows = frame[(frame.dataset == dataset) & (frame.treatment == treatment) & (frame.actual > 0)]
            return (np.abs(rows.actual - rows.predicted) / rows.actual).to_numpy()
        frame = self.metrics
        rows = frame[(frame.dataset == dataset) & (frame.treatment == treatment) & (frame.metric == metric)]
        values = rows.value.to_numpy(dtype=float)
        return values[np.isfinite(values)]

    def pooled_median_mre(self, dataset: str, treatment: str) -> float:
        values = self.scores(dataset, treatment, "mre", unit="prediction")
        return aggregate(values) if values.size else float("nan")


# --- execution ------------------------------------------------------------------

def _fit_and_predict(
    task: _Task,
    entry: ExperimentDataset,
    treatment: Treatment,
    seed: int,
    tables: Optional[RatingTable],
) -> _FoldOutcome:
    data = entry.data
    train = data.subset(task.train)
    sentinel = AccessSentinel(data.subset(task.test))
    sentinel.seal()
    tseed = derive_seed(seed, treatment.name)
    tuned: Optional[TunedRun] = None
    fallback = False
    estimator: Optional[Estimator] = None

    try:
        if treatment.tuned:
            inner, validation = validation_split(train, treatment.validation_fraction, seed=tseed)
            objective = TuneObjective(inner, validation, treatment.tune_metric, seed=tseed)
            if treatment.name == "ROME":
                result = flash_tune(objective, treatment.budget, treatment.init, treatment.pool, seed=tseed)
            else:
                result = de_tune(objective, treatment.de, seed=tseed)
            estimator = treatment.build(tseed, config=result.config).fit(train)
            tuned = TunedRun(
                dataset=data.name,
                group=entry.group_name,
                treatment=treatment.name,
                repeat=task.repeat,
                fold=task.fold,
                config=result.config,
                score=result.score,
                tree=estimator.tree,
            )
        else:
            estimator = treatment.build(tseed, tables).fit(train)
    except IsolationError:
        raise
    except (EffortLabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        error_handler.handle_fold_error(exc, data.name, treatment.name, task.repeat, task.fold)
        estimator = None

    if sentinel.reads:
        raise IsolationError(
            f"test rows of {data.name} were read before prediction",
            context={"dataset": data.name, "treatment": treatment.name},
        )
    sentinel.unseal()
    features, actuals = sentinel.features, sentinel.targets

    predictions = None
    if estimator is not None:
        try:
            predictions = estimator.predict(features)
            if not np.all(np.isfinite(predictions)):
                raise ArithmeticError(f"{treatment.name} produced non-finite predictions")
        except (EffortLabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            error_handler.handle_fold_error(exc, data.name, treatment.name, task.repeat, task.fold)
            predictions = None
    if predictions is None:
        fallback = True
        predictions = np.full(actuals.shape, float(train.targets.mean()))

    logger.debug("%s/%s r%d f%d done%s", data.name, treatment.name, task.repeat, task.fold,
                 " (fallback)" if fallback else "")
    return _FoldOutcome(
        predictions=np.asarray(predictions, dtype=float),
        actuals=np.asarray(actuals, dtype=float),
        train_targets=train.targets,
        fallback=fallback,
        tuned=tuned,
    )


def _fold_metrics(outcome: _FoldOutcome) -> Dict[str, float]:
    actuals, predictions = outcome.actuals, outcome.predictions
    positive = actuals > 0
    if positive.any():
        fold_mre = aggregate(np.abs(actuals[positive] - predictions[positive]) / actuals[positive])
    else:
        fold_mre = float("nan")
    baseline = rguess_mae(actuals, outcome.train_targets)
    fold_sa = 1.0 - float(np.abs(actuals - predictions).mean()) / baseline if baseline > 0 else float("nan")
    return {"mre": fold_mre, "sa": fold_sa}


def _splits(entry: ExperimentDataset, plan: PlanParams, seed: int) -> Tuple[List[Tuple[int, int, np.ndarray, np.ndarray]], str]:
    data = entry.data
    if data.provenance == Provenance.CONTEMPORARY:
        train, test = time_series_split(data)
        train_idx = np.arange(train.n_rows)
        test_idx = np.arange(train.n_rows, data.n_rows)
        splits = [(r, 0, train_idx, test_idx) for r in range(plan.contemporary_repeats)]
        digest = hashlib.sha256(f"chronological:{data.n_rows}:{plan.contemporary_repeats}".encode()).hexdigest()
        return splits, digest
    split_plan = mxn_folds(data, plan.m, plan.n, derive_seed(seed, data.name))
    return [(f.repeat, f.fold, f.train, f.test) for f in split_plan.folds()], split_plan.digest()


def run_experiment(
    datasets: Sequence[ExperimentDataset],
    treatments: Sequence[Treatment],
    plan: PlanParams = PlanParams(),
    seed: int = 0,
    *,
    jobs: int = 1,
    skip_inadmissible: bool = False,
    metrics: Sequence[str] = ("mre", "sa"),
) -> ExperimentResult:
    """Run every admissible (dataset, treatment) pair over the shared splits."""
    if not datasets or not treatments:
        raise ExperimentError("an experiment needs at least one dataset and one treatment")
    names = [t.name for t in treatments]
    if len(set(names)) != len(names):
        raise ExperimentError(f"duplicate treatments: {names}")
    unknown = [m for m in metrics if m not in METRIC_ORIENTATION]
    if unknown:
        raise ExperimentError(f"unknown metrics: {unknown}")

    inadmissible: Set[Tuple[str, str]] = set()
    for entry in datasets:
        for treatment in treatments:
            if not treatment.admissible(entry.data.provenance):
                if not skip_inadmissible:
                    raise InadmissibleTreatmentError(
                        f"{treatment.name} cannot run on {entry.name}: "
                        f"{entry.data.provenance.value} data lacks the COCOMO attributes",
                        context={"dataset": entry.name, "treatment": treatment.name},
                    )
                inadmissible.add((entry.name, treatment.name))

    tables = RatingTable.load() if any(t.name == "COCOMO-II" for t in treatments) else None
    tasks: List[_Task] = []
    digests: Dict[str, str] = {}
    for d, entry in enumerate(datasets):
        splits, digests[entry.name] = _splits(entry, plan, seed)
        for repeat, fold, train_idx, test_idx in splits:
            for t, treatment in enumerate(treatments):
                if (entry.name, treatment.name) not in inadmissible:
                    tasks.append(_Task(d, repeat, fold, t, train_idx, test_idx))
        error_handler.log_info(
            f"📊 {entry.name}: {len(splits)} splits x {len(treatments)} treatments",
            provenance=entry.data.provenance.value,
            plan=digests[entry.name][:12],
        )

    def execute(task: _Task) -> _FoldOutcome:
        entry = datasets[task.dataset]
        fold_seed = derive_seed(seed, entry.name, task.repeat, task.fold)
        return _fit_and_predict(task, entry, treatments[task.treatment], fold_seed, tables)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(execute, tasks))
    else:
        outcomes = [execute(task) for task in tasks]

    metric_rows: List[tuple] = []
    prediction_rows: List[tuple] = []
    tuned_runs: List[TunedRun] = []
    for task, outcome in zip(tasks, outcomes):
        dataset = datasets[task.dataset].name
        treatment = treatments[task.treatment].name
        values = _fold_metrics(outcome)
        for metric in metrics:
            metric_rows.append((dataset, treatment, task.repeat, task.fold, metric, values[metric], int(outcome.fallback)))
        for row, actual, predicted in zip(task.test, outcome.actuals, outcome.predictions):
            prediction_rows.append((dataset, treatment, task.repeat, task.fold, int(row), float(actual), float(predicted)))
        if outcome.tuned is not None:
            tuned_runs.append(outcome.tuned)

    result = ExperimentResult(
        metrics=pd.DataFrame(metric_rows, columns=METRIC_COLUMNS),
        predictions=pd.DataFrame(prediction_rows, columns=PREDICTION_COLUMNS),
        tuned=tuned_runs,
        plan_digests=digests,
        groups={entry.name: entry.group_name for entry in datasets},
        datasets=tuple(entry.name for entry in datasets),
        treatments=tuple(names),
        inadmissible=inadmissible,
    )
    fallbacks = int(result.metrics.drop_duplicates(["dataset", "treatment", "repeat", "fold"]).fallback.sum())
    error_handler.log_info("✅ Experiment finished", folds=len(tasks), fallbacks=fallbacks)
    return result


# --- analysis -------------------------------------------------------------------

@dataclass(frozen=True)
class WinTally:
    counts: Dict[str, int]
    denominator: int

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (name, count, self.denominator, 100.0 * count / self.denominator if self.denominator else 0.0)
            for name, count in self.counts.items()
        ]
        return pd.DataFrame(rows, columns=["treatment", "wins", "cells", "percent"])


def rank_frame(
    metrics: pd.DataFrame,
    metric: str,
    config: RankConfig = RankConfig(),
    treatments: Optional[Sequence[str]] = None,
) -> Dict[str, RankResult]:
    """Scott-Knott per dataset over the per-fold values of `metric` in a metrics table."""
    if metric not in METRIC_ORIENTATION:
        raise ExperimentError(f"unknown metric '{metric}'", context={"metric": metric})
    frame = metrics[metrics.metric == metric]
    if frame.empty:
        raise ExperimentError(f"no '{metric}' rows to rank", context={"metric": metric})
    order = list(treatments) if treatments else list(dict.fromkeys(frame.treatment))
    ranks: Dict[str, RankResult] = {}
    for dataset in dict.fromkeys(frame.dataset):
        subset = frame[frame.dataset == dataset]
        groups = []
        for name in order:
            values = subset[subset.treatment == name].value.to_numpy(dtype=float)
            values = values[np.isfinite(values)]
            if values.size:
                groups.append(TreatmentScores(name, tuple(values), METRIC_ORIENTATION[metric]))
        if groups:
            ranks[dataset] = scott_knott(groups, config)
    return ranks


def tally(ranks: Iterable[RankResult], treatments: Sequence[str]) -> WinTally:
    counts = {name: 0 for name in treatments}
    denominator = 0
    for result in ranks:
        denominator += 1
        for name in result.best():
            counts[name] = counts.get(name, 0) + 1
    return WinTally(counts=counts, denominator=denominator)


def rank_and_tally(
    result: ExperimentResult,
    metric: str,
    config: RankConfig = RankConfig(),
    unit: str = "fold",
) -> Tuple[Dict[str, RankResult], WinTally]:
    if result.metrics.empty:
        raise ExperimentError("empty experiment result")
    if unit == "prediction" and metric == "mre":
        ranks = {}
        for dataset in result.datasets:
            groups = []
            for name in result.treatments:
                values = result.scores(dataset, name, metric, unit)
                if values.size:
                    groups.append(TreatmentScores(name, tuple(values), METRIC_ORIENTATION[metric]))
            if groups:
                ranks[dataset] = scott_knott(groups, config)
    else:
        ranks = rank_frame(result.metrics, metric, config, result.treatments)
    return ranks, tally(ranks.values(), result.treatments)


def combined_tally(
    result: ExperimentResult,
    metrics: Sequence[str] = ("mre", "sa"),
    config: RankConfig = RankConfig(),
    unit: str = "fold",
) -> WinTally:
    """Rank-1 counts over every dataset x metric cell."""
    cells: List[RankResult] = []
    for metric in metrics:
        ranks, _ = rank_and_tally(result, metric, config, unit)
        cells.extend(ranks.values())
    return tally(cells, result.treatments)


def _bin_label(value: float, edges: Tuple[float, ...]) -> str:
    for edge in edges:
        if value <= edge + 1e-12:
            return f"<={edge:g}"
    return f">{edges[-1]:g}"


def _config_value(config: CartConfig, dimension: str) -> float:
    value = getattr(config, dimension)
    # unbounded depth falls in the deepest bin
    return float(HISTOGRAM_BINS[dimension][-1] if value is None else value)


def config_histogram(result: ExperimentResult) -> pd.DataFrame:
    """Percent of tuned runs per configuration bin, by dataset group and tuner."""
    if not result.tuned:
        raise ExperimentError("no tuned runs in this experiment")
    runs: Dict[Tuple[str, str], List[TunedRun]] = {}
    for run in result.tuned:
        runs.setdefault((run.group, run.treatment), []).append(run)

    rows = []
    for (group, treatment), members in runs.items():
        for dimension, edges in HISTOGRAM_BINS.items():
            labels = [_bin_label(_config_value(r.config, dimension), edges) for r in members]
            for edge in edges:
                label = _bin_label(float(edge), edges)
                hits = labels.count(label)
                rows.append((group, treatment, dimension, label, hits, 100.0 * hits / len(members)))
    return pd.DataFrame(rows, columns=["group", "treatment", "dimension", "bin", "runs", "percent"])


def collapse_lag(name: str) -> str:
    return _LAG_SUFFIX.sub("", name)


@dataclass(frozen=True)
class FeatureUsage:
    counts: Dict[str, int]
    trees: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(name, count, self.trees) for name, count in self.counts.items()],
            columns=["feature", "trees_using", "trees"],
        )


def feature_usage(
    result: ExperimentResult,
    treatment: Optional[str] = "ROME",
    *,
    collapse_lags: bool = False,
    datasets: Optional[Sequence[str]] = None,
) -> FeatureUsage:
    """Number of final tuned trees in which each feature tests at least one node."""
    runs = [
        r for r in result.tuned
        if (treatment is None or r.treatment == treatment) and (datasets is None or r.dataset in datasets)
    ]
    counts: Dict[str, int] = {}
    for run in runs:
        used = run.tree.features_used()
        if collapse_lags:
            used = {collapse_lag(name) for name in used}
        for name in used:
            counts[name] = counts.get(name, 0) + 1
    ordered = dict(sorted(counts.items(), key=lambda item: (-item[1], item[0])))
    return FeatureUsage(counts=ordered, trees=len(runs))


def threshold_summary(
    result: ExperimentResult,
    threshold: float = MRE_THRESHOLD,
    treatments: Optional[Sequence[str]] = None,
) -> pd.DataFrame:
    """Per treatment, how many datasets have a pooled median MRE at or below `threshold`."""
    rows = []
    for name in treatments or result.treatments:
        medians = [
            result.pooled_median_mre(dataset, name)
            for dataset in result.datasets
            if (dataset, name) not in result.inadmissible
        ]
        finite = [m for m in medians if np.isfinite(m)]
        rows.append((name, sum(m <= threshold for m in finite), len(finite), threshold))
    return pd.DataFrame(rows, columns=["treatment", "within", "datasets", "threshold"])
