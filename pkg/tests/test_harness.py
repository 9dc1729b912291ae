import numpy as np
import pandas as pd
import pytest

from effort_lab import learners
from effort_lab.datasets import load_bundled
from effort_lab.exceptions import ExperimentError, InadmissibleTreatmentError
from effort_lab.harness import (
    HISTOGRAM_BINS,
    METRIC_COLUMNS,
    ExperimentDataset,
    PlanParams,
    Treatment,
    collapse_lag,
    combined_tally,
    config_histogram,
    derive_seed,
    feature_usage,
    rank_and_tally,
    rank_frame,
    run_experiment,
    tally,
    threshold_summary,
)
from effort_lab.stats import RankConfig

SMALL_PLAN = PlanParams(m=2, n=3, contemporary_repeats=3)
QUICK_ROME = Treatment(name="ROME", budget=6, init=3, pool=12)


def test_derive_seed_is_stable_and_sensitive():
    assert derive_seed(1, "kemerer", 0, 2) == derive_seed(1, "kemerer", 0, 2)
    assert derive_seed(1, "kemerer", 0, 2) != derive_seed(1, "kemerer", 2, 0)
    assert 0 <= derive_seed("x") < 2 ** 63


def test_every_row_is_tested_once_per_repeat(linear_dataset):
    treatments = [Treatment(name="KNN"), Treatment(name="CART")]
    result = run_experiment([ExperimentDataset(linear_dataset)], treatments, SMALL_PLAN, seed=4)
    assert list(result.metrics.columns) == METRIC_COLUMNS
    assert len(result.metrics) == 2 * 3 * 2 * 2
    for (_, repeat), rows in result.predictions.groupby(["treatment", "repeat"]):
        assert sorted(rows.row) == list(range(30))
    assert result.datasets == ("linear",)
    assert result.treatments == ("KNN", "CART")


def test_treatments_share_splits(linear_dataset):
    treatments = [Treatment(name="KNN"), Treatment(name="ATLM"), Treatment(name="LP4EE")]
    result = run_experiment([ExperimentDataset(linear_dataset)], treatments, SMALL_PLAN, seed=9)
    by_treatment = {
        name: rows.sort_values(["repeat", "fold", "row"])[["repeat", "fold", "row", "actual"]].reset_index(drop=True)
        for name, rows in result.predictions.groupby("treatment")
    }
    pd.testing.assert_frame_equal(by_treatment["KNN"], by_treatment["ATLM"])
    pd.testing.assert_frame_equal(by_treatment["KNN"], by_treatment["LP4EE"])


def test_results_depend_only_on_seed(linear_dataset):
    treatments = [Treatment(name="RF", rf_trees=5), Treatment(name="CART")]
    first = run_experiment([ExperimentDataset(linear_dataset)], treatments, SMALL_PLAN, seed=2)
    again = run_experiment([ExperimentDataset(linear_dataset)], treatments, SMALL_PLAN, seed=2, jobs=3)
    other = run_experiment([ExperimentDataset(linear_dataset)], treatments, SMALL_PLAN, seed=3)
    pd.testing.assert_frame_equal(first.metrics, again.metrics)
    pd.testing.assert_frame_equal(first.predictions, again.predictions)
    assert first.plan_digests == again.plan_digests
    assert first.plan_digests != other.plan_digests


def test_cocomo_is_inadmissible_on_plain_tables(linear_dataset):
    treatments = [Treatment(name="KNN"), Treatment(name="COCOMO-II")]
    datasets = [ExperimentDataset(linear_dataset)]
    with pytest.raises(InadmissibleTreatmentError):
        run_experiment(datasets, treatments, SMALL_PLAN, seed=0)
    result = run_experiment(datasets, treatments, SMALL_PLAN, seed=0, skip_inadmissible=True)
    assert result.inadmissible == {("linear", "COCOMO-II")}
    assert set(result.metrics.treatment) == {"KNN"}


def test_cocomo_runs_on_cocomo_data():
    data = load_bundled("nasa10_sample")
    plan = PlanParams(m=1, n=2)
    result = run_experiment([ExperimentDataset(data)], [Treatment(name="COCOMO-II")], plan, seed=1)
    assert len(result.metrics) == 2 * 2
    assert np.all(np.isfinite(result.predictions.predicted))


def test_contemporary_data_uses_the_last_month(contemporary_dataset):
    result = run_experiment(
        [ExperimentDataset(contemporary_dataset)], [Treatment(name="KNN")], SMALL_PLAN, seed=0
    )
    assert sorted(set(result.metrics.repeat)) == [0, 1, 2]
    assert set(result.metrics.fold) == {0}
    assert set(result.predictions.row) == {23}
    assert result.groups == {"repo": "contemporary"}


def test_failed_predictions_fall_back_to_the_training_mean(linear_dataset, monkeypatch):
    def broken(self, features):
        raise ArithmeticError("boom")

    monkeypatch.setattr(learners.KnnEstimator, "predict", broken)
    result = run_experiment([ExperimentDataset(linear_dataset)], [Treatment(name="KNN")], PlanParams(m=1, n=3), seed=0)
    assert set(result.metrics.fallback) == {1}
    for fold, rows in result.predictions.groupby("fold"):
        train_rows = np.setdiff1d(np.arange(30), rows.row.to_numpy())
        assert rows.predicted.iloc[0] == pytest.approx(linear_dataset.targets[train_rows].mean())
        assert rows.predicted.nunique() == 1


def test_tuned_runs_are_recorded(step_dataset):
    result = run_experiment([ExperimentDataset(step_dataset, group="steps")], [QUICK_ROME], SMALL_PLAN, seed=5)
    assert len(result.tuned) == 2 * 3
    assert {run.group for run in result.tuned} == {"steps"}

    histogram = config_histogram(result)
    totals = histogram.groupby(["group", "treatment", "dimension"]).percent.sum()
    np.testing.assert_allclose(totals.to_numpy(), 100.0)
    assert set(histogram.dimension) == set(HISTOGRAM_BINS)

    usage = feature_usage(result, "ROME")
    assert usage.trees == 6
    assert all(0 < count <= 6 for count in usage.counts.values())
    assert set(usage.counts) <= {"size", "noise"}


def test_histogram_needs_tuned_runs(linear_dataset):
    result = run_experiment([ExperimentDataset(linear_dataset)], [Treatment(name="KNN")], PlanParams(m=1, n=2), seed=0)
    with pytest.raises(ExperimentError):
        config_histogram(result)


def test_lag_suffix_collapses():
    assert collapse_lag("commits@t-3") == "commits"
    assert collapse_lag("commits") == "commits"


def test_experiment_rejects_bad_requests(linear_dataset):
    datasets = [ExperimentDataset(linear_dataset)]
    with pytest.raises(ExperimentError):
        run_experiment(datasets, [Treatment(name="KNN"), Treatment(name="KNN")], SMALL_PLAN)
    with pytest.raises(ExperimentError):
        run_experiment(datasets, [Treatment(name="KNN")], SMALL_PLAN, metrics=["mmre"])
    with pytest.raises(ExperimentError):
        run_experiment([], [Treatment(name="KNN")], SMALL_PLAN)


def _metrics_frame():
    rng = np.random.default_rng(0)
    rows = []
    for dataset in ("d1", "d2"):
        for fold in range(10):
            rows.append((dataset, "good", 0, fold, "mre", float(rng.normal(0.1, 0.01)), 0))
            rows.append((dataset, "bad", 0, fold, "mre", float(rng.normal(0.9, 0.01)), 0))
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def test_rank_and_tally_from_a_metrics_table():
    ranks = rank_frame(_metrics_frame(), "mre", RankConfig(seed=1))
    assert set(ranks) == {"d1", "d2"}
    assert all(result.ranks == {"good": 1, "bad": 2} for result in ranks.values())
    wins = tally(ranks.values(), ["good", "bad"])
    assert wins.counts == {"good": 2, "bad": 0}
    assert wins.denominator == 2
    assert wins.to_frame().percent.tolist() == [100.0, 0.0]
    with pytest.raises(ExperimentError):
        rank_frame(_metrics_frame(), "sa")


def test_rank_and_tally_over_an_experiment(step_dataset, linear_dataset):
    result = run_experiment(
        [ExperimentDataset(linear_dataset), ExperimentDataset(step_dataset)],
        [Treatment(name="KNN"), Treatment(name="CART")],
        SMALL_PLAN,
        seed=2,
    )
    for unit in ("fold", "prediction"):
        ranks, wins = rank_and_tally(result, "mre", RankConfig(seed=1), unit)
        assert set(ranks) == set(result.datasets)
        assert wins.denominator == 2
        assert all(1 in r.ranks.values() for r in ranks.values())
        assert sum(wins.counts.values()) >= 2

    both = combined_tally(result, config=RankConfig(seed=1))
    assert both.denominator == 4
    assert set(both.counts) == {"KNN", "CART"}


def test_threshold_summary_counts_datasets(step_dataset, linear_dataset):
    result = run_experiment(
        [ExperimentDataset(linear_dataset), ExperimentDataset(step_dataset)],
        [Treatment(name="CART")],
        PlanParams(m=1, n=3),
        seed=0,
    )
    summary = threshold_summary(result, threshold=10.0)
    assert summary.to_dict("records") == [{"treatment": "CART", "within": 2, "datasets": 2, "threshold": 10.0}]
    assert threshold_summary(result, threshold=0.0).within.iloc[0] == 0
