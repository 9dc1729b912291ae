import pandas as pd
import pytest

from effort_lab import learners
from effort_lab.exceptions import DatasetParseError, ExperimentError
from effort_lab.harness import METRIC_COLUMNS, ExperimentDataset, PlanParams, Treatment, rank_frame, run_experiment
from effort_lab.reporting import (
    RANK_COLUMNS,
    format_fallbacks,
    format_report,
    read_metrics,
    rank_table,
    report_from_directory,
    write_outputs,
)
from effort_lab.stats import RankConfig

FAST_RANKING = RankConfig(resamples=200, seed=1)


@pytest.fixture
def small_result(step_dataset, linear_dataset):
    treatments = [Treatment(name="KNN"), Treatment(name="ROME", budget=6, init=3, pool=12)]
    datasets = [ExperimentDataset(step_dataset), ExperimentDataset(linear_dataset)]
    return run_experiment(datasets, treatments, PlanParams(m=2, n=3), seed=7)


def test_write_outputs_produces_every_table(small_result, tmp_path):
    written = write_outputs(small_result, tmp_path / "out", FAST_RANKING)
    expected = {"metrics", "predictions", "ranks", "tallies", "threshold", "histogram",
                "feature_usage", "tuned_configs", "trees", "report"}
    assert set(written) == expected
    assert all(path.exists() for path in written.values())

    ranks = pd.read_csv(written["ranks"])
    assert list(ranks.columns) == RANK_COLUMNS
    assert set(ranks.metric) == {"mre", "sa"}
    tallies = pd.read_csv(written["tallies"])
    assert set(tallies.metric) == {"mre", "sa", "all"}
    assert tallies[tallies.metric == "all"].cells.iloc[0] == 4
    assert len(pd.read_csv(written["tuned_configs"])) == 2 * 2 * 3
    assert "# step ROME repeat=0 fold=0" in written["trees"].read_text(encoding="utf-8")


def test_outputs_are_byte_stable(small_result, tmp_path):
    first = write_outputs(small_result, tmp_path / "a", FAST_RANKING)
    second = write_outputs(small_result, tmp_path / "b", FAST_RANKING)
    for name, path in first.items():
        assert path.read_bytes() == second[name].read_bytes(), name


def test_report_sections(small_result):
    report = format_report(small_result, FAST_RANKING)
    assert report.startswith("effort_lab experiment report")
    assert "MRE median per dataset (lower is better, * = rank 1)" in report
    assert "SA median per dataset (higher is better, * = rank 1)" in report
    assert "Rank-1 frequency (all metrics)" in report
    assert "Datasets with pooled median MRE <= 0.40" in report
    assert "*" in report


def test_inadmissible_cells_show_not_available(linear_dataset):
    result = run_experiment(
        [ExperimentDataset(linear_dataset)],
        [Treatment(name="KNN"), Treatment(name="COCOMO-II")],
        PlanParams(m=1, n=3),
        seed=0,
        skip_inadmissible=True,
    )
    report = format_report(result, FAST_RANKING, metrics=["mre"])
    linear_row = next(line for line in report.splitlines() if line.startswith("linear"))
    assert linear_row.rstrip().endswith("N/A")


def test_report_rebuilt_from_directory(small_result, tmp_path):
    write_outputs(small_result, tmp_path, FAST_RANKING)
    text = report_from_directory(tmp_path, FAST_RANKING)
    assert text.startswith(f"effort_lab report for {tmp_path}")
    assert "Rank-1 frequency (MRE)" in text
    assert "Rank-1 frequency (SA)" in text


def test_metrics_table_validation(tmp_path, write_file):
    with pytest.raises(DatasetParseError):
        read_metrics(tmp_path / "absent.csv")
    bad = write_file("metrics.csv", "dataset,treatment,repeat,fold,metric\nd,KNN,0,0,mre\n")
    with pytest.raises(DatasetParseError, match="missing column 'value'"):
        read_metrics(bad)
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / "metrics.csv").write_text("dataset,treatment,repeat,fold,metric,value,fallback\n", encoding="utf-8")
    with pytest.raises(ExperimentError):
        report_from_directory(tmp_path / "run")


def test_rank_table_marks_rank_one(small_result):
    table = rank_table(rank_frame(small_result.metrics, "mre", FAST_RANKING), "mre")
    assert set(table.dataset) == {"step", "linear"}
    assert (table[table["rank"] == 1].best == "*").all()
    assert (table[table["rank"] > 1].best == "").all()


@pytest.mark.parametrize("body", ["dataset,treatment\nd,KNN\nd,KNN,0,0,mre,0.5\n", ""])
def test_malformed_metrics_file_is_a_parse_error(write_file, body):
    path = write_file("metrics.csv", body)
    with pytest.raises(DatasetParseError, match="unreadable metrics file metrics.csv"):
        read_metrics(path)


def test_fallback_counts_are_reported(step_dataset, linear_dataset, monkeypatch):
    def broken(self, features):
        raise ArithmeticError("singular")

    monkeypatch.setattr(learners.KnnEstimator, "predict", broken)
    result = run_experiment(
        [ExperimentDataset(step_dataset), ExperimentDataset(linear_dataset)],
        [Treatment(name="KNN"), Treatment(name="CART")],
        PlanParams(m=1, n=3),
        seed=0,
    )
    text = format_report(result, FAST_RANKING)
    section = text.split("Folds that fell back to the training mean\n", 1)[1].split("\n\n", 1)[0]
    assert section.splitlines() == ["  step KNN: 3/3", "  linear KNN: 3/3"]


def test_fallback_section_without_fallbacks():
    metrics = pd.DataFrame(
        [("d", "CART", 0, fold, "mre", 0.3, 0) for fold in range(3)], columns=METRIC_COLUMNS
    )
    assert format_fallbacks(metrics) == ["Folds that fell back to the training mean", "  none"]
    assert format_fallbacks(metrics.drop(columns="fallback"))[1] == "  not recorded"
