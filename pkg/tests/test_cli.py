import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from effort_lab.cli import EXIT_DATA, EXIT_NETWORK, EXIT_OK, EXIT_USAGE, exit_code_for, main
from effort_lab.exceptions import ConfigError, DataError, NetworkDisabledError, RateLimitError, TuningError
from effort_lab.github_ingest import ENDPOINTS
from effort_lab.harness import METRIC_COLUMNS
from effort_lab.utils.settings import Settings


GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.mark.parametrize("command", ["", "run", "rank", "tune", "collect", "report"])
def test_help_matches_the_golden_text(command, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "200")
    monkeypatch.setenv("NO_COLOR", "1")
    monkeypatch.setattr(Settings, "LOG_LEVEL", "INFO")
    monkeypatch.setattr(Settings, "JOBS", 4)
    monkeypatch.setattr(Settings, "CACHE_DIR", Path(".cache/github"))
    with pytest.raises(SystemExit) as exit_info:
        main([command, "--help"] if command else ["--help"])
    assert exit_info.value.code == EXIT_OK
    out = capsys.readouterr().out.replace("optional arguments:", "options:")
    assert out == (GOLDEN_DIR / f"help_{command or 'main'}.txt").read_text(encoding="utf-8")


@pytest.mark.parametrize("argv", [["run", "--bogus"], ["rank", "metrics.csv", "--metric", "mre"], ["frobnicate"]])
def test_usage_errors_exit_with_one(argv, capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(argv)
    assert exit_info.value.code == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_exit_codes_follow_error_families():
    assert exit_code_for(ConfigError("x")) == EXIT_USAGE
    assert exit_code_for(TuningError("x")) == EXIT_USAGE
    assert exit_code_for(DataError("x")) == EXIT_DATA
    assert exit_code_for(RateLimitError("x")) == EXIT_NETWORK
    assert exit_code_for(NetworkDisabledError("x")) == EXIT_NETWORK


@pytest.fixture
def metrics_csv(tmp_path):
    rng = np.random.default_rng(2)
    rows = []
    for dataset in ("d1", "d2", "d3"):
        for fold in range(9):
            rows.append((dataset, "KNN", fold // 3, fold % 3, "mre", float(rng.normal(0.2, 0.02)), 0))
            rows.append((dataset, "CART", fold // 3, fold % 3, "mre", float(rng.normal(0.8, 0.02)), 0))
    path = tmp_path / "results" / "metrics.csv"
    path.parent.mkdir()
    pd.DataFrame(rows, columns=METRIC_COLUMNS).to_csv(path, index=False)
    return path


def test_rank_command(metrics_csv, tmp_path, capsys):
    code = main(["rank", str(metrics_csv), "--metric", "mre", "--seed", "1", "--resamples", "200",
                 "--out", str(tmp_path / "ranked")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "Rank-1 frequency (MRE)" in out
    knn_line = next(line for line in out.splitlines() if line.startswith("KNN ") and "/" in line)
    assert " 3/3" in knn_line
    ranks = pd.read_csv(tmp_path / "ranked" / "ranks.csv")
    assert set(ranks[ranks["rank"] == 1].treatment) == {"KNN"}


def test_rank_needs_rows_for_the_metric(metrics_csv, capsys):
    assert main(["rank", str(metrics_csv), "--metric", "sa", "--seed", "1"]) == EXIT_USAGE
    assert "no rows for metric 'sa'" in capsys.readouterr().err


def test_rank_on_a_malformed_table_is_a_data_error(tmp_path, capsys):
    broken = tmp_path / "metrics.csv"
    broken.write_text("dataset,treatment\nd,KNN\nd,KNN,0,0,mre,0.5\n", encoding="utf-8")
    assert main(["rank", str(broken), "--metric", "mre", "--seed", "1"]) == EXIT_DATA
    assert "unreadable metrics file metrics.csv" in capsys.readouterr().err


def test_report_command(metrics_csv, tmp_path, capsys):
    code = main(["report", str(metrics_csv.parent), "--seed", "0", "--resamples", "100", "--out", str(tmp_path / "rep")])
    assert code == EXIT_OK
    written = (tmp_path / "rep" / "report.txt").read_text(encoding="utf-8")
    assert written in capsys.readouterr().out
    assert "MRE median per dataset" in written


def test_tune_command(tmp_path, capsys):
    out_dir = tmp_path / "tuned"
    code = main(["tune", "--dataset", "albrecht", "--seed", "4", "--out", str(out_dir),
                 "--budget", "8", "--init", "3", "--pool", "30"])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["dataset"] == "albrecht"
    assert summary["evaluations"] == 8
    assert set(summary["config"]) == {"max_features_fraction", "max_depth", "min_sample_split", "min_samples_leaf"}
    assert json.loads((out_dir / "best_config.json").read_text(encoding="utf-8")) == summary
    assert len(pd.read_csv(out_dir / "archive.csv")) == 8
    assert (out_dir / "tree.txt").read_text(encoding="utf-8").strip()


@pytest.mark.parametrize(
    "extra, code",
    [
        (["--dataset", "albrecht", "--budget", "5", "--init", "5"], EXIT_USAGE),
        (["--csv", "projects.csv"], EXIT_USAGE),
        (["--dataset", "no_such_dataset"], EXIT_DATA),
    ],
)
def test_tune_failures(tmp_path, extra, code):
    assert main(["tune", "--seed", "0", "--out", str(tmp_path / "x")] + extra) == code


def _seed_cache(root):
    repo_dir = root / "acme__widgets"
    index = {"repo": "acme/widgets", "endpoints": {}}
    for slug in ENDPOINTS:
        (repo_dir / slug).mkdir(parents=True)
        (repo_dir / slug / "page-0001.json").write_text("[]", encoding="utf-8")
        index["endpoints"][slug] = {"pages": 1, "complete": True}
    (repo_dir / "index.json").write_text(json.dumps(index), encoding="utf-8")


def test_collect_from_cache(tmp_path, capsys):
    _seed_cache(tmp_path / "cache")
    code = main(["collect", "--repo", "acme/widgets", "--start", "2023-01-01", "--end", "2023-03-31",
                 "--out", str(tmp_path / "fixtures"), "--cache-dir", str(tmp_path / "cache")])
    assert code == EXIT_OK
    path = tmp_path / "fixtures" / "acme__widgets.csv"
    assert capsys.readouterr().out.strip() == str(path)
    frame = pd.read_csv(path)
    assert frame.dates.tolist() == ["2023-01-31", "2023-02-28", "2023-03-31"]
    assert int(frame.drop(columns="dates").to_numpy().sum()) == 0


def test_collect_failures(tmp_path):
    base = ["collect", "--repo", "acme/widgets", "--out", str(tmp_path / "o"), "--cache-dir", str(tmp_path / "empty")]
    assert main(base + ["--start", "2023-01-01", "--end", "2023-03-31"]) == EXIT_NETWORK
    assert main(base + ["--start", "2023-03-01", "--end", "2023-01-31"]) == EXIT_USAGE


def test_run_command(tmp_path, capsys):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({
        "datasets": [{"name": "kemerer", "csv": "bundled:kemerer"}],
        "treatments": ["KNN", "CART", "COCOMO-II"],
        "m": 2,
        "n": 3,
        "rank": {"resamples": 100},
    }), encoding="utf-8")
    out_dir = tmp_path / "results"
    assert main(["run", "--config", str(config), "--seed", "3", "--out", str(out_dir), "--jobs", "2"]) == EXIT_OK
    report = capsys.readouterr().out
    assert "effort_lab experiment report" in report
    assert "N/A" in report
    manifest = json.loads((out_dir / "run.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 3
    assert manifest["inadmissible"] == [["kemerer", "COCOMO-II"]]
    assert set(manifest["plan_digests"]) == {"kemerer"}
    metrics = pd.read_csv(out_dir / "metrics.csv")
    assert set(metrics.treatment) == {"KNN", "CART"}
    assert len(metrics) == 2 * 3 * 2 * 2

    again = tmp_path / "again"
    assert main(["run", "--config", str(config), "--seed", "3", "--out", str(again), "--jobs", "1"]) == EXIT_OK
    for name in ("metrics.csv", "predictions.csv", "ranks.csv", "report.txt"):
        assert (out_dir / name).read_bytes() == (again / name).read_bytes()


def test_run_with_a_broken_config(tmp_path, write_file, capsys):
    path = write_file("bad.json", '{"datasets": []}')
    assert main(["run", "--config", str(path), "--seed", "1", "--out", str(tmp_path / "r")]) == EXIT_USAGE
    assert "bad.json" in capsys.readouterr().err
