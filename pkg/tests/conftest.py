"""Shared fixtures: synthetic datasets, activity series and CSV writers."""
from datetime import date
from pathlib import Path
from typing import Callable, List

import numpy as np
import pytest

from effort_lab.activity import ActivitySeries, MonthlyActivity, month_end, next_month_end
from effort_lab.datasets import Dataset, Provenance


def make_series(n_months: int, repo_id: str = "acme__widgets", start: date = date(2022, 1, 31), seed: int = 0) -> ActivitySeries:
    rng = np.random.default_rng(seed)
    months: List[MonthlyActivity] = []
    current = month_end(start.year, start.month)
    for _ in range(n_months):
        closed = int(rng.integers(2, 12))
        months.append(
            MonthlyActivity(
                month_end=current,
                commits=int(rng.integers(10, 80)),
                commit_comments=int(rng.integers(0, 5)),
                contributors=int(rng.integers(1, 9)),
                open_prs=int(rng.integers(2, 12)),
                closed_prs=closed,
                merged_prs=int(rng.integers(0, closed + 1)),
                pr_mergers=int(rng.integers(0, 3)),
                pr_comments=int(rng.integers(0, 30)),
                open_issues=int(rng.integers(0, 15)),
                closed_issues=int(rng.integers(0, 15)),
                issue_comments=int(rng.integers(0, 40)),
                stargazers=int(rng.integers(0, 25)),
                forks=int(rng.integers(0, 6)),
                watchers=int(rng.integers(0, 25)),
            )
        )
        current = next_month_end(current)
    return ActivitySeries(repo_id=repo_id, months=tuple(months))


@pytest.fixture
def series_factory() -> Callable[..., ActivitySeries]:
    return make_series


@pytest.fixture
def linear_dataset() -> Dataset:
    """30 rows of effort = 4*x0 + 2*x1 + 10 plus mild noise."""
    rng = np.random.default_rng(7)
    x = rng.uniform(1, 20, size=(30, 2))
    y = 4 * x[:, 0] + 2 * x[:, 1] + 10 + rng.normal(0, 0.5, size=30)
    return Dataset.from_arrays(x, y, ["size", "team"], name="linear")


@pytest.fixture
def step_dataset() -> Dataset:
    """Effort jumps from ~10 to ~50 at x0 = 10; x1 is noise."""
    rng = np.random.default_rng(3)
    x0 = np.linspace(1, 20, 40)
    x1 = rng.uniform(0, 1, size=40)
    y = np.where(x0 <= 10, 10.0, 50.0) + rng.uniform(-1, 1, size=40)
    return Dataset.from_arrays(np.column_stack([x0, x1]), y, ["size", "noise"], name="step")


@pytest.fixture
def contemporary_dataset() -> Dataset:
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 30, size=(24, 3))
    y = np.round(x[:, 0] * 1.5 + rng.uniform(0, 3, size=24))
    return Dataset.from_arrays(x, y, ["a", "b", "c"], name="repo", provenance=Provenance.CONTEMPORARY)


@pytest.fixture
def write_file(tmp_path) -> Callable[[str, str], Path]:
    def _write(name: str, text: str) -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
