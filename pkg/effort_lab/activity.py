"""Monthly repository activity records shared by ingestion and dataset building."""
from __future__ import annotations

import calendar
from dataclasses import dataclass, fields
from datetime import date
from typing import Dict, List, Tuple

from effort_lab.exceptions import FixtureError, NonContiguousMonthsError

# Column names of the fixture format, in published feature order.
FIXTURE_COLUMNS: Tuple[str, ...] = (
    "dates",
    "monthly_commits",
    "monthly_commit_comments",
    "monthly_contributors",
    "monthly_open_PRs",
    "monthly_closed_PRs",
    "monthly_merged_PRs",
    "monthly_PR_mergers",
    "monthly_PR_comments",
    "monthly_open_issues",
    "monthly_closed_issues",
    "monthly_issue_comments",
    "monthly_stargazer",
    "monthly_forks",
    "monthly_watchers",
)

ACTIVITY_FEATURES: Tuple[str, ...] = FIXTURE_COLUMNS[1:]


def month_end(year: int, month: int) -> date:
    return date(year, month, calendar.monthrange(year, month)[1])


def next_month_end(day: date) -> date:
    year, month = (day.year + 1, 1) if day.month == 12 else (day.year, day.month + 1)
    return month_end(year, month)


@dataclass(frozen=True)
class MonthlyActivity:
    """One calendar month of repository activity; `month_end` is the last day of the month."""

    month_end: date
    commits: int = 0
    commit_comments: int = 0
    contributors: int = 0
    open_prs: int = 0
    closed_prs: int = 0
    merged_prs: int = 0
    pr_mergers: int = 0
    pr_comments: int = 0
    open_issues: int = 0
    closed_issues: int = 0
    issue_comments: int = 0
    stargazers: int = 0
    forks: int = 0
    watchers: int = 0

    def __post_init__(self) -> None:
        if self.month_end != month_end(self.month_end.year, self.month_end.month):
            raise FixtureError(
                f"month_end {self.month_end.isoformat()} is not the last day of its month",
                context={"month_end": self.month_end.isoformat()},
            )
        for name, value in self.counts().items():
            if value < 0:
                raise FixtureError(
                    f"{name} must be non-negative, got {value} for {self.month_end.isoformat()}",
                    context={"column": name, "month_end": self.month_end.isoformat()},
                )
        if self.merged_prs > self.closed_prs:
            raise FixtureError(
                f"merged_PRs ({self.merged_prs}) exceeds closed_PRs ({self.closed_prs}) "
                f"for {self.month_end.isoformat()}",
                context={"month_end": self.month_end.isoformat()},
            )

    def counts(self) -> Dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "month_end"}

    def as_features(self) -> List[float]:
        """Counts in fixture column order."""
        return [float(v) for v in self.counts().values()]


@dataclass(frozen=True)
class ActivitySeries:
    repo_id: str
    months: Tuple[MonthlyActivity, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "months", tuple(self.months))
        for previous, current in zip(self.months, self.months[1:]):
            if current.month_end != next_month_end(previous.month_end):
                raise NonContiguousMonthsError(
                    f"non-contiguous months in {self.repo_id}: "
                    f"{previous.month_end.isoformat()} is followed by {current.month_end.isoformat()}",
                    context={"repo": self.repo_id, "after": previous.month_end.isoformat()},
                )

    def __len__(self) -> int:
        return len(self.months)

    def total(self, name: str) -> int:
        return sum(getattr(m, name) for m in self.months)
