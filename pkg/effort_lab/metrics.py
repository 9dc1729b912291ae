"""Error measures: MRE, MAE and standardized accuracy against random guessing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from effort_lab.exceptions import MetricError


def mre(actual: float, predicted: float) -> float:
    """|actual - predicted| / actual."""
    if not actual > 0:
        raise MetricError(f"MRE undefined for non-positive actual effort {actual}", context={"actual": actual})
    return abs(actual - predicted) / actual


def _pairs(actuals, predictions) -> tuple:
    a = np.asarray(actuals, dtype=float).reshape(-1)
    p = np.asarray(predictions, dtype=float).reshape(-1)
    if a.shape != p.shape:
        raise MetricError(f"{a.size} actuals but {p.size} predictions")
    if a.size == 0:
        raise MetricError("empty prediction set")
    return a, p


def mre_vector(actuals, predictions) -> np.ndarray:
    a, p = _pairs(actuals, predictions)
    bad = np.flatnonzero(a <= 0)
    if bad.size:
        raise MetricError(
            f"MRE undefined: actual effort {a[bad[0]]} at position {int(bad[0])}",
            context={"position": int(bad[0])},
        )
    return np.abs(a - p) / a


def mae(actuals, predictions) -> float:
    a, p = _pairs(actuals, predictions)
    return float(np.abs(a - p).mean())


def rguess_mae(
    test_actuals: Sequence[float],
    guess_source: Sequence[float],
    mode: str = "exact",
    *,
    runs: int = 1000,
    seed: int = 0,
) -> float:
    """
    MAE of guessing each test effort by drawing uniformly from `guess_source`.

    "exact" is the closed-form expectation; "sampled" averages `runs` seeded draws.
    """
    tests = np.asarray(test_actuals, dtype=float).reshape(-1)
    source = np.asarray(guess_source, dtype=float).reshape(-1)
    if source.size == 0:
        raise MetricError("random-guess baseline needs a non-empty guess source")
    if tests.size == 0:
        raise MetricError("random-guess baseline needs at least one test effort")
    if mode == "exact":
        return float(np.abs(tests[:, None] - source[None, :]).mean())
    if mode == "sampled":
        if runs < 1:
            raise MetricError(f"sampled baseline needs runs >= 1, got {runs}", context={"runs": runs})
        rng = np.random.default_rng(seed)
        guesses = source[rng.integers(0, source.size, size=(runs, tests.size))]
        return float(np.abs(guesses - tests[None, :]).mean())
    raise MetricError(f"unknown baseline mode '{mode}'", context={"mode": mode})


def sa(actuals, predictions, baseline_mae: float) -> float:
    """Standardized accuracy as a fraction; negative means worse than guessing."""
    if not baseline_mae > 0:
        raise MetricError(f"SA undefined for a zero random-guess baseline ({baseline_mae})",
                          context={"baseline_mae": baseline_mae})
    return 1.0 - mae(actuals, predictions) / baseline_mae


def aggregate(scores: Sequence[float]) -> float:
    """Lower median: the floor((n-1)/2)-th order statistic."""
    values = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    if values.size == 0:
        raise MetricError("cannot aggregate an empty score list")
    return float(values[(values.size - 1) // 2])


@dataclass(frozen=True)
class PredictionSet:
    """Paired actual/predicted efforts of one treatment on one fold."""

    actuals: np.ndarray
    predictions: np.ndarray
    treatment: str = ""
    repeat: int = 0
    fold: int = 0
    rows: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        a, p = _pairs(self.actuals, self.predictions)
        object.__setattr__(self, "actuals", a)
        object.__setattr__(self, "predictions", p)

    def __len__(self) -> int:
        return int(self.actuals.size)

    def mre(self) -> np.ndarray:
        return mre_vector(self.actuals, self.predictions)

    def mae(self) -> float:
        return mae(self.actuals, self.predictions)

    def sa(self, guess_source: Sequence[float]) -> float:
        return sa(self.actuals, self.predictions, rguess_mae(self.actuals, guess_source))
