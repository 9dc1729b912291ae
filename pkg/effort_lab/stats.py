"""
Treatment ranking: Vargha-Delaney A12, bootstrap significance and Scott-Knott.

Two score lists are "distinguishable" only when a mean-shift bootstrap test
finds them significantly different AND the A12 effect is not small. Scott-Knott
bi-clusters the median-sorted treatments, recursing only across
distinguishable cuts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from effort_lab.exceptions import MetricError

logger = logging.getLogger(__name__)


class Orientation(str, Enum):
    LOWER_BETTER = "lower-better"
    HIGHER_BETTER = "higher-better"


class RankConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    resamples: int = Field(default=1000, ge=1)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    a12_threshold: float = Field(default=0.56, ge=0.5, le=1.0)
    seed: int = 0


def _values(scores: Sequence[float], what: str) -> np.ndarray:
    values = np.asarray(scores, dtype=float).reshape(-1)
    if values.size == 0:
        raise MetricError(f"{what}: empty score list")
    return values


def a12(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Probability that a value drawn from xs exceeds one from ys, ties counting half."""
    x = _values(xs, "a12")
    y = np.sort(_values(ys, "a12"))
    below = np.searchsorted(y, x, side="left")
    at_or_below = np.searchsorted(y, x, side="right")
    wins = below.sum() + 0.5 * (at_or_below - below).sum()
    return float(wins / (x.size * y.size))


def bootstrap_sig(
    xs: Sequence[float],
    ys: Sequence[float],
    resamples: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
) -> bool:
    """Mean-shift bootstrap: both groups are recentred on the pooled mean before resampling."""
    x = np.sort(_values(xs, "bootstrap"))
    y = np.sort(_values(ys, "bootstrap"))
    # same answer whichever list is passed first
    if (x.size, tuple(x)) > (y.size, tuple(y)):
        x, y = y, x
    observed = abs(x.mean() - y.mean())
    if observed == 0.0:
        return False

    pooled = np.concatenate([x, y]).mean()
    x0 = x - x.mean() + pooled
    y0 = y - y.mean() + pooled
    rng = np.random.default_rng(seed)
    xb = x0[rng.integers(0, x.size, size=(resamples, x.size))].mean(axis=1)
    yb = y0[rng.integers(0, y.size, size=(resamples, y.size))].mean(axis=1)
    extreme = np.count_nonzero(np.abs(xb - yb) >= observed)
    return extreme / resamples < alpha


def distinguishable(xs: Sequence[float], ys: Sequence[float], config: RankConfig = RankConfig()) -> bool:
    effect = max(a12(xs, ys), a12(ys, xs))
    if effect < config.a12_threshold:
        return False
    return bootstrap_sig(xs, ys, config.resamples, config.alpha, config.seed)


@dataclass(frozen=True)
class TreatmentScores:
    name: str
    scores: Tuple[float, ...]
    orientation: Orientation = Orientation.LOWER_BETTER

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if not self.scores:
            raise MetricError(f"treatment '{self.name}' has no scores", context={"treatment": self.name})

    @property
    def median(self) -> float:
        return float(np.median(self.scores))


@dataclass(frozen=True)
class RankResult:
    ranks: Dict[str, int]
    members: Dict[int, Tuple[str, ...]]
    medians: Dict[str, float]
    order: Tuple[str, ...]

    def best(self) -> Tuple[str, ...]:
        return self.members.get(1, ())


def _cut(groups: List[TreatmentScores]) -> int:
    """Split position maximising the between-part sum of squares; earliest on ties."""
    pooled = np.concatenate([g.scores for g in groups])
    mu = pooled.mean()
    best_at, best_score = 1, -np.inf
    for i in range(1, len(groups)):
        left = np.concatenate([g.scores for g in groups[:i]])
        right = np.concatenate([g.scores for g in groups[i:]])
        score = left.size * (left.mean() - mu) ** 2 + right.size * (right.mean() - mu) ** 2
        if score > best_score:
            best_at, best_score = i, score
    return best_at


def scott_knott(groups: Sequence[TreatmentScores], config: RankConfig = RankConfig()) -> RankResult:
    if not groups:
        raise MetricError("Scott-Knott needs at least one treatment")
    orientation = groups[0].orientation
    sign = 1.0 if orientation == Orientation.LOWER_BETTER else -1.0
    ordered = sorted(groups, key=lambda g: sign * g.median)

    spans: List[List[TreatmentScores]] = []

    def divide(span: List[TreatmentScores]) -> None:
        if len(span) < 2:
            spans.append(span)
            return
        at = _cut(span)
        left, right = span[:at], span[at:]
        left_scores = np.concatenate([g.scores for g in left])
        right_scores = np.concatenate([g.scores for g in right])
        if distinguishable(left_scores, right_scores, config):
            divide(left)
            divide(right)
        else:
            spans.append(span)

    divide(ordered)

    ranks: Dict[str, int] = {}
    members: Dict[int, Tuple[str, ...]] = {}
    for rank, span in enumerate(spans, start=1):
        members[rank] = tuple(g.name for g in span)
        for g in span:
            ranks[g.name] = rank
    logger.debug("Scott-Knott: %s", ranks)
    return RankResult(
        ranks=ranks,
        members=members,
        medians={g.name: g.median for g in ordered},
        order=tuple(g.name for g in ordered),
    )
