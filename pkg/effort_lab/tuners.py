"""
CART hyperparameter search: differential evolution and FLASH.

Both tuners minimise a `TuneObjective` measured on validation rows carved out
of the training data, and record every distinct configuration they evaluate in
a `TuneArchive`. Test rows are never handed to a tuner.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from effort_lab.datasets import Dataset
from effort_lab.exceptions import MetricError, TuningError
from effort_lab.learners import CartConfig, cart_train, grow_tree
from effort_lab.metrics import aggregate, mae, rguess_mae, sa

logger = logging.getLogger(__name__)

# (name, low, high, integer) in vector order
SPACE: Tuple[Tuple[str, float, float, bool], ...] = (
    ("max_features_fraction", 0.01, 1.0, False),
    ("max_depth", 1, 12, True),
    ("min_sample_split", 0, 20, True),
    ("min_samples_leaf", 1, 12, True),
)
CONFIG_FIELDS = tuple(name for name, *_ in SPACE)


def config_to_vector(config: CartConfig) -> np.ndarray:
    depth = config.max_depth if config.max_depth is not None else SPACE[1][2]
    return np.array(
        [config.max_features_fraction, depth, config.min_sample_split, config.min_samples_leaf],
        dtype=float,
    )


def vector_to_config(vector) -> CartConfig:
    """Clamp each coordinate into its range; integer dimensions are rounded."""
    values = {}
    for (name, low, high, integer), raw in zip(SPACE, np.asarray(vector, dtype=float)):
        value = min(max(float(raw), low), high)
        values[name] = int(round(value)) if integer else value
    return CartConfig(**values)


def _key(config: CartConfig) -> Tuple:
    return tuple(getattr(config, name) for name in CONFIG_FIELDS)


def sample_space(n: int, seed: int) -> List[CartConfig]:
    """`n` distinct configurations drawn uniformly from the tuning ranges."""
    if n < 1:
        raise TuningError(f"sample size must be at least 1, got {n}", context={"n": n})
    rng = np.random.default_rng(seed)
    seen = set()
    configs: List[CartConfig] = []
    attempts = 0
    while len(configs) < n:
        attempts += 1
        if attempts > 100 * n:
            raise TuningError(f"could not draw {n} distinct configurations", context={"n": n})
        config = CartConfig(
            max_features_fraction=float(rng.uniform(0.01, 1.0)),
            max_depth=int(rng.integers(1, 13)),
            min_sample_split=int(rng.integers(0, 21)),
            min_samples_leaf=int(rng.integers(1, 13)),
        )
        if _key(config) not in seen:
            seen.add(_key(config))
            configs.append(config)
    return configs


class TuneObjective:
    """Validation score of a CART configuration; lower is better."""

    METRICS = ("mre", "sa")

    def __init__(self, train: Dataset, validation: Dataset, metric: str = "mre", seed: int = 0) -> None:
        if metric not in self.METRICS:
            raise TuningError(f"unknown tuning metric '{metric}'", context={"metric": metric})
        self.train = train
        self.validation = validation
        self.metric = metric
        self.seed = seed
        self.evaluations = 0

    def __call__(self, config: CartConfig) -> float:
        self.evaluations += 1
        tree = cart_train(self.train, config, self.seed)
        predictions = tree.predict(self.validation.features)
        actuals = self.validation.targets
        if self.metric == "mre":
            positive = actuals > 0
            # months without activity have no MRE; MAE keeps the score defined
            if not positive.any():
                return mae(actuals, predictions)
            errors = np.abs(actuals[positive] - predictions[positive]) / actuals[positive]
            return aggregate(errors)
        try:
            return -sa(actuals, predictions, rguess_mae(actuals, self.train.targets))
        except MetricError:
            return mae(actuals, predictions)


@dataclass
class TuneArchive:
    """Evaluated configurations in evaluation order."""

    budget: Optional[int] = None
    entries: List[Tuple[CartConfig, float]] = field(default_factory=list)
    _index: Dict[Tuple, int] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, config: CartConfig) -> bool:
        return _key(config) in self._index

    @property
    def consumed(self) -> int:
        return len(self.entries)

    def score_of(self, config: CartConfig) -> float:
        return self.entries[self._index[_key(config)]][1]

    def add(self, config: CartConfig, score: float) -> None:
        if config in self:
            raise TuningError(f"configuration already evaluated: {config}")
        if self.budget is not None and self.consumed >= self.budget:
            raise TuningError(f"evaluation budget of {self.budget} exhausted", context={"budget": self.budget})
        self._index[_key(config)] = len(self.entries)
        self.entries.append((config, float(score)))

    def evaluate(self, objective: TuneObjective, config: CartConfig) -> float:
        """Score `config`, reusing the archived score of a repeated configuration."""
        if config in self:
            return self.score_of(config)
        score = objective(config)
        self.add(config, score)
        return score

    def best(self) -> Tuple[CartConfig, float]:
        if not self.entries:
            raise TuningError("empty archive has no best configuration")
        scores = np.array([s for _, s in self.entries])
        i = int(np.argmin(scores))
        return self.entries[i]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, (config, score) in enumerate(self.entries):
            row = {name: getattr(config, name) for name in CONFIG_FIELDS}
            row.update(score=score, evaluation=i)
            rows.append(row)
        return pd.DataFrame(rows, columns=list(CONFIG_FIELDS) + ["score", "evaluation"])

    def dump_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.12g", quoting=csv.QUOTE_MINIMAL)
        return path


@dataclass(frozen=True)
class TuneResult:
    config: CartConfig
    score: float
    archive: TuneArchive
    trace: Tuple[float, ...]


class DeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    np: int = Field(default=20, ge=4)
    f: float = Field(default=0.75, ge=0.0, le=2.0)
    cr: float = Field(default=0.3, ge=0.0, le=1.0)
    generations: int = Field(default=10, ge=1)


def de_tune(objective: TuneObjective, params: DeParams = DeParams(), seed: int = 0) -> TuneResult:
    """rand/1/bin differential evolution; a member is replaced only by a strictly better trial."""
    archive = TuneArchive()
    population = sample_space(params.np, seed)
    scores = [archive.evaluate(objective, config) for config in population]
    rng = np.random.default_rng([seed, 1])
    dims = len(SPACE)
    trace = [min(scores)]

    for generation in range(params.generations):
        for i in range(params.np):
            others = [j for j in range(params.np) if j != i]
            a, b, c = (population[j] for j in rng.choice(others, size=3, replace=False))
            va, vb, vc = config_to_vector(a), config_to_vector(b), config_to_vector(c)
            trial = config_to_vector(population[i])
            forced = int(rng.integers(dims))
            for k in range(dims):
                if rng.random() < params.cr or k == forced:
                    trial[k] = va[k] + params.f * (vb[k] - vc[k])
            candidate = vector_to_config(trial)
            score = archive.evaluate(objective, candidate)
            if score < scores[i]:
                population[i], scores[i] = candidate, score
        trace.append(min(trace[-1], min(scores)))
        logger.debug("DE generation %d: best %.6g", generation + 1, trace[-1])

    config, score = archive.best()
    return TuneResult(config=config, score=score, archive=archive, trace=tuple(trace))


def flash_tune(
    objective: TuneObjective,
    budget: int = 200,
    init: int = 20,
    pool: int = 10_000,
    seed: int = 0,
) -> TuneResult:
    """
    Sequential model-based search over a fixed random pool.

    After `init` random evaluations, a CART surrogate fitted on the archive
    picks the unevaluated pool member with the smallest predicted score, until
    `budget` evaluations (initial ones included) have been spent.
    """
    if not 1 <= init < budget:
        raise TuningError(f"need 1 <= init < budget, got init={init} budget={budget}",
                          context={"init": init, "budget": budget})
    if pool <= budget:
        raise TuningError(f"pool ({pool}) must exceed the budget ({budget})", context={"pool": pool})

    candidates = sample_space(pool, seed)
    vectors = np.array([config_to_vector(c) for c in candidates])
    archive = TuneArchive(budget=budget)
    for config in candidates[:init]:
        archive.evaluate(objective, config)
    remaining = np.arange(init, pool)
    trace = [archive.best()[1]]
    surrogate_config = CartConfig()

    while archive.consumed < budget and remaining.size:
        evaluated = np.array([config_to_vector(c) for c, _ in archive.entries])
        measured = np.array([s for _, s in archive.entries])
        surrogate = grow_tree(evaluated, measured, surrogate_config, seed)
        predicted = surrogate.predict(vectors[remaining])
        pick = int(np.argmin(predicted))
        archive.evaluate(objective, candidates[remaining[pick]])
        remaining = np.delete(remaining, pick)
        trace.append(archive.best()[1])

    config, score = archive.best()
    logger.debug("FLASH: %d evaluations, best %.6g", archive.consumed, score)
    return TuneResult(config=config, score=score, archive=archive, trace=tuple(trace))
