import itertools

import numpy as np
import pandas as pd
import pytest

from effort_lab.datasets import Dataset, Provenance, validation_split
from effort_lab.exceptions import TuningError
from effort_lab.learners import CartConfig
from effort_lab.tuners import (
    CONFIG_FIELDS,
    SPACE,
    DeParams,
    TuneArchive,
    TuneObjective,
    config_to_vector,
    de_tune,
    flash_tune,
    sample_space,
    vector_to_config,
)


class Bowl:
    """Cheap objective with a known optimum at depth 4, leaf 3, split 5, fraction 0.5."""

    def __init__(self):
        self.evaluations = 0

    def __call__(self, config: CartConfig) -> float:
        self.evaluations += 1
        return (
            abs(config.max_depth - 4)
            + abs(config.min_samples_leaf - 3)
            + abs(config.min_sample_split - 5) / 4
            + 10 * abs(config.max_features_fraction - 0.5)
        )


class Quadratic:
    """Separable quadratic over the normalised tuning ranges."""

    TARGET = {"max_features_fraction": 0.3, "max_depth": 7, "min_sample_split": 10, "min_samples_leaf": 4}

    def __init__(self):
        self.evaluations = 0

    def __call__(self, config: CartConfig) -> float:
        self.evaluations += 1
        return sum(
            ((getattr(config, name) - self.TARGET[name]) / (high - low)) ** 2 for name, low, high, _ in SPACE
        )


class Levels:
    """Each dimension cut into three levels; score is the level distance from the top cell."""

    CUTS = {"max_features_fraction": (0.34, 0.67), "max_depth": (4, 8), "min_sample_split": (7, 13), "min_samples_leaf": (4, 8)}
    LEVELS = {"max_features_fraction": (0.2, 0.5, 0.9), "max_depth": (2, 6, 10), "min_sample_split": (3, 10, 17),
              "min_samples_leaf": (2, 6, 10)}

    def __init__(self):
        self.evaluations = 0

    def level(self, name: str, value: float) -> int:
        low, high = self.CUTS[name]
        return 0 if value <= low else 1 if value <= high else 2

    def __call__(self, config: CartConfig) -> float:
        self.evaluations += 1
        return float(sum(2 - self.level(name, getattr(config, name)) for name in CONFIG_FIELDS))


def test_samples_are_distinct_and_in_range():
    configs = sample_space(300, seed=4)
    assert len({tuple(getattr(c, f) for f in CONFIG_FIELDS) for c in configs}) == 300
    for config in configs:
        for name, low, high, _ in SPACE:
            assert low <= getattr(config, name) <= high


def test_samples_depend_only_on_seed():
    assert sample_space(50, seed=9) == sample_space(50, seed=9)
    assert sample_space(50, seed=9) != sample_space(50, seed=10)
    with pytest.raises(TuningError):
        sample_space(0, seed=1)


def test_vector_round_trip_clamps_and_rounds():
    config = vector_to_config([5.0, -3.0, 100.0, 2.6])
    assert config == CartConfig(max_features_fraction=1.0, max_depth=1, min_sample_split=20, min_samples_leaf=3)
    assert config_to_vector(CartConfig()).tolist() == [1.0, 12.0, 2.0, 1.0]


def test_archive_rejects_duplicates_and_overspend():
    archive = TuneArchive(budget=2)
    a, b, c = sample_space(3, seed=0)
    archive.add(a, 1.0)
    with pytest.raises(TuningError):
        archive.add(a, 0.5)
    archive.add(b, 0.25)
    with pytest.raises(TuningError):
        archive.add(c, 0.1)
    assert archive.best() == (b, 0.25)
    assert archive.to_frame().evaluation.tolist() == [0, 1]


def test_archive_reuses_scores_of_repeated_configs():
    archive = TuneArchive()
    objective = Bowl()
    config = CartConfig(max_depth=4, min_samples_leaf=3, min_sample_split=5, max_features_fraction=0.5)
    assert archive.evaluate(objective, config) == 0.0
    assert archive.evaluate(objective, config) == 0.0
    assert objective.evaluations == 1


def test_archive_csv(tmp_path):
    archive = TuneArchive()
    for i, config in enumerate(sample_space(4, seed=2)):
        archive.add(config, float(i))
    frame = pd.read_csv(archive.dump_csv(tmp_path / "nested" / "archive.csv"))
    assert list(frame.columns) == list(CONFIG_FIELDS) + ["score", "evaluation"]
    assert frame.score.tolist() == [0.0, 1.0, 2.0, 3.0]


def test_flash_spends_exactly_its_budget():
    objective = Bowl()
    result = flash_tune(objective, budget=60, init=10, pool=500, seed=3)
    assert objective.evaluations == 60
    assert result.archive.consumed == 60
    assert len(result.trace) == 60 - 10 + 1
    assert all(later <= earlier for earlier, later in zip(result.trace, result.trace[1:]))
    assert result.score == min(score for _, score in result.archive.entries)


def test_flash_beats_the_pool_median():
    result = flash_tune(Bowl(), budget=60, init=10, pool=500, seed=11)
    pool_scores = [Bowl()(config) for config in sample_space(500, seed=11)]
    assert result.score <= np.median(pool_scores)


def test_flash_validates_its_budget():
    with pytest.raises(TuningError):
        flash_tune(Bowl(), budget=20, init=20, pool=500)
    with pytest.raises(TuningError):
        flash_tune(Bowl(), budget=20, init=5, pool=20)


def test_differential_evolution_improves_monotonically():
    params = DeParams(np=10, generations=6)
    objective = Bowl()
    result = de_tune(objective, params, seed=5)
    assert len(result.trace) == params.generations + 1
    assert all(later <= earlier for earlier, later in zip(result.trace, result.trace[1:]))
    assert objective.evaluations <= params.np * (params.generations + 1)
    assert result.score == result.trace[-1]
    initial = [Bowl()(config) for config in sample_space(params.np, seed=5)]
    assert result.score <= np.median(initial)


def test_tuners_are_deterministic():
    assert flash_tune(Bowl(), 40, 10, 300, seed=1).config == flash_tune(Bowl(), 40, 10, 300, seed=1).config
    assert de_tune(Bowl(), DeParams(np=8, generations=3), 2).trace == de_tune(Bowl(), DeParams(np=8, generations=3), 2).trace


def test_objective_scores_on_validation_rows(linear_dataset):
    train, validation = validation_split(linear_dataset, seed=0)
    objective = TuneObjective(train, validation, "mre", seed=0)
    score = objective(CartConfig(max_depth=3))
    assert 0 <= score < 1
    assert objective.evaluations == 1
    assert np.isfinite(TuneObjective(train, validation, "sa", seed=0)(CartConfig()))
    with pytest.raises(TuningError):
        TuneObjective(train, validation, "mmre")


def test_objective_falls_back_to_absolute_error_for_zero_actuals(linear_dataset):
    validation = Dataset.from_arrays(
        linear_dataset.features[:3], np.zeros(3), ["size", "team"], provenance=Provenance.CONTEMPORARY
    )
    objective = TuneObjective(linear_dataset, validation, "mre")
    assert objective(CartConfig()) > 0


def _pool_scores(objective, seed, n=1000):
    return np.array([objective(config) for config in sample_space(n, seed=seed)])


def test_rig_defaults():
    assert DeParams() == DeParams(np=20, f=0.75, cr=0.3, generations=10)
    assert flash_tune.__defaults__ == (200, 20, 10_000, 0)


def test_differential_evolution_with_rig_defaults_beats_a_random_pool():
    objective = Quadratic()
    result = de_tune(objective, DeParams(), seed=4)
    assert objective.evaluations <= 20 * (10 + 1)
    assert len(result.trace) == 11
    assert all(later <= earlier for earlier, later in zip(result.trace, result.trace[1:]))
    assert result.score < np.median(_pool_scores(Quadratic(), seed=99))


def test_flash_with_rig_defaults_beats_a_random_pool():
    objective = Quadratic()
    result = flash_tune(objective, seed=4)
    assert objective.evaluations <= 200
    assert result.archive.consumed == objective.evaluations
    assert len(result.trace) == objective.evaluations - 20 + 1
    assert result.score < np.median(_pool_scores(Quadratic(), seed=99))


def test_flash_best_is_in_the_top_five_percent_of_its_pool():
    result = flash_tune(Quadratic(), budget=200, init=20, pool=1000, seed=6)
    pool_scores = _pool_scores(Quadratic(), seed=6)
    assert result.score == pytest.approx(Quadratic()(result.config))
    assert result.score <= np.quantile(pool_scores, 0.05)


def test_differential_evolution_finds_the_optimum_of_a_discretized_space():
    objective = Levels()
    grid = [
        CartConfig(**dict(zip(CONFIG_FIELDS, values)))
        for values in itertools.product(*(Levels.LEVELS[name] for name in CONFIG_FIELDS))
    ]
    scores = [objective(config) for config in grid]
    assert len(grid) == 81 and scores.count(0.0) == 1
    optimum = grid[scores.index(0.0)]

    params = DeParams(np=20, generations=30)
    result = de_tune(Levels(), params, seed=1)
    assert result.score == 0.0
    assert [objective.level(n, getattr(result.config, n)) for n in CONFIG_FIELDS] == [
        objective.level(n, getattr(optimum, n)) for n in CONFIG_FIELDS
    ]
