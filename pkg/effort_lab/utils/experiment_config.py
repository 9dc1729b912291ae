"""
Experiment definition files.

A JSON document listing datasets, treatments, the split plan and tuner
settings. Relative paths resolve against the file's own directory;
`bundled:<name>` refers to a packaged dataset and `pool:<id>` to an entry of
the dataset registry.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from effort_lab.datasets import DATA_DIR, FeatureSchema, Provenance, clean, lag_features, load_bundled, load_csv
from effort_lab.exceptions import ConfigError, DataError
from effort_lab.github_ingest import from_fixture
from effort_lab.harness import TREATMENT_NAMES, ExperimentDataset, PlanParams, Treatment
from effort_lab.stats import RankConfig
from effort_lab.tuners import DeParams
from effort_lab.utils.error_handler import error_handler
from effort_lab.utils.settings import Settings

logger = logging.getLogger(__name__)

BUNDLED_PREFIX = "bundled:"
POOL_PREFIX = "pool:"

TreatmentName = Literal["KNN", "CART", "RF", "ATLM", "LP4EE", "COCOMO-II", "CART_DE", "ROME"]


class PoolFiles(BaseModel):
    model_config = ConfigDict(frozen=True)

    csv: str
    schema_file: str = Field(alias="schema")


class DatasetPool(BaseModel):
    """One entry of the dataset registry (config/datasets.json)."""

    model_config = ConfigDict(frozen=True)

    id: str
    name: str
    description: str = ""
    tags: List[str] = Field(default_factory=list)
    group: Optional[str] = None
    provenance: Provenance
    files: PoolFiles


def load_pools(path: Union[str, Path, None] = None) -> Dict[str, DatasetPool]:
    path = Path(path or Settings.DATASETS_REGISTRY)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        pools = [DatasetPool.model_validate(item) for item in raw]
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset registry not found: {path}", context={"path": str(path)}) from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"invalid dataset registry {path}: {exc}", context={"path": str(path)}) from exc
    logger.debug("Dataset registry %s: %d entries", path, len(pools))
    return {pool.id: pool for pool in pools}


class DatasetEntry(BaseModel):
    """One dataset: a CSV with its schema sidecar, a bundled name, or an activity fixture."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    name: str
    csv: Optional[str] = None
    schema_path: Optional[str] = Field(default=None, alias="schema")
    fixture: Optional[str] = None
    lag: int = Field(default=3, ge=1)
    group: Optional[str] = None
    exclusions: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_source(self) -> "DatasetEntry":
        if (self.csv is None) == (self.fixture is None):
            raise ValueError(f"dataset '{self.name}': give exactly one of 'csv' or 'fixture'")
        named = self.csv and self.csv.startswith((BUNDLED_PREFIX, POOL_PREFIX))
        if self.csv and not named and not self.schema_path:
            raise ValueError(f"dataset '{self.name}': a csv needs a 'schema' sidecar")
        return self

    def load(self, base_dir: Path, pools: Optional[Dict[str, DatasetPool]] = None) -> ExperimentDataset:
        if self.fixture is not None:
            series = from_fixture(base_dir / self.fixture, repo_id=self.name)
            return ExperimentDataset(lag_features(series, self.lag), self.group)
        group = self.group
        if self.csv.startswith(BUNDLED_PREFIX):
            data = load_bundled(self.csv[len(BUNDLED_PREFIX):])
        elif self.csv.startswith(POOL_PREFIX):
            pool_id = self.csv[len(POOL_PREFIX):]
            if not pools or pool_id not in pools:
                raise ConfigError(f"dataset '{self.name}': unknown registry id '{pool_id}'", context={"pool": pool_id})
            pool = pools[pool_id]
            schema = FeatureSchema.load(DATA_DIR / pool.files.schema_file)
            data = load_csv(DATA_DIR / pool.files.csv, schema, name=self.name)
            group = group or pool.group
        else:
            schema = FeatureSchema.load(base_dir / self.schema_path)
            data = load_csv(base_dir / self.csv, schema, name=self.name)
        return ExperimentDataset(clean(data, self.exclusions), group)


class TunerSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    budget: int = Field(default=200, ge=2)
    init: int = Field(default=20, ge=1)
    pool: int = Field(default=10_000, ge=3)
    de: DeParams = DeParams()
    metric: Literal["mre", "sa"] = "mre"
    validation_fraction: float = Field(default=0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_budget(self) -> "TunerSettings":
        if self.init >= self.budget:
            raise ValueError(f"init ({self.init}) must be below budget ({self.budget})")
        if self.pool <= self.budget:
            raise ValueError(f"pool ({self.pool}) must exceed budget ({self.budget})")
        return self


class RankSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    resamples: int = Field(default=1000, ge=1)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    a12_threshold: float = Field(default=0.56, ge=0.5, le=1.0)
    unit: Literal["fold", "prediction"] = "fold"

    def to_rank_config(self, seed: int) -> RankConfig:
        return RankConfig(resamples=self.resamples, alpha=self.alpha, a12_threshold=self.a12_threshold, seed=seed)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    datasets: List[DatasetEntry] = Field(min_length=1)
    treatments: List[TreatmentName] = Field(default_factory=lambda: list(TREATMENT_NAMES), min_length=1)
    m: int = Field(default=20, ge=1)
    n: int = Field(default=3, ge=2)
    seed: Optional[int] = None
    contemporary_repeats: int = Field(default=20, ge=1)
    knn_k: int = Field(default=5, ge=1)
    rf_trees: int = Field(default=100, ge=1)
    tuner: TunerSettings = TunerSettings()
    metrics: List[Literal["mre", "sa"]] = Field(default_factory=lambda: ["mre", "sa"], min_length=1)
    rank: RankSettings = RankSettings()
    skip_inadmissible: bool = True
    registry: Optional[str] = None

    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"experiment file not found: {path}", context={"path": str(path)}) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path.name}: invalid JSON at line {exc.lineno}: {exc.msg}",
                              context={"path": str(path), "line": exc.lineno}) from exc
        try:
            config = cls.model_validate(raw)
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(p) for p in first["loc"]) or "<root>"
            raise ConfigError(f"{path.name}: {where}: {first['msg']}", context={"path": str(path), "field": where}) from exc
        config._base_dir = path.resolve().parent
        logger.info(f"✅ Loaded experiment {path.name}: {len(config.datasets)} datasets, {len(config.treatments)} treatments")
        return config

    @property
    def base_dir(self) -> Path:
        return self._base_dir

    def build_datasets(self) -> List[ExperimentDataset]:
        pools = None
        if any(entry.csv and entry.csv.startswith(POOL_PREFIX) for entry in self.datasets):
            registry = self.base_dir / self.registry if self.registry else None
            pools = load_pools(registry)
        built = []
        for entry in self.datasets:
            try:
                built.append(entry.load(self.base_dir, pools))
            except DataError as exc:
                error_handler.handle_data_error(exc, entry.name, exc.context)
                raise
        return built

    def build_treatments(self) -> List[Treatment]:
        return [
            Treatment(
                name=name,
                knn_k=self.knn_k,
                rf_trees=self.rf_trees,
                budget=self.tuner.budget,
                init=self.tuner.init,
                pool=self.tuner.pool,
                de=self.tuner.de,
                tune_metric=self.tuner.metric,
                validation_fraction=self.tuner.validation_fraction,
            )
            for name in self.treatments
        ]

    def plan(self) -> PlanParams:
        return PlanParams(m=self.m, n=self.n, contemporary_repeats=self.contemporary_repeats)
