"""
Effort datasets: loading, cleaning and splitting.

Three provenances flow through the same `Dataset` type: COCOMO-style project
tables, classic feature tables, and supervised rows built from monthly
repository activity.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from effort_lab.activity import ACTIVITY_FEATURES, ActivitySeries
from effort_lab.exceptions import (
    DataError,
    DatasetParseError,
    EmptyDatasetError,
    IsolationError,
    MissingColumnError,
    MissingValueError,
    NonNumericCellError,
    RowCountError,
    SchemaError,
    SplitError,
    UnexpectedColumnError,
)

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    ORDINAL = "ordinal"
    CATEGORICAL = "categorical"
    EXCLUDED = "excluded"
    TARGET = "target"


class Provenance(str, Enum):
    COCOMO = "cocomo"
    CLASSIC = "classic"
    CONTEMPORARY = "contemporary"


class ColumnSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: ColumnKind


class FeatureSchema(BaseModel):
    """Column kinds of one dataset, as declared by its sidecar file."""

    model_config = ConfigDict(frozen=True)

    columns: Tuple[ColumnSpec, ...]
    target_name: str
    provenance: Provenance = Provenance.CLASSIC
    description: str = ""
    rows: Optional[int] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_columns(self) -> "FeatureSchema":
        names = [c.name for c in self.columns]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate column names: {', '.join(duplicates)}")
        targets = [c.name for c in self.columns if c.kind == ColumnKind.TARGET]
        if len(targets) != 1:
            raise ValueError(f"exactly one target column required, found {len(targets)}")
        if targets[0] != self.target_name:
            raise ValueError(f"target_name '{self.target_name}' does not match target column '{targets[0]}'")
        return self

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FeatureSchema":
        path = Path(path)
        try:
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise SchemaError(f"schema sidecar not found: {path}", context={"path": str(path)}) from exc
        except ValueError as exc:
            raise SchemaError(f"invalid schema sidecar {path}: {exc}", context={"path": str(path)}) from exc

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def feature_columns(self) -> List[ColumnSpec]:
        return [c for c in self.columns if c.kind not in (ColumnKind.EXCLUDED, ColumnKind.TARGET)]

    def kind_of(self, name: str) -> ColumnKind:
        for column in self.columns:
            if column.name == name:
                return column.kind
        raise SchemaError(f"unknown column '{name}'", context={"column": name})

    def with_exclusions(self, names: Sequence[str]) -> "FeatureSchema":
        excluded = set(names)
        columns = tuple(
            ColumnSpec(name=c.name, kind=ColumnKind.EXCLUDED) if c.name in excluded else c
            for c in self.columns
        )
        return self.model_copy(update={"columns": columns})


def _readonly(array: np.ndarray, dtype=float) -> np.ndarray:
    frozen = np.array(array, dtype=dtype, copy=True)
    frozen.setflags(write=False)
    return frozen


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus effort targets; immutable once built."""

    name: str
    schema: FeatureSchema
    features: np.ndarray
    targets: np.ndarray
    categories: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        features = _readonly(self.features)
        if features.ndim == 1:
            features = _readonly(features.reshape(-1, len(self.schema.feature_columns) or 1))
        targets = _readonly(self.targets).reshape(-1)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

        if targets.shape[0] < 1:
            raise EmptyDatasetError(f"empty dataset: {self.name}", context={"dataset": self.name})
        if features.shape[0] != targets.shape[0]:
            raise DataError(
                f"{self.name}: {features.shape[0]} feature rows but {targets.shape[0]} targets",
                context={"dataset": self.name},
            )
        if features.shape[1] != len(self.schema.feature_columns):
            raise DataError(
                f"{self.name}: {features.shape[1]} feature columns but schema declares "
                f"{len(self.schema.feature_columns)}",
                context={"dataset": self.name},
            )
        if not np.all(np.isfinite(features)) or not np.all(np.isfinite(targets)):
            raise DataError(f"{self.name}: non-finite values", context={"dataset": self.name})
        if self.provenance == Provenance.CONTEMPORARY:
            bad = np.flatnonzero(targets < 0)
        else:
            bad = np.flatnonzero(targets <= 0)
        if bad.size:
            raise DataError(
                f"{self.name}: target '{self.schema.target_name}' must be "
                f"{'non-negative' if self.provenance == Provenance.CONTEMPORARY else 'positive'}; "
                f"row {int(bad[0]) + 1} has {targets[bad[0]]}",
                context={"dataset": self.name, "row": int(bad[0]) + 1, "column": self.schema.target_name},
            )

    @property
    def provenance(self) -> Provenance:
        return self.schema.provenance

    @property
    def feature_names(self) -> List[str]:
        return [c.name for c in self.schema.feature_columns]

    @property
    def feature_kinds(self) -> List[ColumnKind]:
        return [c.kind for c in self.schema.feature_columns]

    @property
    def n_rows(self) -> int:
        return int(self.targets.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            name=self.name,
            schema=self.schema,
            features=self.features[idx],
            targets=self.targets[idx],
            categories=self.categories,
        )

    @classmethod
    def from_arrays(
        cls,
        features,
        targets,
        feature_names: Optional[Sequence[str]] = None,
        *,
        name: str = "arrays",
        provenance: Provenance = Provenance.CLASSIC,
        kinds: Optional[Sequence[ColumnKind]] = None,
        target_name: str = "effort",
    ) -> "Dataset":
        matrix = np.asarray(features, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(matrix.shape[1])]
        kinds = list(kinds) if kinds is not None else [ColumnKind.NUMERIC] * len(names)
        columns = tuple(ColumnSpec(name=n, kind=k) for n, k in zip(names, kinds))
        schema = FeatureSchema(
            columns=columns + (ColumnSpec(name=target_name, kind=ColumnKind.TARGET),),
            target_name=target_name,
            provenance=provenance,
        )
        return cls(name=name, schema=schema, features=matrix, targets=np.asarray(targets, dtype=float))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=self.feature_names)
        frame[self.schema.target_name] = self.targets
        return frame


class AccessSentinel:
    """Dataset view that counts reads and refuses them while sealed."""

    def __init__(self, dataset: Dataset) -> None:
        self._dataset = dataset
        self.reads = 0
        self.sealed = False

    def seal(self) -> None:
        self.sealed = True

    def unseal(self) -> None:
        self.sealed = False

    def _touch(self, what: str) -> None:
        if self.sealed:
            raise IsolationError(
                f"{what} of held-out rows of {self._dataset.name} read while sealed",
                context={"dataset": self._dataset.name},
            )
        self.reads += 1

    @property
    def n_rows(self) -> int:
        return self._dataset.n_rows

    @property
    def features(self) -> np.ndarray:
        self._touch("features")
        return self._dataset.features

    @property
    def targets(self) -> np.ndarray:
        self._touch("targets")
        return self._dataset.targets


# --- loading -----------------------------------------------------------------

def _reject_missing(raw: pd.Series, column: str, path: Path) -> None:
    empty = (raw == "").to_numpy()
    if empty.any():
        row = int(np.flatnonzero(empty)[0])
        raise MissingValueError(
            f"{path.name}: missing value in column '{column}' at row {row + 1}",
            context={"path": str(path), "row": row + 1, "column": column},
        )


def _parse_numeric(raw: pd.Series, column: str, path: Path) -> np.ndarray:
    _reject_missing(raw, column, path)
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NonNumericCellError(
            f"{path.name}: non-numeric value '{raw.iloc[row]}' in column '{column}' at row {row + 1}",
            context={"path": str(path), "row": row + 1, "column": column},
        )
    return values.to_numpy(dtype=float)


def _encode_categorical(raw: pd.Series, column: str, path: Path) -> Tuple[np.ndarray, Tuple[str, ...]]:
    _reject_missing(raw, column, path)
    levels: Dict[str, int] = {}
    codes = np.empty(len(raw), dtype=float)
    for i, value in enumerate(raw):
        codes[i] = levels.setdefault(value, len(levels))
    return codes, tuple(levels)


def load_csv(path: Union[str, Path], schema: FeatureSchema, *, name: Optional[str] = None) -> Dataset:
    """Read a headered CSV file and build the dataset described by `schema`."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as exc:
        raise DatasetParseError(f"dataset file not found: {path}", context={"path": str(path)}) from exc
    except pd.errors.EmptyDataError as exc:
        raise EmptyDatasetError(f"empty dataset: {path.name} has no header", context={"path": str(path)}) from exc

    frame.columns = [str(c).strip() for c in frame.columns]
    header = list(frame.columns)
    for column in schema.names:
        if column not in header:
            raise MissingColumnError(
                f"{path.name}: missing column '{column}'", context={"path": str(path), "column": column}
            )
    for column in header:
        if column not in schema.names:
            raise UnexpectedColumnError(
                f"{path.name}: column '{column}' is not declared by the schema",
                context={"path": str(path), "column": column},
            )
    if frame.empty:
        raise EmptyDatasetError("empty dataset", context={"path": str(path)})

    frame = frame.apply(lambda col: col.str.strip())
    columns: List[np.ndarray] = []
    categories: Dict[str, Tuple[str, ...]] = {}
    for spec in schema.feature_columns:
        if spec.kind == ColumnKind.CATEGORICAL:
            codes, levels = _encode_categorical(frame[spec.name], spec.name, path)
            categories[spec.name] = levels
            columns.append(codes)
        else:
            columns.append(_parse_numeric(frame[spec.name], spec.name, path))
    targets = _parse_numeric(frame[schema.target_name], schema.target_name, path)
    features = np.column_stack(columns) if columns else np.empty((len(frame), 0))

    dataset = Dataset(
        name=name or path.stem,
        schema=schema,
        features=features,
        targets=targets,
        categories=categories,
    )
    logger.debug("Loaded %s: %d rows x %d features", dataset.name, dataset.n_rows, dataset.n_features)
    return dataset


def list_bundled() -> List[str]:
    """Names of packaged datasets whose schema sidecar is shipped."""
    return sorted(p.name[: -len(".schema.json")] for p in DATA_DIR.glob("*.schema.json"))


def load_bundled(name: str) -> Dataset:
    schema_path = DATA_DIR / f"{name}.schema.json"
    csv_path = DATA_DIR / f"{name}.csv"
    if not schema_path.exists():
        raise DataError(f"unknown bundled dataset '{name}'", context={"dataset": name})
    if not csv_path.exists():
        raise DataError(
            f"bundled dataset '{name}' has a schema but no CSV; place {csv_path.name} in {DATA_DIR}",
            context={"dataset": name},
        )
    schema = FeatureSchema.load(schema_path)
    dataset = load_csv(csv_path, schema, name=name)
    if schema.rows is not None and dataset.n_rows != schema.rows:
        raise RowCountError(
            f"bundled dataset '{name}' has {dataset.n_rows} rows, expected {schema.rows}",
            context={"dataset": name, "rows": dataset.n_rows, "expected": schema.rows},
        )
    return dataset


def clean(raw: Dataset, exclusions: Sequence[str]) -> Dataset:
    """Drop `exclusions` from the visible predictors; rows are untouched."""
    if not exclusions:
        return raw
    for column in exclusions:
        kind = raw.schema.kind_of(column)
        if kind == ColumnKind.TARGET:
            raise SchemaError(
                f"cannot exclude target column '{column}' of {raw.name}",
                context={"dataset": raw.name, "column": column},
            )
    keep = [i for i, n in enumerate(raw.feature_names) if n not in set(exclusions)]
    schema = raw.schema.with_exclusions(exclusions)
    categories = {k: v for k, v in raw.categories.items() if k not in set(exclusions)}
    return Dataset(
        name=raw.name,
        schema=schema,
        features=raw.features[:, keep],
        targets=raw.targets,
        categories=categories,
    )


# --- splitting ---------------------------------------------------------------

class Fold(NamedTuple):
    repeat: int
    fold: int
    train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class SplitPlan:
    """M shuffles of the rows, each dealt into N near-equal bins."""

    m_repeats: int
    n_bins: int
    seed: int
    assignments: Tuple[np.ndarray, ...]

    @property
    def n_rows(self) -> int:
        return int(self.assignments[0].shape[0]) if self.assignments else 0

    def folds(self) -> Iterator[Fold]:
        for repeat, bins in enumerate(self.assignments):
            for fold in range(self.n_bins):
                test = np.flatnonzero(bins == fold)
                train = np.flatnonzero(bins != fold)
                yield Fold(repeat, fold, train, test)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.m_repeats}:{self.n_bins}:{self.seed}:{self.n_rows}".encode())
        for bins in self.assignments:
            h.update(np.ascontiguousarray(bins, dtype=np.int64).tobytes())
        return h.hexdigest()


def mxn_folds(data: Dataset, m: int, n: int, seed: int) -> SplitPlan:
    if n < 2:
        raise SplitError(f"need at least 2 bins, got n={n}", context={"n": n})
    if m < 1:
        raise SplitError(f"need at least 1 repeat, got m={m}", context={"m": m})
    if data.n_rows < n:
        raise SplitError(
            f"{data.name}: {data.n_rows} rows cannot fill {n} bins",
            context={"dataset": data.name, "rows": data.n_rows, "n": n},
        )
    if seed < 0:
        raise SplitError(f"seed must be non-negative, got {seed}", context={"seed": seed})

    assignments = []
    for stream in np.random.SeedSequence(seed).spawn(m):
        order = np.random.default_rng(stream).permutation(data.n_rows)
        bins = np.empty(data.n_rows, dtype=np.int64)
        bins[order] = np.arange(data.n_rows) % n
        assignments.append(_readonly(bins, dtype=np.int64))
    return SplitPlan(m_repeats=m, n_bins=n, seed=seed, assignments=tuple(assignments))


def lag_features(series: ActivitySeries, lag: int, target_feature: str = "monthly_commits") -> Dataset:
    """One supervised row per month t >= lag from the `lag` preceding months."""
    if lag < 1:
        raise SplitError(f"lag must be at least 1, got {lag}: no predictors", context={"lag": lag})
    if target_feature not in ACTIVITY_FEATURES:
        raise SchemaError(f"unknown activity feature '{target_feature}'", context={"column": target_feature})
    if len(series) < lag + 2:
        raise SplitError(
            f"{series.repo_id}: {len(series)} months is too short for lag {lag} "
            f"(need {lag + 2} for one training and one test row)",
            context={"repo": series.repo_id, "months": len(series), "lag": lag},
        )

    matrix = np.array([m.as_features() for m in series.months], dtype=float)
    target_index = ACTIVITY_FEATURES.index(target_feature)
    rows = np.array([matrix[t - lag:t].reshape(-1) for t in range(lag, len(series))])
    targets = matrix[lag:, target_index]
    names = [f"{feature}@t-{lag - offset}" for offset in range(lag) for feature in ACTIVITY_FEATURES]
    return Dataset.from_arrays(
        rows,
        targets,
        names,
        name=series.repo_id,
        provenance=Provenance.CONTEMPORARY,
        target_name=f"{target_feature}@t",
    )


def time_series_split(supervised: Dataset) -> Tuple[Dataset, Dataset]:
    if supervised.provenance != Provenance.CONTEMPORARY:
        raise SplitError(
            f"{supervised.name}: chronological split needs contemporary data, got {supervised.provenance.value}",
            context={"dataset": supervised.name},
        )
    if supervised.n_rows < 2:
        raise SplitError(
            f"{supervised.name}: {supervised.n_rows} row(s), need 2 for a chronological split",
            context={"dataset": supervised.name},
        )
    last = supervised.n_rows - 1
    return supervised.subset(range(last)), supervised.subset([last])


def validation_split(train: Dataset, fraction: float = 0.2, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Hold out part of the training rows for tuning; chronological for contemporary data."""
    if train.n_rows < 2:
        raise SplitError(
            f"{train.name}: {train.n_rows} training row(s) cannot be split for validation",
            context={"dataset": train.name},
        )
    n_val = min(max(1, int(math.floor(fraction * train.n_rows + 0.5))), train.n_rows - 1)
    if train.provenance == Provenance.CONTEMPORARY:
        cut = train.n_rows - n_val
        return train.subset(range(cut)), train.subset(range(cut, train.n_rows))
    order = np.random.default_rng(seed).permutation(train.n_rows)
    return train.subset(np.sort(order[n_val:])), train.subset(np.sort(order[:n_val]))
