"""
COCOMO-II effort equation with log-linear local calibration.

    effort = a * prod(EM_i) * kloc ** (b + 0.01 * sum(SF_j))

Ordinal ratings (1 = very low ... 6 = extra high) are mapped to numbers via the
shipped COCOMO-II.2000 rating table.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from effort_lab.datasets import DATA_DIR, Dataset, Provenance
from effort_lab.exceptions import CalibrationError, CocomoError, RatingDomainError, SchemaError
from effort_lab.learners import Estimator

logger = logging.getLogger(__name__)

SF_NAMES: Tuple[str, ...] = ("prec", "flex", "resl", "team", "pmat")
EM_NAMES: Tuple[str, ...] = (
    "rely", "cplx", "data", "ruse", "time", "stor", "pvol", "acap", "pcap",
    "pcon", "aexp", "plex", "ltex", "tool", "sced", "site", "docu",
)
SIZE_COLUMN = "kloc"
HOURS_PER_MONTH = 152
NOMINAL = 3
EM_BOUNDS = (0.7, 1.74)
DEFAULT_TABLE_PATH = DATA_DIR / "cocomo_ratings.json"


def to_hours(months: float) -> float:
    return months * HOURS_PER_MONTH


@dataclass(frozen=True)
class CocomoProject:
    scale_factors: Tuple[int, ...]
    effort_multipliers: Tuple[int, ...]
    kloc: float
    actual_months: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale_factors", tuple(int(v) for v in self.scale_factors))
        object.__setattr__(self, "effort_multipliers", tuple(int(v) for v in self.effort_multipliers))
        if len(self.scale_factors) != len(SF_NAMES):
            raise CocomoError(f"expected {len(SF_NAMES)} scale factors, got {len(self.scale_factors)}")
        if len(self.effort_multipliers) != len(EM_NAMES):
            raise CocomoError(f"expected {len(EM_NAMES)} effort multipliers, got {len(self.effort_multipliers)}")
        if not self.kloc > 0:
            raise CocomoError(f"kloc must be positive, got {self.kloc}", context={"column": SIZE_COLUMN})


class CocomoCoefficients(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: float = Field(default=2.94, gt=0)
    b: float = Field(default=0.91, gt=0)


DEFAULT_COEFFICIENTS = CocomoCoefficients()


@dataclass(frozen=True)
class RatingTable:
    """Ordinal -> numeric lookup for every scale factor and effort multiplier."""

    scale_factors: Mapping[str, Mapping[int, float]]
    effort_multipliers: Mapping[str, Mapping[int, float]]
    version: str = ""
    raw: bytes = b""

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "RatingTable":
        path = Path(path) if path is not None else DEFAULT_TABLE_PATH
        raw = path.read_bytes()
        payload = json.loads(raw.decode("utf-8"))

        def ordinals(block: Dict[str, Dict[str, float]]) -> Dict[str, Dict[int, float]]:
            return {name: {int(k): float(v) for k, v in values.items()} for name, values in block.items()}

        table = cls(
            scale_factors=ordinals(payload["scale_factors"]),
            effort_multipliers=ordinals(payload["effort_multipliers"]),
            version=payload.get("version", ""),
            raw=raw,
        )
        table.validate()
        return table

    def validate(self) -> None:
        missing = [n for n in SF_NAMES if n not in self.scale_factors]
        missing += [n for n in EM_NAMES if n not in self.effort_multipliers]
        if missing:
            raise CocomoError(f"rating table lacks attributes: {', '.join(missing)}")
        low, high = EM_BOUNDS
        for name, values in self.effort_multipliers.items():
            if values.get(NOMINAL) != 1.0:
                raise CocomoError(f"effort multiplier '{name}' does not map nominal to 1.0",
                                  context={"attribute": name})
            outside = [v for v in values.values() if not low <= v <= high]
            if outside:
                raise CocomoError(f"effort multiplier '{name}' has values outside [{low}, {high}]: {outside}",
                                  context={"attribute": name})

    def digest(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()

    @staticmethod
    def _lookup(block: Mapping[str, Mapping[int, float]], name: str, ordinal: int) -> float:
        try:
            return block[name][int(ordinal)]
        except KeyError as exc:
            raise RatingDomainError(
                f"rating {ordinal} is outside the table domain of '{name}' "
                f"(defined: {sorted(block.get(name, {}))})",
                context={"attribute": name, "ordinal": ordinal},
            ) from exc

    def sf_value(self, name: str, ordinal: int) -> float:
        return self._lookup(self.scale_factors, name, ordinal)

    def em_value(self, name: str, ordinal: int) -> float:
        return self._lookup(self.effort_multipliers, name, ordinal)

    def sf_sum(self, project: CocomoProject) -> float:
        return sum(self.sf_value(n, o) for n, o in zip(SF_NAMES, project.scale_factors))

    def em_product(self, project: CocomoProject) -> float:
        return math.prod(self.em_value(n, o) for n, o in zip(EM_NAMES, project.effort_multipliers))


def estimate(
    project: CocomoProject,
    coeffs: CocomoCoefficients = DEFAULT_COEFFICIENTS,
    tables: Optional[RatingTable] = None,
) -> float:
    """Person-months for one project."""
    tables = tables or RatingTable.load()
    exponent = coeffs.b + 0.01 * tables.sf_sum(project)
    return coeffs.a * tables.em_product(project) * project.kloc ** exponent


def local_calibrate(train: Sequence[CocomoProject], tables: Optional[RatingTable] = None) -> CocomoCoefficients:
    """Fit (a, b) by least squares in log space, scale-factor offsets held fixed."""
    tables = tables or RatingTable.load()
    if len(train) < 2:
        raise CalibrationError(f"calibration underdetermined: {len(train)} project(s), need 2")
    for i, project in enumerate(train):
        if project.actual_months is None or not project.actual_months > 0:
            raise CalibrationError(
                f"project {i} has no positive actual effort ({project.actual_months})",
                context={"row": i},
            )
    kloc = np.array([p.kloc for p in train], dtype=float)
    if np.all(kloc == kloc[0]):
        raise CalibrationError("calibration underdetermined: all projects have the same kloc")

    x = np.log(kloc)
    y = np.array([
        math.log(p.actual_months) - sum(math.log(tables.em_value(n, o)) for n, o in zip(EM_NAMES, p.effort_multipliers))
        for p in train
    ])
    c = np.array([0.01 * tables.sf_sum(p) for p in train])

    design = np.column_stack([np.ones_like(x), x])
    (log_a, b), *_ = np.linalg.lstsq(design, y - c * x, rcond=None)
    if not b > 0:
        raise CalibrationError(
            f"calibrated exponent b={b:.4g} is not positive; effort would shrink with size",
            context={"b": float(b)},
        )
    coeffs = CocomoCoefficients(a=float(math.exp(log_a)), b=float(b))
    logger.debug("Local calibration on %d projects: a=%.4f b=%.4f", len(train), coeffs.a, coeffs.b)
    return coeffs


def _column_index(names: List[str]) -> Dict[str, int]:
    needed = list(SF_NAMES) + list(EM_NAMES) + [SIZE_COLUMN]
    missing = [n for n in needed if n not in names]
    if missing:
        raise SchemaError(f"COCOMO layout needs columns: {', '.join(missing)}", context={"columns": missing})
    return {n: names.index(n) for n in needed}


def _projects_from_rows(rows: np.ndarray, index: Dict[str, int], actuals: Optional[np.ndarray]) -> List[CocomoProject]:
    projects = []
    for i, row in enumerate(rows):
        projects.append(CocomoProject(
            scale_factors=tuple(int(round(row[index[n]])) for n in SF_NAMES),
            effort_multipliers=tuple(int(round(row[index[n]])) for n in EM_NAMES),
            kloc=float(row[index[SIZE_COLUMN]]),
            actual_months=None if actuals is None else float(actuals[i]),
        ))
    return projects


def projects_from_dataset(data: Dataset) -> List[CocomoProject]:
    if data.provenance != Provenance.COCOMO:
        raise SchemaError(f"{data.name} is not a COCOMO dataset", context={"dataset": data.name})
    return _projects_from_rows(data.features, _column_index(data.feature_names), data.targets)


class CocomoEstimator(Estimator):
    """COCOMO-II with (a, b) locally calibrated on the training rows."""

    name = "COCOMO-II"

    def __init__(self, tables: Optional[RatingTable] = None) -> None:
        self.tables = tables or RatingTable.load()
        self.coefficients: Optional[CocomoCoefficients] = None
        self._index: Dict[str, int] = {}

    def fit(self, data: Dataset) -> "CocomoEstimator":
        self._index = _column_index(data.feature_names)
        self.n_features = data.n_features
        self.coefficients = local_calibrate(projects_from_dataset(data), self.tables)
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        rows = self._check_rows(features)
        projects = _projects_from_rows(rows, self._index, None)
        return np.array([estimate(p, self.coefficients, self.tables) for p in projects])
