"""
Estimators sharing one fit/predict contract: CART, Random Forest, KNN and ATLM.

Every estimator is trained on a `Dataset` and predicts from a raw feature
matrix laid out like the training schema. Trained models are never mutated
by prediction, so they can be shared across threads.
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats as sps

from effort_lab.datasets import ColumnKind, Dataset
from effort_lab.exceptions import CollinearPredictorsError, DimensionMismatchError, EstimatorError

logger = logging.getLogger(__name__)


class Estimator(ABC):
    """Common train/predict contract used by the harness."""

    name: str = "estimator"
    n_features: Optional[int] = None

    @abstractmethod
    def fit(self, data: Dataset) -> "Estimator":
        ...

    @abstractmethod
    def predict(self, features: np.ndarray) -> np.ndarray:
        ...

    def _check_rows(self, features) -> np.ndarray:
        rows = np.asarray(features, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if self.n_features is None:
            raise EstimatorError(f"{self.name}: predict called before fit")
        if rows.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"{self.name}: rows have {rows.shape[1]} features, model was trained on {self.n_features}",
                context={"expected": self.n_features, "got": int(rows.shape[1])},
            )
        return rows


def _as_row(row, n_features: int, who: str) -> np.ndarray:
    values = np.asarray(row, dtype=float).reshape(-1)
    if values.shape[0] != n_features:
        raise DimensionMismatchError(
            f"{who}: row has {values.shape[0]} features, expected {n_features}",
            context={"expected": n_features, "got": int(values.shape[0])},
        )
    return values


# --- CART ----------------------------------------------------------------------

class CartConfig(BaseModel):
    """CART hyperparameters; bounds are the tuning ranges."""

    model_config = ConfigDict(frozen=True)

    max_features_fraction: float = Field(default=1.0, ge=0.01, le=1.0)
    max_depth: Optional[int] = Field(default=None, ge=1, le=12)
    min_sample_split: int = Field(default=2, ge=0, le=20)
    min_samples_leaf: int = Field(default=1, ge=1, le=12)

    @property
    def effective_min_split(self) -> int:
        return max(2, self.min_sample_split)

    def eligible_count(self, n_features: int) -> int:
        # round first so 0.3 * 10 does not become 4
        return max(1, min(n_features, math.ceil(round(self.max_features_fraction * n_features, 9))))


@dataclass(frozen=True)
class CartLeaf:
    value: float
    support: int


@dataclass(frozen=True)
class CartSplit:
    feature: int
    threshold: float
    left: "CartNode"
    right: "CartNode"
    support: int


CartNode = Union[CartLeaf, CartSplit]


@dataclass(frozen=True)
class CartTree:
    root: CartNode
    n_features: int
    feature_names: Tuple[str, ...] = ()

    def _name(self, index: int) -> str:
        return self.feature_names[index] if self.feature_names else f"x{index}"

    def predict(self, features) -> np.ndarray:
        rows = np.asarray(features, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"CART: rows have {rows.shape[1]} features, tree was grown on {self.n_features}",
                context={"expected": self.n_features, "got": int(rows.shape[1])},
            )
        out = np.empty(rows.shape[0])
        self._route(self.root, rows, np.arange(rows.shape[0]), out)
        return out

    def _route(self, node: CartNode, rows: np.ndarray, idx: np.ndarray, out: np.ndarray) -> None:
        if isinstance(node, CartLeaf):
            out[idx] = node.value
            return
        go_left = rows[idx, node.feature] <= node.threshold
        if go_left.any():
            self._route(node.left, rows, idx[go_left], out)
        if (~go_left).any():
            self._route(node.right, rows, idx[~go_left], out)

    def leaves(self) -> List[CartLeaf]:
        found: List[CartLeaf] = []
        stack: List[CartNode] = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, CartLeaf):
                found.append(node)
            else:
                stack.extend((node.right, node.left))
        return found

    def depth(self) -> int:
        def walk(node: CartNode) -> int:
            if isinstance(node, CartLeaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def features_used(self) -> Set[str]:
        """Names of features tested by at least one internal node."""
        used: Set[str] = set()
        stack: List[CartNode] = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, CartSplit):
                used.add(self._name(node.feature))
                stack.extend((node.left, node.right))
        return used

    def to_text(self) -> str:
        lines: List[str] = []

        def walk(node: CartNode, indent: str) -> None:
            if isinstance(node, CartLeaf):
                lines.append(f"{indent}-> {node.value:.6g} (n={node.support})")
                return
            name = self._name(node.feature)
            lines.append(f"{indent}if {name} <= {node.threshold:.6g}:  (n={node.support})")
            walk(node.left, indent + "|   ")
            lines.append(f"{indent}else:  # {name} > {node.threshold:.6g}")
            walk(node.right, indent + "|   ")

        walk(self.root, "")
        return "\n".join(lines)


def split_score(left: np.ndarray, right: np.ndarray) -> float:
    """Size-weighted standard deviation of the two children."""
    n = left.size + right.size
    return float((math.sqrt(np.var(left)) * left.size + math.sqrt(np.var(right)) * right.size) / n)


def _best_split_on(x: np.ndarray, y: np.ndarray, min_leaf: int) -> Optional[Tuple[float, float]]:
    """(score, threshold) of the best split on one feature, lowest threshold on ties."""
    n = y.size
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    centered = ys - ys.mean()
    c1 = np.cumsum(centered)
    c2 = np.cumsum(centered * centered)

    sizes = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (sizes >= min_leaf) & (n - sizes >= min_leaf)
    if not valid.any():
        return None
    left_n = sizes.astype(float)
    right_n = n - left_n
    left_var = np.clip(c2[:-1] / left_n - (c1[:-1] / left_n) ** 2, 0.0, None)
    right_sum = c1[-1] - c1[:-1]
    right_var = np.clip((c2[-1] - c2[:-1]) / right_n - (right_sum / right_n) ** 2, 0.0, None)
    scores = (np.sqrt(left_var) * left_n + np.sqrt(right_var) * right_n) / n
    scores = np.where(valid, scores, np.inf)
    i = int(np.argmin(scores))
    return float(scores[i]), float((xs[i] + xs[i + 1]) / 2.0)


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    config: CartConfig,
    rng: np.random.Generator,
    depth: int,
) -> CartNode:
    n = y.size
    leaf = CartLeaf(value=float(y.mean()), support=int(n))
    if n < config.effective_min_split or np.ptp(y) == 0.0:
        return leaf
    if config.max_depth is not None and depth >= config.max_depth:
        return leaf

    n_features = X.shape[1]
    k = config.eligible_count(n_features)
    if k < n_features:
        permutation = rng.permutation(n_features)
        eligible, reserve = sorted(permutation[:k].tolist()), permutation[k:].tolist()
    else:
        eligible, reserve = list(range(n_features)), []

    best: Optional[Tuple[float, int, float]] = None
    for f in eligible:
        found = _best_split_on(X[:, f], y, config.min_samples_leaf)
        if found is not None and (best is None or found[0] < best[0]):
            best = (found[0], f, found[1])
    # eligible features that cannot split give way to the reserve, in permutation order
    for f in reserve:
        if best is not None:
            break
        found = _best_split_on(X[:, f], y, config.min_samples_leaf)
        if found is not None:
            best = (found[0], f, found[1])
    if best is None:
        return leaf

    _, feature, threshold = best
    mask = X[:, feature] <= threshold
    return CartSplit(
        feature=feature,
        threshold=threshold,
        left=_grow(X[mask], y[mask], config, rng, depth + 1),
        right=_grow(X[~mask], y[~mask], config, rng, depth + 1),
        support=int(n),
    )


def grow_tree(
    features: np.ndarray,
    targets: np.ndarray,
    config: Optional[CartConfig] = None,
    seed: Union[int, np.random.Generator, np.random.SeedSequence] = 0,
    feature_names: Sequence[str] = (),
) -> CartTree:
    """Grow a tree on raw arrays."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if y.size == 0:
        raise EstimatorError("CART: empty training data")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    root = _grow(X, y, config or CartConfig(), rng, 0)
    return CartTree(root=root, n_features=X.shape[1], feature_names=tuple(feature_names))


def cart_train(train: Dataset, config: Optional[CartConfig] = None, seed: int = 0) -> CartTree:
    return grow_tree(train.features, train.targets, config, seed, train.feature_names)


def cart_predict(tree: CartTree, row) -> float:
    return float(tree.predict(_as_row(row, tree.n_features, "CART"))[0])


class CartEstimator(Estimator):
    name = "CART"

    def __init__(self, config: Optional[CartConfig] = None, seed: int = 0) -> None:
        self.config = config or CartConfig()
        self.seed = seed
        self.tree: Optional[CartTree] = None

    def fit(self, data: Dataset) -> "CartEstimator":
        self.tree = cart_train(data, self.config, self.seed)
        self.n_features = data.n_features
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        rows = self._check_rows(features)
        return self.tree.predict(rows)


# --- Random Forest ---------------------------------------------------------------

@dataclass(frozen=True)
class Forest:
    trees: Tuple[CartTree, ...]

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, features) -> np.ndarray:
        return np.mean([tree.predict(features) for tree in self.trees], axis=0)


def rf_train(
    train: Dataset,
    trees: int = 100,
    seed: int = 0,
    *,
    bootstrap: bool = True,
    max_features_fraction: Optional[float] = None,
) -> Forest:
    """Bagged CART trees, each considering sqrt(F) features per node unless overridden."""
    if trees < 1:
        raise EstimatorError(f"RF: need at least one tree, got {trees}", context={"trees": trees})
    n, n_features = train.n_rows, train.n_features
    fraction = max_features_fraction
    if fraction is None:
        fraction = max(0.01, math.sqrt(n_features) / n_features) if n_features else 1.0
    config = CartConfig(max_features_fraction=min(1.0, fraction))

    grown = []
    for stream in np.random.SeedSequence(seed).spawn(trees):
        rng = np.random.default_rng(stream)
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        grown.append(grow_tree(train.features[idx], train.targets[idx], config, rng, train.feature_names))
    return Forest(trees=tuple(grown))


def rf_predict(forest: Forest, row) -> float:
    return float(forest.predict(_as_row(row, forest.n_features, "RF"))[0])


class RandomForestEstimator(Estimator):
    name = "RF"

    def __init__(self, trees: int = 100, seed: int = 0) -> None:
        self.trees = trees
        self.seed = seed
        self.forest: Optional[Forest] = None

    def fit(self, data: Dataset) -> "RandomForestEstimator":
        self.forest = rf_train(data, self.trees, self.seed)
        self.n_features = data.n_features
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        rows = self._check_rows(features)
        return self.forest.predict(rows)


# --- KNN -------------------------------------------------------------------------

def _knn_batch(train: Dataset, rows: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise EstimatorError(f"KNN: k must be at least 1, got {k}", context={"k": k})
    if k > train.n_rows:
        raise EstimatorError(
            f"KNN: k={k} exceeds the {train.n_rows} training rows of {train.name}",
            context={"k": k, "rows": train.n_rows},
        )
    X = train.features
    low = X.min(axis=0)
    span = X.max(axis=0) - low
    span[span == 0] = 1.0
    scaled_train = (X - low) / span
    scaled_rows = (rows - low) / span
    distances = np.sqrt(((scaled_rows[:, None, :] - scaled_train[None, :, :]) ** 2).sum(axis=2))
    nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
    return train.targets[nearest].mean(axis=1)


def knn_predict(train: Dataset, row, k: int = 5) -> float:
    """Mean effort of the k nearest rows after min-max scaling; ties go to the lower row index."""
    return float(_knn_batch(train, _as_row(row, train.n_features, "KNN").reshape(1, -1), k)[0])


class KnnEstimator(Estimator):
    name = "KNN"

    def __init__(self, k: int = 5) -> None:
        self.k = k
        self.train: Optional[Dataset] = None

    def fit(self, data: Dataset) -> "KnnEstimator":
        self.train = data
        self.n_features = data.n_features
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        rows = self._check_rows(features)
        return _knn_batch(self.train, rows, self.k)


# --- ATLM ------------------------------------------------------------------------

class Transform(str, Enum):
    IDENTITY = "identity"
    SQRT = "sqrt"
    LOG = "log"


@dataclass(frozen=True)
class PredictorTransform:
    """Transform of one continuous column; `floor` is the training minimum inputs are clamped to."""

    column: int
    transform: Transform
    floor: float
    shifted: bool = False

    def apply(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=float)
        if self.transform == Transform.IDENTITY:
            return x
        x = np.maximum(x, self.floor)
        if self.transform == Transform.SQRT:
            return np.sqrt(x - self.floor) if self.shifted else np.sqrt(x)
        return np.log(x - self.floor + 1.0) if self.shifted else np.log(x)


@dataclass(frozen=True)
class DummyExpansion:
    column: int
    levels: Tuple[float, ...]

    def apply(self, values: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=float)
        return np.column_stack([x == level for level in self.levels[1:]]).astype(float)


def _abs_skew(values: np.ndarray) -> float:
    s = sps.skew(values, bias=True)
    return 0.0 if not np.isfinite(s) else abs(float(s))


def choose_transform(column: int, values: np.ndarray) -> PredictorTransform:
    """Identity, sqrt or log: whichever leaves the smallest absolute skewness."""
    floor = float(values.min())
    shifted = floor <= 0
    candidates = [
        PredictorTransform(column, Transform.IDENTITY, floor),
        PredictorTransform(column, Transform.SQRT, floor, shifted),
        PredictorTransform(column, Transform.LOG, floor, shifted),
    ]
    best = candidates[0]
    best_skew = _abs_skew(best.apply(values))
    for candidate in candidates[1:]:
        skew = _abs_skew(candidate.apply(values))
        if skew < best_skew:
            best, best_skew = candidate, skew
    return best


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: Tuple[float, ...]
    transforms: Tuple[PredictorTransform, ...]
    dummies: Tuple[DummyExpansion, ...]
    n_features: int

    def design(self, rows: np.ndarray) -> np.ndarray:
        blocks = [t.apply(rows[:, t.column]).reshape(-1, 1) for t in self.transforms]
        blocks += [d.apply(rows[:, d.column]) for d in self.dummies if len(d.levels) > 1]
        if not blocks:
            return np.empty((rows.shape[0], 0))
        return np.column_stack(blocks)

    def predict(self, features) -> np.ndarray:
        rows = np.asarray(features, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"ATLM: rows have {rows.shape[1]} features, model was fitted on {self.n_features}",
                context={"expected": self.n_features, "got": int(rows.shape[1])},
            )
        return self.intercept + self.design(rows) @ np.asarray(self.coefficients, dtype=float)


def atlm_train(train: Dataset, *, force_identity: bool = False) -> LinearModel:
    """Skewness-guided predictor transforms, categorical dummies, then OLS."""
    X = train.features
    transforms: List[PredictorTransform] = []
    dummies: List[DummyExpansion] = []
    for column, kind in enumerate(train.feature_kinds):
        values = X[:, column]
        if kind == ColumnKind.CATEGORICAL:
            levels = tuple(float(v) for v in np.unique(values))
            if len(levels) > 1:
                dummies.append(DummyExpansion(column, levels))
            continue
        if np.ptp(values) == 0.0:
            continue
        if force_identity:
            transforms.append(PredictorTransform(column, Transform.IDENTITY, float(values.min())))
        else:
            transforms.append(choose_transform(column, values))

    draft = LinearModel(0.0, (), tuple(transforms), tuple(dummies), train.n_features)
    predictors = draft.design(X)
    n_predictors = predictors.shape[1]
    if train.n_rows <= n_predictors:
        raise EstimatorError(
            f"ATLM: {train.n_rows} rows cannot fit {n_predictors} predictors of {train.name}",
            context={"rows": train.n_rows, "predictors": n_predictors},
        )
    design = np.column_stack([np.ones(train.n_rows), predictors])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise CollinearPredictorsError(
            f"collinear predictors in {train.name}", context={"dataset": train.name}
        )
    beta, *_ = np.linalg.lstsq(design, train.targets, rcond=None)
    logger.debug(
        "ATLM on %s: %s",
        train.name,
        {train.feature_names[t.column]: t.transform.value for t in transforms},
    )
    return LinearModel(
        intercept=float(beta[0]),
        coefficients=tuple(float(b) for b in beta[1:]),
        transforms=tuple(transforms),
        dummies=tuple(dummies),
        n_features=train.n_features,
    )


def atlm_predict(model: LinearModel, row) -> float:
    return float(model.predict(_as_row(row, model.n_features, "ATLM"))[0])


class AtlmEstimator(Estimator):
    name = "ATLM"

    def __init__(self) -> None:
        self.model: Optional[LinearModel] = None

    def fit(self, data: Dataset) -> "AtlmEstimator":
        self.model = atlm_train(data)
        self.n_features = data.n_features
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        rows = self._check_rows(features)
        return self.model.predict(rows)

