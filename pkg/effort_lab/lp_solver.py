"""
Dense-tableau two-phase simplex and the LP4EE estimator built on it.

LP4EE fits effort = a_1*x_1 + ... + a_F*x_F (no intercept) by minimising the
sum of absolute residuals:

    min  sum_i (u_i + v_i)
    s.t. sum_j (p_j - q_j) * x_ij + u_i - v_i = y_i,   p, q, u, v >= 0
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from effort_lab.datasets import Dataset
from effort_lab.exceptions import (
    DimensionMismatchError,
    EmptyDatasetError,
    InfeasibleError,
    LinearProgramError,
    UnboundedError,
)
from effort_lab.learners import Estimator

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9
MAX_PIVOTS = 100_000


@dataclass(frozen=True)
class LinearProgram:
    """minimise c.x subject to A_eq x = b_eq; x >= 0 except where `free` is set."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    free: Tuple[bool, ...] = ()

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=float).reshape(-1)
        A = np.asarray(self.A_eq, dtype=float)
        b = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(1, -1)
        if A.shape[0] != b.shape[0]:
            raise LinearProgramError(f"constraint matrix has {A.shape[0]} rows but {b.shape[0]} right-hand sides")
        if A.shape[1] != c.shape[0]:
            raise LinearProgramError(f"constraint matrix has {A.shape[1]} columns but {c.shape[0]} costs")
        free = tuple(self.free) if self.free else (False,) * c.shape[0]
        if len(free) != c.shape[0]:
            raise LinearProgramError(f"{len(free)} sign markers for {c.shape[0]} variables")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)
        object.__setattr__(self, "free", free)

    @property
    def n_variables(self) -> int:
        return int(self.c.shape[0])


class _Tableau:
    """Rows [B^-1 A | B^-1 b] with an explicit basis; Bland's rule throughout."""

    def __init__(self, T: np.ndarray, basis: List[int], tol: float) -> None:
        self.T = T
        self.basis = basis
        self.tol = tol
        self.pivots = 0

    def objective(self, cost: np.ndarray) -> float:
        return float(cost[self.basis] @ self.T[:, -1])

    def pivot(self, row: int, col: int) -> None:
        self.T[row] /= self.T[row, col]
        for i in range(self.T.shape[0]):
            if i != row and self.T[i, col] != 0.0:
                self.T[i] -= self.T[i, col] * self.T[row]
        self.basis[row] = col
        self.pivots += 1
        if self.pivots > MAX_PIVOTS:
            raise LinearProgramError(f"simplex exceeded {MAX_PIVOTS} pivots")

    def run(self, cost: np.ndarray, columns: int, trace: Optional[List[float]] = None) -> None:
        while True:
            if trace is not None:
                trace.append(self.objective(cost))
            reduced = cost[:columns] - cost[self.basis] @ self.T[:, :columns]
            entering = np.flatnonzero(reduced < -self.tol)
            if entering.size == 0:
                return
            col = int(entering[0])
            column = self.T[:, col]
            rows = np.flatnonzero(column > self.tol)
            if rows.size == 0:
                raise UnboundedError(f"objective unbounded along variable {col}", context={"variable": col})
            ratios = self.T[rows, -1] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + self.tol * max(1.0, abs(best))]
            row = int(min(tied, key=lambda r: self.basis[r]))
            self.pivot(row, col)


def _crash_basis(A: np.ndarray) -> List[Optional[int]]:
    """Per row, the lowest-index unit column usable as an initial basic variable."""
    basis: List[Optional[int]] = [None] * A.shape[0]
    for j in range(A.shape[1]):
        column = A[:, j]
        nonzero = np.flatnonzero(column)
        if nonzero.size == 1 and column[nonzero[0]] == 1.0:
            i = int(nonzero[0])
            if basis[i] is None:
                basis[i] = j
    return basis


def simplex_solve(
    lp: LinearProgram,
    *,
    tol: float = TOLERANCE,
    trace: Optional[List[float]] = None,
) -> Tuple[np.ndarray, float]:
    """Basic optimal solution and objective value; `trace` collects phase-two objectives per pivot."""
    # free variables become x = x+ - x-
    free_idx = [j for j, f in enumerate(lp.free) if f]
    A = np.hstack([lp.A_eq, -lp.A_eq[:, free_idx]]) if free_idx else lp.A_eq.copy()
    cost = np.concatenate([lp.c, -lp.c[free_idx]]) if free_idx else lp.c.copy()
    b = lp.b_eq.copy()
    n = A.shape[1]

    negative = b < 0
    A[negative] *= -1.0
    b[negative] *= -1.0

    crash = _crash_basis(A)
    missing = [i for i, j in enumerate(crash) if j is None]
    m = A.shape[0]
    artificial = np.zeros((m, len(missing)))
    for k, i in enumerate(missing):
        artificial[i, k] = 1.0
    T = np.hstack([A, artificial, b.reshape(-1, 1)])
    basis = [j if j is not None else n + missing.index(i) for i, j in enumerate(crash)]
    tableau = _Tableau(T, basis, tol)

    if missing:
        phase_one = np.concatenate([np.zeros(n), np.ones(len(missing))])
        tableau.run(phase_one, n + len(missing))
        infeasibility = tableau.objective(phase_one)
        if infeasibility > tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            raise InfeasibleError(
                f"no feasible point: phase one stopped at {infeasibility:.3g}",
                context={"infeasibility": infeasibility},
            )
        # drive remaining artificials out; rows with nothing to pivot on are redundant
        keep = []
        for i in range(m):
            if tableau.basis[i] < n:
                keep.append(i)
                continue
            candidates = np.flatnonzero(np.abs(tableau.T[i, :n]) > tol)
            if candidates.size:
                tableau.pivot(i, int(candidates[0]))
                keep.append(i)
        tableau.T = tableau.T[keep]
        tableau.basis = [tableau.basis[i] for i in keep]

    tableau.T = np.hstack([tableau.T[:, :n], tableau.T[:, -1:]])
    tableau.run(cost, n, trace)

    x = np.zeros(n)
    for i, j in enumerate(tableau.basis):
        x[j] = tableau.T[i, -1]
    objective = float(cost @ x)
    if free_idx:
        x_split = x[: lp.n_variables].copy()
        x_split[free_idx] -= x[lp.n_variables:]
        x = x_split
    logger.debug("simplex: %d pivots, objective %.6g", tableau.pivots, objective)
    return x, objective


# --- LP4EE -----------------------------------------------------------------------

@dataclass(frozen=True)
class L1Model:
    coefficients: Tuple[float, ...]
    sar: float
    feature_names: Tuple[str, ...] = field(default=())

    @property
    def n_features(self) -> int:
        return len(self.coefficients)

    def predict(self, features) -> np.ndarray:
        rows = np.asarray(features, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"LP4EE: rows have {rows.shape[1]} features, model has {self.n_features} coefficients",
                context={"expected": self.n_features, "got": int(rows.shape[1])},
            )
        return rows @ np.asarray(self.coefficients)


def lp4ee_program(features: np.ndarray, targets: np.ndarray) -> LinearProgram:
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    rows, n_features = X.shape
    identity = np.eye(rows)
    A = np.hstack([X, -X, identity, -identity])
    c = np.concatenate([np.zeros(2 * n_features), np.ones(2 * rows)])
    return LinearProgram(c=c, A_eq=A, b_eq=y)


def lp4ee_train(train: Dataset) -> L1Model:
    """Least-absolute-residual coefficients for raw features, no intercept."""
    if train.n_rows < 1:
        raise EmptyDatasetError(f"LP4EE: empty training data {train.name}", context={"dataset": train.name})
    if train.n_features < 1:
        raise LinearProgramError(f"LP4EE: {train.name} has no predictors", context={"dataset": train.name})
    x, objective = simplex_solve(lp4ee_program(train.features, train.targets))
    f = train.n_features
    coefficients = x[:f] - x[f:2 * f]
    model = L1Model(
        coefficients=tuple(float(a) for a in coefficients),
        sar=max(0.0, objective),
        feature_names=tuple(train.feature_names),
    )
    logger.debug("LP4EE on %s: SAR %.6g", train.name, model.sar)
    return model


def lp4ee_predict(model: L1Model, row) -> float:
    values = np.asarray(row, dtype=float).reshape(-1)
    return float(model.predict(values)[0])


def sar(model: L1Model, data: Dataset) -> float:
    """Sum of absolute residuals of `model` on `data`."""
    return float(np.abs(data.targets - model.predict(data.features)).sum())


class Lp4eeEstimator(Estimator):
    name = "LP4EE"

    def __init__(self) -> None:
        self.model: Optional[L1Model] = None

    def fit(self, data: Dataset) -> "Lp4eeEstimator":
        self.model = lp4ee_train(data)
        self.n_features = data.n_features
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        rows = self._check_rows(features)
        return self.model.predict(rows)
