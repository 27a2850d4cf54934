"""Class balancing strategies applied to feature matrices.

All resamplers keep the original rows verbatim (first, in input order) and
append or drop rows deterministically under a fixed seed. ``original`` and
``stratified_resplit`` are identity at this level; a resplit changes dataset
membership and is resolved by the caller before features are extracted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateError, DomainError, ShapeError

STRATEGY_KINDS = (
    "original",
    "stratified_resplit",
    "smote",
    "oversample",
    "undersample",
)


@dataclass(frozen=True)
class BalanceStrategy:
    kind: str = "original"
    k_neighbors: int = 5

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise DomainError(f"unknown balance strategy {self.kind!r}")
        if self.k_neighbors < 1:
            raise DomainError("k_neighbors must be >= 1")


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ShapeError("X must be 2-D")
    if y.shape != (X.shape[0],):
        raise ShapeError("y length must match X rows")
    if X.shape[0] == 0:
        raise DomainError("cannot balance an empty dataset")
    return X, y


def _class_index(y: np.ndarray) -> dict:
    classes = sorted(set(y.tolist()))
    return {c: np.nonzero(y == c)[0] for c in classes}


def smote(
    X: np.ndarray, y: np.ndarray, k_neighbors: int = 5, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Oversample every minority class to the majority count with SMOTE.

    Synthetic rows are convex combinations x + u * (neighbor - x) with
    u ~ U(0, 1), the neighbor drawn among the k nearest same-class rows
    (Euclidean, k clamped to class_size - 1). Original rows come first,
    synthetics are appended grouped by class in sorted label order. A class
    of size 1 has no neighbors and raises DegenerateError.
    """
    X, y = _check_xy(X, y)
    if k_neighbors < 1:
        raise DomainError("k_neighbors must be >= 1")
    by_class = _class_index(y)
    target = max(len(ix) for ix in by_class.values())
    rng = np.random.default_rng(seed)
    new_rows: list[np.ndarray] = []
    new_labels: list = []
    for cls in sorted(by_class):
        ix = by_class[cls]
        need = target - len(ix)
        if need == 0:
            continue
        if len(ix) < 2:
            raise DegenerateError(
                f"smote: class {cls!r} has {len(ix)} sample(s); need >= 2"
            )
        k_eff = min(k_neighbors, len(ix) - 1)
        Xc = X[ix]
        d = cdist(Xc, Xc)
        np.fill_diagonal(d, np.inf)
        # k_eff nearest same-class neighbors per row
        nbrs = np.argsort(d, axis=1, kind="stable")[:, :k_eff]
        for _ in range(need):
            parent = int(rng.integers(len(ix)))
            nbr = int(nbrs[parent, int(rng.integers(k_eff))])
            u = rng.uniform()
            new_rows.append(Xc[parent] + u * (Xc[nbr] - Xc[parent]))
            new_labels.append(cls)
    if not new_rows:
        return X.copy(), y.copy()
    Xr = np.vstack([X, np.asarray(new_rows)])
    yr = np.concatenate([y, np.asarray(new_labels, dtype=y.dtype)])
    return Xr, yr


def random_oversample(
    X: np.ndarray, y: np.ndarray, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate minority rows (with replacement) up to the majority count."""
    X, y = _check_xy(X, y)
    by_class = _class_index(y)
    target = max(len(ix) for ix in by_class.values())
    rng = np.random.default_rng(seed)
    picks: list[int] = []
    for cls in sorted(by_class):
        ix = by_class[cls]
        need = target - len(ix)
        if need:
            picks.extend(int(ix[i]) for i in rng.integers(len(ix), size=need))
    if not picks:
        return X.copy(), y.copy()
    return np.vstack([X, X[picks]]), np.concatenate([y, y[picks]])


def random_undersample(
    X: np.ndarray, y: np.ndarray, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Drop majority rows (without replacement) down to the minority count.

    Surviving rows keep their original relative order, so a balanced input
    passes through unchanged.
    """
    X, y = _check_xy(X, y)
    by_class = _class_index(y)
    target = min(len(ix) for ix in by_class.values())
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for cls in sorted(by_class):
        ix = by_class[cls]
        if len(ix) > target:
            chosen = rng.choice(len(ix), size=target, replace=False)
            keep.extend(int(ix[i]) for i in chosen)
        else:
            keep.extend(int(i) for i in ix)
    keep.sort()
    return X[keep], y[keep]


def apply_strategy(
    strategy: BalanceStrategy, X: np.ndarray, y: np.ndarray, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Dispatch a strategy; identity kinds return copies of the input."""
    if strategy.kind == "smote":
        return smote(X, y, k_neighbors=strategy.k_neighbors, seed=seed)
    if strategy.kind == "oversample":
        return random_oversample(X, y, seed=seed)
    if strategy.kind == "undersample":
        return random_undersample(X, y, seed=seed)
    X, y = _check_xy(X, y)
    return X.copy(), y.copy()
