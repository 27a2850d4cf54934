"""CART-style decision trees on flat numpy arrays.

One growth engine serves four models: the single classification tree
(exhaustive splits), bagged forests (exhaustive splits over per-node feature
subsets), extremely randomized trees (one uniform-random threshold per
candidate feature) and the boosting regression tree (exhaustive variance
splits). Trees are stored as parallel arrays and route whole matrices
level-synchronously, so prediction cost is O(depth) vectorized passes.
"""
from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from ..errors import DomainError
from .base import BaseClassifier, one_hot

_LN2 = np.log(2.0)

CRITERIA = ("gini", "entropy")


def _impurity(counts: np.ndarray, criterion: str) -> np.ndarray:
    """Impurity from class counts along the last axis (0 log 0 := 0)."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=-1, keepdims=True)
    p = counts / np.maximum(n, 1.0)
    if criterion == "gini":
        return 1.0 - (p * p).sum(axis=-1)
    return -xlogy(p, p).sum(axis=-1) / _LN2


def _best_split_class(X, codes, K, criterion, min_leaf):
    """Exhaustive scan over every feature and threshold.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values. Ties resolve to the lowest feature index, then the lowest
    threshold. Returns (feature, threshold, weighted_child_impurity) or None.
    """
    n = X.shape[0]
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    Ys = one_hot(codes, K)[order]                      # (n, F, K)
    left = np.cumsum(Ys, axis=0)[:-1]                  # split after row i
    totals = np.bincount(codes, minlength=K).astype(float)
    right = totals[None, None, :] - left
    left_n = np.arange(1, n, dtype=float)[:, None]
    right_n = n - left_n
    w = (left_n * _impurity(left, criterion)
         + right_n * _impurity(right, criterion)) / n
    valid = (Xs[1:] > Xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
    w = np.where(valid, w, np.inf)
    flat = w.T.reshape(-1)                             # feature-major order
    best = int(np.argmin(flat))
    if not np.isfinite(flat[best]):
        return None
    f, i = divmod(best, n - 1)
    thr = 0.5 * (Xs[i, f] + Xs[i + 1, f])
    return int(f), float(thr), float(flat[best])


def _best_split_reg(X, yv, min_leaf):
    """Exhaustive variance-reduction scan; same tie-break as classification."""
    n = X.shape[0]
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    ys = yv[order]
    S = np.cumsum(ys, axis=0)[:-1]
    SS = np.cumsum(ys * ys, axis=0)[:-1]
    s_tot = float(yv.sum())
    ss_tot = float((yv * yv).sum())
    left_n = np.arange(1, n, dtype=float)[:, None]
    right_n = n - left_n
    sse = (SS - S * S / left_n) + ((ss_tot - SS) - (s_tot - S) ** 2 / right_n)
    valid = (Xs[1:] > Xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
    sse = np.where(valid, sse, np.inf)
    flat = sse.T.reshape(-1)
    best = int(np.argmin(flat))
    if not np.isfinite(flat[best]):
        return None
    f, i = divmod(best, n - 1)
    thr = 0.5 * (Xs[i, f] + Xs[i + 1, f])
    return int(f), float(thr), float(flat[best]) / n


def _best_split_random(X, codes, K, criterion, min_leaf, feat_idx, rng):
    """One uniform-random threshold per candidate feature; best candidate wins.

    Constant features are skipped; candidate order (the rng draw order)
    breaks exact ties, which keeps the choice deterministic per seed.
    """
    n = X.shape[0]
    sub = X[:, feat_idx]
    lo = sub.min(axis=0)
    hi = sub.max(axis=0)
    spread = hi > lo
    if not spread.any():
        return None
    thr = rng.uniform(lo, hi)
    mask = sub <= thr
    left = mask.T.astype(float) @ one_hot(codes, K)    # (C, K)
    totals = np.bincount(codes, minlength=K).astype(float)
    right = totals[None, :] - left
    ln = left.sum(axis=1)
    rn = right.sum(axis=1)
    w = (ln * _impurity(left, criterion) + rn * _impurity(right, criterion)) / n
    valid = spread & (ln >= min_leaf) & (rn >= min_leaf)
    w = np.where(valid, w, np.inf)
    c = int(np.argmin(w))
    if not np.isfinite(w[c]):
        return None
    return int(feat_idx[c]), float(thr[c]), float(w[c])


class _Tree:
    """Flat-array tree; feature < 0 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "depth_")

    def __init__(self, feature, threshold, left, right, value, depth):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.depth_ = int(depth)

    def leaf_ids(self, X: np.ndarray) -> np.ndarray:
        cur = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[cur]
            internal = f >= 0
            if not internal.any():
                return cur
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[cur]
            nxt = np.where(go_left, self.left[cur], self.right[cur])
            cur = np.where(internal, nxt, cur)

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_ids(X)]


def _resolve_max_features(option, n_features: int) -> int:
    if option is None or option == "all":
        return n_features
    if option == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if option == "log2":
        return max(1, int(np.log2(n_features))) if n_features > 1 else 1
    k = int(option)
    if not 1 <= k <= n_features:
        raise DomainError(f"max_features {option!r} out of range")
    return k


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    *,
    task: str,
    n_classes: int = 0,
    criterion: str = "gini",
    splitter: str = "exhaustive",
    max_depth: int | None = None,
    min_samples_split: int = 2,
    min_samples_leaf: int = 1,
    max_features=None,
    rng: np.random.Generator | None = None,
) -> tuple[_Tree, np.ndarray]:
    """Grow one tree; returns (tree, raw impurity-decrease importances).

    ``task`` is "class" (y = integer codes, leaf values are class count
    distributions) or "reg" (y = float targets, leaf values are means).
    Importances accumulate n-weighted impurity decreases per split feature,
    normalized by the root sample count but not yet to unit sum.
    """
    n, F = X.shape
    depth_cap = np.inf if max_depth is None else int(max_depth)
    if depth_cap != np.inf and depth_cap < 1:
        raise DomainError("max_depth must be >= 1")
    if min_samples_split < 2:
        raise DomainError("min_samples_split must be >= 2")
    if min_samples_leaf < 1:
        raise DomainError("min_samples_leaf must be >= 1")
    mf = _resolve_max_features(max_features, F)
    need_subset = mf < F or splitter == "random"
    if need_subset and rng is None:
        rng = np.random.default_rng(0)

    is_class = task == "class"
    features: list[int] = []
    thresholds: list[float] = []
    lefts: list[int] = []
    rights: list[int] = []
    values: list[np.ndarray] = []
    importances = np.zeros(F)
    max_seen_depth = 0

    def node_stats(idx):
        if is_class:
            counts = np.bincount(y[idx], minlength=n_classes).astype(float)
            return counts, float(_impurity(counts, criterion))
        vals = y[idx]
        return np.array([vals.mean()]), float(vals.var())

    # stack of (row indices, depth, parent slot, is_left_child)
    stack: list[tuple[np.ndarray, int, int, bool]] = [
        (np.arange(n), 0, -1, False)
    ]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node_id = len(features)
        if parent >= 0:
            if is_left:
                lefts[parent] = node_id
            else:
                rights[parent] = node_id
        max_seen_depth = max(max_seen_depth, depth)
        value, imp = node_stats(idx)
        features.append(-1)
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        values.append(value)

        if (depth >= depth_cap or idx.size < min_samples_split
                or imp <= 1e-12):
            continue
        if need_subset:
            feat_idx = np.sort(rng.choice(F, size=mf, replace=False))
        else:
            feat_idx = None
        if splitter == "random":
            split = _best_split_random(
                X[idx], y[idx], n_classes, criterion, min_samples_leaf,
                feat_idx, rng,
            )
        elif is_class:
            cols = slice(None) if feat_idx is None else feat_idx
            split = _best_split_class(
                X[idx][:, cols], y[idx], n_classes, criterion,
                min_samples_leaf,
            )
            if split is not None and feat_idx is not None:
                split = (int(feat_idx[split[0]]), split[1], split[2])
        else:
            split = _best_split_reg(X[idx], y[idx], min_samples_leaf)
        if split is None:
            continue
        feat, thr, child_imp = split
        go_left = X[idx, feat] <= thr
        left_idx = idx[go_left]
        right_idx = idx[~go_left]
        if left_idx.size < min_samples_leaf or right_idx.size < min_samples_leaf:
            continue
        features[node_id] = feat
        thresholds[node_id] = thr
        # n-weighted impurity decrease, normalized by root count
        importances[feat] += idx.size * (imp - child_imp) / n
        # push right first so the left child takes the next node id
        stack.append((right_idx, depth + 1, node_id, False))
        stack.append((left_idx, depth + 1, node_id, True))

    if is_class:
        vals = np.vstack(values)
        vals = vals / vals.sum(axis=1, keepdims=True)
    else:
        vals = np.asarray(values).reshape(-1)
    tree = _Tree(features, thresholds, lefts, rights, vals, max_seen_depth)
    return tree, importances


def normalize_importance(raw: np.ndarray) -> np.ndarray:
    total = raw.sum()
    if total <= 0:
        return np.zeros_like(raw)
    return raw / total


class DecisionTreeClassifier(BaseClassifier):
    """Single CART tree with exhaustive deterministic splits."""

    def __init__(self, criterion: str = "gini", max_depth: int | None = None,
                 min_samples_split: int = 2, min_samples_leaf: int = 1):
        if criterion not in CRITERIA:
            raise DomainError(f"criterion must be one of {CRITERIA}")
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_samples_split = int(min_samples_split)
        self.min_samples_leaf = int(min_samples_leaf)

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        self.tree_, raw = grow_tree(
            X, codes, task="class", n_classes=classes.size,
            criterion=self.criterion, splitter="exhaustive",
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            min_samples_leaf=self.min_samples_leaf,
        )
        self._importance_raw = raw
        return self

    def predict_proba(self, X):
        X = self._check_predict(X)
        return self.tree_.leaf_values(X)

    def importance(self):
        return normalize_importance(self._importance_raw)


class RegressionTree:
    """Variance-reduction tree for boosting residuals (internal helper)."""

    def __init__(self, max_depth: int | None = None,
                 min_samples_split: int = 2, min_samples_leaf: int = 1):
        self.max_depth = max_depth
        self.min_samples_split = int(min_samples_split)
        self.min_samples_leaf = int(min_samples_leaf)

    def fit(self, X, yv):
        X = np.asarray(X, dtype=float)
        yv = np.asarray(yv, dtype=float)
        self.tree_, self._importance_raw = grow_tree(
            X, yv, task="reg",
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            min_samples_leaf=self.min_samples_leaf,
        )
        return self

    def apply(self, X) -> np.ndarray:
        return self.tree_.leaf_ids(np.asarray(X, dtype=float))

    def predict(self, X) -> np.ndarray:
        return self.tree_.leaf_values(np.asarray(X, dtype=float))

    def set_leaf_values(self, leaf_values: np.ndarray) -> None:
        self.tree_.value = np.asarray(leaf_values, dtype=float)

    @property
    def n_nodes(self) -> int:
        return self.tree_.feature.size
