"""Tree ensembles: bagged forests and extremely randomized trees."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .base import BaseClassifier
from .tree import CRITERIA, grow_tree, normalize_importance


class _ForestBase(BaseClassifier):
    bootstrap = True
    splitter = "exhaustive"

    def __init__(self, n_estimators: int = 100, criterion: str = "gini",
                 max_depth: int | None = None, min_samples_split: int = 2,
                 min_samples_leaf: int = 1, max_features="sqrt",
                 seed: int = 0):
        if n_estimators < 1:
            raise DomainError("n_estimators must be >= 1")
        if criterion not in CRITERIA:
            raise DomainError(f"criterion must be one of {CRITERIA}")
        self.n_estimators = int(n_estimators)
        self.criterion = criterion
        self.max_depth = max_depth
        self.min_samples_split = int(min_samples_split)
        self.min_samples_leaf = int(min_samples_leaf)
        self.max_features = max_features
        self.seed = int(seed)

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        n = X.shape[0]
        self.trees_ = []
        raw = np.zeros(X.shape[1])
        for t in range(self.n_estimators):
            rng = np.random.default_rng((self.seed, t))
            if self.bootstrap:
                idx = rng.integers(n, size=n)
                Xt, yt = X[idx], codes[idx]
            else:
                Xt, yt = X, codes
            tree, imp = grow_tree(
                Xt, yt, task="class", n_classes=classes.size,
                criterion=self.criterion, splitter=self.splitter,
                max_depth=self.max_depth,
                min_samples_split=self.min_samples_split,
                min_samples_leaf=self.min_samples_leaf,
                max_features=self.max_features, rng=rng,
            )
            self.trees_.append(tree)
            raw += imp
        self._importance_raw = raw
        return self

    def predict_proba(self, X):
        """Mean of per-tree leaf class frequencies (soft majority vote)."""
        X = self._check_predict(X)
        acc = np.zeros((X.shape[0], self.classes_.size))
        for tree in self.trees_:
            acc += tree.leaf_values(X)
        return acc / len(self.trees_)

    def importance(self):
        return normalize_importance(self._importance_raw)


class RandomForestClassifier(_ForestBase):
    """Bootstrap-aggregated CART trees with per-node feature subsets."""

    bootstrap = True
    splitter = "exhaustive"


class ExtraTreesClassifier(_ForestBase):
    """No bootstrap; one uniform-random threshold per candidate feature."""

    bootstrap = False
    splitter = "random"
