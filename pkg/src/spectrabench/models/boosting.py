"""Gradient boosting with the multiclass softmax (cross-entropy) loss.

Each round fits one variance-reduction regression tree per class to the
current negative gradient (one-hot label minus softmax probability), then
rewrites its leaves with the damped Newton step

    leaf = (K-1)/K * sum(residual) / sum(p * (1 - p))

and advances the score matrix by learning_rate times the tree output.
Per-round training deviance is recorded and must never increase.
"""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .base import BaseClassifier, one_hot, softmax
from .tree import RegressionTree, normalize_importance


class GradientBoostingClassifier(BaseClassifier):
    def __init__(self, n_estimators: int = 100, learning_rate: float = 0.1,
                 max_depth: int | None = 3, min_samples_split: int = 2,
                 min_samples_leaf: int = 1, seed: int = 0):
        if n_estimators < 1:
            raise DomainError("n_estimators must be >= 1")
        if not 0 < learning_rate <= 1:
            raise DomainError("learning_rate must be in (0, 1]")
        self.n_estimators = int(n_estimators)
        self.learning_rate = float(learning_rate)
        self.max_depth = max_depth
        self.min_samples_split = int(min_samples_split)
        self.min_samples_leaf = int(min_samples_leaf)
        self.seed = int(seed)

    def _deviance(self, Y: np.ndarray, scores: np.ndarray) -> float:
        p = softmax(scores)
        return float(-np.sum(Y * np.log(np.clip(p, 1e-300, None))))

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        n, K = X.shape[0], classes.size
        Y = one_hot(codes, K)
        priors = Y.mean(axis=0)
        self.init_scores_ = np.log(np.clip(priors, 1e-12, None))
        scores = np.tile(self.init_scores_, (n, 1))
        self.stages_: list[list[RegressionTree]] = []
        self.train_deviance_: list[float] = []
        raw = np.zeros(X.shape[1])
        for _ in range(self.n_estimators):
            P = softmax(scores)
            residual = Y - P
            stage: list[RegressionTree] = []
            for k in range(K):
                tree = RegressionTree(
                    max_depth=self.max_depth,
                    min_samples_split=self.min_samples_split,
                    min_samples_leaf=self.min_samples_leaf,
                ).fit(X, residual[:, k])
                leaves = tree.apply(X)
                num = np.zeros(tree.n_nodes)
                den = np.zeros(tree.n_nodes)
                np.add.at(num, leaves, residual[:, k])
                np.add.at(den, leaves, P[:, k] * (1.0 - P[:, k]))
                with np.errstate(invalid="ignore", divide="ignore"):
                    vals = np.where(den > 1e-12,
                                    (K - 1) / K * num / np.where(den > 1e-12, den, 1.0),
                                    0.0)
                tree.set_leaf_values(vals)
                scores[:, k] += self.learning_rate * tree.predict(X)
                raw += tree._importance_raw
                stage.append(tree)
            self.stages_.append(stage)
            self.train_deviance_.append(self._deviance(Y, scores))
        self._importance_raw = raw
        return self

    def _raw_scores(self, X: np.ndarray) -> np.ndarray:
        scores = np.tile(self.init_scores_, (X.shape[0], 1))
        for stage in self.stages_:
            for k, tree in enumerate(stage):
                scores[:, k] += self.learning_rate * tree.predict(X)
        return scores

    def predict_proba(self, X):
        X = self._check_predict(X)
        return softmax(self._raw_scores(X))

    def importance(self):
        return normalize_importance(self._importance_raw)
