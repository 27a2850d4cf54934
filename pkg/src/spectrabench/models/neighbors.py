"""k-nearest-neighbor classifier with brute-force Minkowski search."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DomainError
from .base import BaseClassifier


class KNeighborsClassifier(BaseClassifier):
    def __init__(self, n_neighbors: int = 5, weights: str = "uniform",
                 p: int = 2):
        if n_neighbors < 1:
            raise DomainError("n_neighbors must be >= 1")
        if weights not in ("uniform", "distance"):
            raise DomainError("weights must be 'uniform' or 'distance'")
        if int(p) not in (1, 2):
            raise DomainError("p must be 1 or 2")
        self.n_neighbors = int(n_neighbors)
        self.weights = weights
        self.p = int(p)

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        self._X = X
        self._codes = codes
        return self

    def predict_proba(self, X):
        X = self._check_predict(X)
        k = min(self.n_neighbors, self._X.shape[0])
        metric = "cityblock" if self.p == 1 else "euclidean"
        d = cdist(X, self._X, metric)
        # k nearest per query row; stable sort keeps exact-tie handling
        # reproducible for a given training order
        nbr = np.argsort(d, axis=1, kind="stable")[:, :k]
        nd = np.take_along_axis(d, nbr, axis=1)
        K = self.classes_.size
        proba = np.zeros((X.shape[0], K))
        if self.weights == "uniform":
            w = np.ones_like(nd)
        else:
            exact = nd <= 0.0
            w = np.empty_like(nd)
            with np.errstate(divide="ignore"):
                np.divide(1.0, nd, out=w, where=~exact)
            # an exact match outweighs everything else
            has_exact = exact.any(axis=1)
            w[has_exact] = exact[has_exact].astype(float)
        labels = self._codes[nbr]
        for c in range(K):
            proba[:, c] = np.where(labels == c, w, 0.0).sum(axis=1)
        proba /= proba.sum(axis=1, keepdims=True)
        return proba
