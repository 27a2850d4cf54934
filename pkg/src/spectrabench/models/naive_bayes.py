"""Gaussian naive Bayes with variance smoothing."""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .base import BaseClassifier, softmax


class GaussianNBClassifier(BaseClassifier):
    """Per-class independent Gaussians; population variances.

    ``var_smoothing`` times the largest per-feature variance of the whole
    training matrix is added to every class variance, keeping the densities
    finite on constant features.
    """

    def __init__(self, var_smoothing: float = 1e-9):
        if var_smoothing < 0:
            raise DomainError("var_smoothing must be >= 0")
        self.var_smoothing = float(var_smoothing)

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        K = classes.size
        eps = self.var_smoothing * float(X.var(axis=0).max())
        self.theta_ = np.empty((K, X.shape[1]))
        self.var_ = np.empty((K, X.shape[1]))
        self.priors_ = np.empty(K)
        for k in range(K):
            Xk = X[codes == k]
            self.theta_[k] = Xk.mean(axis=0)
            self.var_[k] = Xk.var(axis=0) + eps
            self.priors_[k] = Xk.shape[0] / X.shape[0]
        if np.any(self.var_ <= 0):
            raise DomainError(
                "zero variance encountered; increase var_smoothing"
            )
        return self

    def _joint_log_likelihood(self, X: np.ndarray) -> np.ndarray:
        jll = np.empty((X.shape[0], self.classes_.size))
        for k in range(self.classes_.size):
            diff = X - self.theta_[k]
            jll[:, k] = (
                np.log(self.priors_[k])
                - 0.5 * np.sum(np.log(2.0 * np.pi * self.var_[k]))
                - 0.5 * np.sum(diff * diff / self.var_[k], axis=1)
            )
        return jll

    def predict_proba(self, X):
        X = self._check_predict(X)
        return softmax(self._joint_log_likelihood(X))
