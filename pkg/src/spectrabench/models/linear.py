"""Linear classifiers: multinomial logistic regression and ridge.

Logistic regression minimizes the summed cross-entropy plus 1/(2C) times
the squared weight norm (L2) or 1/C times the absolute norm (L1, handled
with a proximal step), by full-batch gradient descent with a backtracking
line search. Ridge solves the one-hot least-squares problem in closed form.
"""
from __future__ import annotations

import numpy as np

from ..errors import DomainError
from .base import BaseClassifier, one_hot, softmax

_ARMIJO = 1e-4


class LogisticRegressionClassifier(BaseClassifier):
    def __init__(self, C: float = 1.0, penalty: str = "l2",
                 tol: float = 1e-6, max_iter: int = 5000):
        if C <= 0:
            raise DomainError("C must be > 0")
        if penalty not in ("l1", "l2"):
            raise DomainError("penalty must be 'l1' or 'l2'")
        self.C = float(C)
        self.penalty = penalty
        self.tol = float(tol)
        self.max_iter = int(max_iter)

    # -- objective pieces (weights exclude the intercept from the penalty) --

    def _smooth_value(self, W, b, X, Y):
        scores = X @ W + b
        z = scores - scores.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1)) + scores.max(axis=1)
        return float(lse.sum() - np.sum(Y * scores))

    def _value_and_grad(self, W, b, X, Y):
        """Full L2 objective and its exact gradient (used by the solver and
        by the finite-difference check)."""
        P = softmax(X @ W + b)
        gW = X.T @ (P - Y)
        gb = (P - Y).sum(axis=0)
        value = self._smooth_value(W, b, X, Y)
        if self.penalty == "l2":
            value += float(np.sum(W * W)) / (2.0 * self.C)
            gW = gW + W / self.C
        return value, gW, gb

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        Y = one_hot(codes, classes.size)
        F, K = X.shape[1], classes.size
        W = np.zeros((F, K))
        b = np.zeros(K)
        step = 1.0
        lam = 1.0 / self.C
        self.converged_ = False
        self.n_iter_ = 0
        for it in range(self.max_iter):
            self.n_iter_ = it + 1
            if self.penalty == "l2":
                value, gW, gb = self._value_and_grad(W, b, X, Y)
                gmax = max(np.abs(gW).max(), np.abs(gb).max())
                if gmax < self.tol:
                    self.converged_ = True
                    break
                g2 = float(np.sum(gW * gW) + np.sum(gb * gb))
                while True:
                    W2 = W - step * gW
                    b2 = b - step * gb
                    v2, _, _ = self._value_and_grad(W2, b2, X, Y)
                    if v2 <= value - _ARMIJO * step * g2 or step < 1e-12:
                        break
                    step *= 0.5
                W, b = W2, b2
                step = min(step * 2.0, 1e3)
            else:
                # proximal gradient on smooth CE + lam * |W|_1
                P = softmax(X @ W + b)
                gW = X.T @ (P - Y)
                gb = (P - Y).sum(axis=0)
                value = self._smooth_value(W, b, X, Y)
                while True:
                    W2 = W - step * gW
                    W2 = np.sign(W2) * np.maximum(np.abs(W2) - step * lam, 0.0)
                    b2 = b - step * gb
                    dW = W2 - W
                    db = b2 - b
                    quad = (np.sum(gW * dW) + np.sum(gb * db)
                            + (np.sum(dW * dW) + np.sum(db * db)) / (2 * step))
                    v2 = self._smooth_value(W2, b2, X, Y)
                    if v2 <= value + quad + 1e-12 or step < 1e-12:
                        break
                    step *= 0.5
                # gradient-mapping norm plays the role of the gradient
                gmap = max(np.abs(W2 - W).max(), np.abs(b2 - b).max()) / step
                W, b = W2, b2
                step = min(step * 2.0, 1e3)
                if gmap < self.tol:
                    self.converged_ = True
                    break
        self.coef_ = W
        self.intercept_ = b
        return self

    def predict_proba(self, X):
        X = self._check_predict(X)
        return softmax(X @ self.coef_ + self.intercept_)


class RidgeClassifier(BaseClassifier):
    """One-hot least squares with Tikhonov regularization, closed form."""

    calibrated = False

    def __init__(self, alpha: float = 1.0):
        if alpha <= 0:
            raise DomainError("alpha must be > 0")
        self.alpha = float(alpha)

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        Y = one_hot(codes, classes.size)
        self._x_mean = X.mean(axis=0)
        self._y_mean = Y.mean(axis=0)
        Xc = X - self._x_mean
        Yc = Y - self._y_mean
        A = Xc.T @ Xc + self.alpha * np.eye(X.shape[1])
        self.coef_ = np.linalg.solve(A, Xc.T @ Yc)
        self.intercept_ = self._y_mean - self._x_mean @ self.coef_
        return self

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        """Softmax over decision scores; ordinal, not calibrated."""
        X = self._check_predict(X)
        return softmax(self.decision_scores(X))
