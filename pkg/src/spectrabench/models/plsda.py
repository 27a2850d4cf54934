"""Partial least squares discriminant analysis via NIPALS.

PLS2 regression on dummy-coded (one-hot) labels: components are extracted
by the iterative NIPALS loop with regression deflation of both blocks, the
regression matrix is assembled from the collected weights and loadings,
and prediction takes the argmax of the continuous scores. The component
count is clamped at fit time to min(n_samples, n_features, n_classes).
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateError, DomainError
from .base import BaseClassifier, one_hot, softmax

_TOL = 1e-10
_MAX_INNER = 500


class PLSDAClassifier(BaseClassifier):
    calibrated = False

    def __init__(self, n_components: int = 2):
        if n_components < 1:
            raise DomainError("n_components must be >= 1")
        self.n_components = int(n_components)

    def fit(self, X, y):
        X, classes, codes = self._check_fit(X, y)
        K = classes.size
        Y = one_hot(codes, K)
        n, F = X.shape
        a = min(self.n_components, n, F, K)
        self._x_mean = X.mean(axis=0)
        self._y_mean = Y.mean(axis=0)
        Xc = X - self._x_mean
        Yc = Y - self._y_mean
        Ws, Ps, Qs = [], [], []
        for _ in range(a):
            # start from the Y column with the largest residual variance
            u = Yc[:, int(np.argmax(Yc.var(axis=0)))].copy()
            if float(u @ u) <= _TOL:
                break
            t_old = None
            w = q = t = None
            for _ in range(_MAX_INNER):
                w = Xc.T @ u
                norm = float(np.linalg.norm(w))
                if norm <= _TOL:
                    w = None
                    break
                w /= norm
                t = Xc @ w
                tt = float(t @ t)
                if tt <= _TOL:
                    w = None
                    break
                q = Yc.T @ t / tt
                qq = float(q @ q)
                if qq <= _TOL:
                    w = None
                    break
                u = Yc @ q / qq
                if t_old is not None and np.linalg.norm(t - t_old) <= _TOL * np.linalg.norm(t):
                    break
                t_old = t
            if w is None:
                break
            tt = float(t @ t)
            p = Xc.T @ t / tt
            Xc = Xc - np.outer(t, p)
            Yc = Yc - np.outer(t, q)
            Ws.append(w)
            Ps.append(p)
            Qs.append(q)
        if not Ws:
            raise DegenerateError("plsda: no usable component (constant X?)")
        W = np.column_stack(Ws)
        P = np.column_stack(Ps)
        Q = np.column_stack(Qs)
        self.n_components_ = W.shape[1]
        # B maps centered X to centered Y: B = W (P'W)^-1 Q'
        PtW = P.T @ W
        try:
            inner = np.linalg.solve(PtW, Q.T)
        except np.linalg.LinAlgError:
            inner = np.linalg.pinv(PtW) @ Q.T
        self.coef_ = W @ inner
        self.intercept_ = self._y_mean - self._x_mean @ self.coef_
        return self

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        """Softmax over regression scores; ordinal, not calibrated."""
        X = self._check_predict(X)
        return softmax(self.decision_scores(X))
