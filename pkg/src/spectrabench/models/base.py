"""Shared classifier plumbing: label encoding, input checks, softmax.

Every model exposes fit(X, y) -> self, predict(X), predict_proba(X) and
importance(). Labels may be arbitrary sortable tokens; internally they are
encoded against the sorted unique class list, and prediction ties resolve
toward the lower class index (np.argmax takes the first maximum).
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateError, DomainError, ShapeError


def check_matrix(X: np.ndarray, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise DomainError(f"{name} contains NaN or infinite values")
    return X


def encode_labels(y) -> tuple[np.ndarray, np.ndarray]:
    """Return (classes sorted ascending, integer codes)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError("y must be 1-D")
    classes, codes = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise DegenerateError(
            f"need at least 2 classes to fit, got {classes.size}"
        )
    return classes, codes.astype(np.int64)


def one_hot(codes: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((codes.size, n_classes))
    out[np.arange(codes.size), codes] = 1.0
    return out


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class BaseClassifier:
    """Minimal fit/predict contract shared by all models."""

    # probabilities are true calibrated frequencies unless a model flips this
    calibrated = True

    def fit(self, X, y) -> "BaseClassifier":
        raise NotImplementedError

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def importance(self):
        """Per-feature importance, or None when the model defines none."""
        return None

    def _check_fit(self, X, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        X = check_matrix(X)
        classes, codes = encode_labels(y)
        if codes.size != X.shape[0]:
            raise ShapeError("X and y disagree in sample count")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        return X, classes, codes

    def _check_predict(self, X) -> np.ndarray:
        if not hasattr(self, "classes_"):
            raise DomainError("model is not fitted")
        X = check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return X
