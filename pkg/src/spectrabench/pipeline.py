"""Train-only preprocessing pipeline: balance -> standardize -> PCA -> model.

Both the scaler and the PCA are fitted strictly on training rows; applying
them elsewhere only transforms. PCA runs on standardized features and keeps
the smallest component count whose cumulative explained-variance ratio
reaches the target. Component signs follow the convention that the
largest-magnitude coordinate of each component is positive.
"""
from __future__ import annotations

import pickle
import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import models
from .balance import BalanceStrategy, apply_strategy
from .errors import ConfigError, DegenerateError, DomainError, ShapeError
from .models import ModelSpec
from .models.base import check_matrix

_EPS = 1e-12

PIPELINE_FORMAT = "spectrabench-pipeline"
PIPELINE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ScalerModel:
    """Per-feature centering and population-std scaling parameters."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ShapeError("scaler mean/std must be matching 1-D arrays")
        if np.any(std < 0):
            raise DomainError("scaler std must be >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def divisor(self) -> np.ndarray:
        """Degenerate features (std <= 1e-12) pass through centered only."""
        return np.where(self.std <= _EPS, 1.0, self.std)


def fit_scaler(X: np.ndarray) -> ScalerModel:
    X = check_matrix(X)
    if X.shape[0] == 0:
        raise DomainError("cannot fit scaler on zero rows")
    return ScalerModel(X.mean(axis=0), X.std(axis=0))


def transform_scaler(scaler: ScalerModel, X: np.ndarray) -> np.ndarray:
    X = check_matrix(X)
    if X.shape[1] != scaler.mean.size:
        raise ShapeError("scaler feature count mismatch")
    return (X - scaler.mean) / scaler.divisor


@dataclass(frozen=True)
class PCAModel:
    """Principal components of the standardized training matrix."""

    mean: np.ndarray
    components: np.ndarray            # (k, F) rows are components
    explained_variance_ratio: np.ndarray

    def __post_init__(self):
        comp = np.asarray(self.components, dtype=float)
        ratio = np.asarray(self.explained_variance_ratio, dtype=float)
        if comp.ndim != 2 or ratio.shape != (comp.shape[0],):
            raise ShapeError("components and ratios disagree")
        if np.any(ratio < 0) or np.any(np.diff(ratio) > 1e-12):
            raise DomainError("ratios must be non-negative, non-increasing")
        if ratio.sum() > 1.0 + 1e-9:
            raise DomainError("ratios must sum to <= 1")
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "explained_variance_ratio", ratio)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(X: np.ndarray, variance_target: float = 0.95) -> PCAModel:
    """SVD of the centered matrix; keep the smallest k reaching the target."""
    X = check_matrix(X)
    if not 0.0 < variance_target <= 1.0:
        raise DomainError("variance_target must be in (0, 1]")
    if X.shape[0] < 2:
        raise DegenerateError("PCA needs at least 2 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    total = float((S * S).sum())
    if total <= _EPS:
        raise DegenerateError("PCA input has zero variance")
    ratio = S * S / total
    k = int(np.searchsorted(np.cumsum(ratio), variance_target - 1e-12) + 1)
    k = min(k, ratio.size)
    comp = Vt[:k].copy()
    # sign convention: largest-magnitude coordinate positive
    for i in range(k):
        j = int(np.argmax(np.abs(comp[i])))
        if comp[i, j] < 0:
            comp[i] = -comp[i]
    return PCAModel(mean, comp, ratio[:k])


def transform_pca(pca: PCAModel, X: np.ndarray) -> np.ndarray:
    X = check_matrix(X)
    if X.shape[1] != pca.mean.size:
        raise ShapeError("PCA feature count mismatch")
    return (X - pca.mean) @ pca.components.T


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to fit one task model reproducibly."""

    model: ModelSpec
    balance: BalanceStrategy = field(default_factory=BalanceStrategy)
    use_pca: bool = False
    pca_variance_target: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.pca_variance_target <= 1.0:
            raise ConfigError("pca_variance_target must be in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")

    def reseeded(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, model=self.model.with_seed(seed))


class FittedPipeline:
    """Frozen preprocessing plus a fitted model; transforms never refit."""

    def __init__(self, config: PipelineConfig, scaler: ScalerModel,
                 pca: PCAModel | None, model):
        self.config = config
        self.scaler = scaler
        self.pca = pca
        self.model = model
        self.classes_ = model.classes_

    def transform(self, X: np.ndarray) -> np.ndarray:
        Z = transform_scaler(self.scaler, X)
        if self.pca is not None:
            Z = transform_pca(self.pca, Z)
        return Z

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict(self.transform(X))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_proba(self.transform(X))


def fit_pipeline(config: PipelineConfig, X: np.ndarray, y) -> FittedPipeline:
    """Balance, standardize, optionally project, then fit the model.

    Balancing sees raw feature rows and only ever adds/removes training
    rows; membership-level strategies (original, stratified_resplit) are
    identity here.
    """
    X = check_matrix(X)
    y = np.asarray(y)
    t0 = time.perf_counter()
    Xb, yb = apply_strategy(config.balance, X, y, seed=config.seed)
    scaler = fit_scaler(Xb)
    Z = transform_scaler(scaler, Xb)
    pca = None
    if config.use_pca:
        pca = fit_pca(Z, config.pca_variance_target)
        Z = transform_pca(pca, Z)
    model = models.fit(config.model.with_seed(config.model.seed or config.seed),
                       Z, yb)
    fitted = FittedPipeline(config, scaler, pca, model)
    fitted.train_time_s = time.perf_counter() - t0
    fitted.model_size_bytes = len(pickle.dumps(fitted))
    return fitted


def save_pipeline(pipeline: FittedPipeline, path) -> None:
    blob = {
        "format": PIPELINE_FORMAT,
        "format_version": PIPELINE_FORMAT_VERSION,
        "payload": pipeline,
    }
    with open(path, "wb") as fh:
        pickle.dump(blob, fh)


def load_pipeline(path) -> FittedPipeline:
    with open(path, "rb") as fh:
        blob = pickle.load(fh)
    if not isinstance(blob, dict) or blob.get("format") != PIPELINE_FORMAT:
        raise ConfigError(f"{path!r} is not a serialized pipeline")
    if blob.get("format_version") != PIPELINE_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported pipeline format version {blob.get('format_version')!r}"
        )
    return blob["payload"]
