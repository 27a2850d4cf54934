"""Ensembles over fitted pipelines: voting, stacking, blending.

All four kinds consume a list of base PipelineConfigs and one task's
training data. Voting combines base outputs directly; stacking trains a
meta-learner on out-of-fold base probabilities (bases are then refit on the
full training set for inference); blending holds out a fraction of the
training rows for the meta-learner and leaves the bases fitted on the rest.
A base without predict_proba contributes one-hot predicted labels, and the
ensemble records that substitution.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import models as _models
from .errors import CapacityError, ConfigError, DomainError
from .evaluate import stratified_fold_ids
from .models import ModelSpec
from .pipeline import FittedPipeline, PipelineConfig, fit_pipeline
from .seeding import derive_seed

ENSEMBLE_KINDS = ("hard_vote", "soft_vote", "stacking", "blending")


def _default_meta() -> ModelSpec:
    return ModelSpec("logistic_regression", {"C": 1.0, "penalty": "l2"})


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    base: tuple[PipelineConfig, ...]
    meta: ModelSpec | None = None
    oof_folds: int = 5
    holdout_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise ConfigError(f"unknown ensemble kind {self.kind!r}")
        base = tuple(self.base)
        if len(base) < 2:
            raise ConfigError("ensemble needs at least two base learners")
        object.__setattr__(self, "base", base)
        if self.oof_folds < 2:
            raise ConfigError("oof_folds must be >= 2")
        if not 0.0 < self.holdout_frac < 1.0:
            raise ConfigError("holdout_frac must be in (0, 1)")


def _proba_in_classes(pipe: FittedPipeline, X: np.ndarray,
                      classes: np.ndarray) -> tuple[np.ndarray, bool]:
    """Base probabilities aligned to the ensemble class list.

    Falls back to one-hot predictions when the base has no predict_proba;
    the bool reports whether the fallback was used.
    """
    K = classes.size
    out = np.zeros((X.shape[0], K))
    lookup = {c: i for i, c in enumerate(classes.tolist())}
    model = pipe.model
    if hasattr(model, "predict_proba"):
        proba = pipe.predict_proba(X)
        for j, c in enumerate(pipe.classes_.tolist()):
            out[:, lookup[c]] += proba[:, j]
        return out, False
    pred = pipe.predict(X)
    for i, p in enumerate(pred.tolist()):
        out[i, lookup[p]] = 1.0
    return out, True


class FittedEnsemble:
    def __init__(self, spec: EnsembleSpec, classes: np.ndarray,
                 base_pipes: list[FittedPipeline], meta_model=None,
                 onehot_bases: tuple[int, ...] = (),
                 constant=None):
        self.spec = spec
        self.classes_ = classes
        self.base_pipes = base_pipes
        self.meta_model = meta_model
        # indices of bases that contributed one-hot labels, not probabilities
        self.onehot_bases = onehot_bases
        # single-class training set: skip the bases, always predict it
        self.constant = constant

    def _stack_probas(self, X: np.ndarray) -> np.ndarray:
        blocks = [
            _proba_in_classes(p, X, self.classes_)[0] for p in self.base_pipes
        ]
        return np.concatenate(blocks, axis=1)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.constant is not None:
            return np.ones((X.shape[0], 1))
        if self.spec.kind == "hard_vote":
            K = self.classes_.size
            votes = np.zeros((X.shape[0], K))
            lookup = {c: i for i, c in enumerate(self.classes_.tolist())}
            for pipe in self.base_pipes:
                pred = pipe.predict(X)
                for i, p in enumerate(pred.tolist()):
                    votes[i, lookup[p]] += 1.0
            return votes / len(self.base_pipes)
        if self.spec.kind == "soft_vote":
            acc = np.zeros((X.shape[0], self.classes_.size))
            for pipe in self.base_pipes:
                acc += _proba_in_classes(pipe, X, self.classes_)[0]
            return acc / len(self.base_pipes)
        # meta-learner classes can be a subset of the ensemble classes when
        # the meta training rows happened to miss one; re-align columns
        raw = self.meta_model.predict_proba(self._stack_probas(X))
        out = np.zeros((X.shape[0], self.classes_.size))
        lookup = {c: i for i, c in enumerate(self.classes_.tolist())}
        for j, c in enumerate(self.meta_model.classes_.tolist()):
            out[:, lookup[c]] = raw[:, j]
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Argmax of predict_proba; ties go to the lower class index, which
        for hard voting is exactly plurality with lowest-index tie-break."""
        X = np.asarray(X, dtype=float)
        if self.constant is not None:
            return np.full(X.shape[0], self.constant, dtype=self.classes_.dtype)
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


def _fit_bases(spec: EnsembleSpec, X: np.ndarray, y: np.ndarray,
               tag: str) -> list[FittedPipeline]:
    pipes = []
    for b, cfg in enumerate(spec.base):
        pipes.append(
            fit_pipeline(cfg.reseeded(derive_seed(spec.seed, tag, b)), X, y)
        )
    return pipes


def fit_ensemble(spec: EnsembleSpec, X: np.ndarray, y) -> FittedEnsemble:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise DomainError("y must match X rows")
    classes = np.unique(y)
    if classes.size == 1:
        # the base models would all refuse a one-class fit; the ensemble
        # answer is still well defined, so short-circuit to it
        return FittedEnsemble(spec, classes, [], constant=classes[0])

    if spec.kind in ("hard_vote", "soft_vote"):
        pipes = _fit_bases(spec, X, y, "vote")
        onehot = tuple(
            b for b, p in enumerate(pipes)
            if not hasattr(p.model, "predict_proba")
        )
        return FittedEnsemble(spec, classes, pipes, onehot_bases=onehot)

    meta_spec = spec.meta if spec.meta is not None else _default_meta()

    if spec.kind == "stacking":
        counts = np.unique(y, return_counts=True)[1]
        k_eff = min(spec.oof_folds, int(counts.min()))
        if k_eff < 2:
            raise CapacityError(
                "stacking needs every class to have >= 2 members"
            )
        if k_eff < spec.oof_folds:
            warnings.warn(
                f"reducing stacking folds from {spec.oof_folds} to {k_eff}",
                stacklevel=2,
            )
        folds = stratified_fold_ids(
            y, k_eff, np.random.default_rng(derive_seed(spec.seed, "oof"))
        )
        K = classes.size
        meta_X = np.zeros((X.shape[0], K * len(spec.base)))
        onehot: set[int] = set()
        for i in range(k_eff):
            tr = np.nonzero(folds != i)[0]
            ho = np.nonzero(folds == i)[0]
            for b, cfg in enumerate(spec.base):
                pipe = fit_pipeline(
                    cfg.reseeded(derive_seed(spec.seed, "oof", i, b)),
                    X[tr], y[tr],
                )
                block, used_onehot = _proba_in_classes(pipe, X[ho], classes)
                if used_onehot:
                    onehot.add(b)
                meta_X[ho, b * K:(b + 1) * K] = block
        meta_model = _models.fit(
            meta_spec.with_seed(derive_seed(spec.seed, "meta")), meta_X, y
        )
        # bases refit on the full training data for inference
        pipes = _fit_bases(spec, X, y, "stack-final")
        return FittedEnsemble(spec, classes, pipes, meta_model,
                              tuple(sorted(onehot)))

    # blending
    rng = np.random.default_rng(derive_seed(spec.seed, "blend"))
    holdout_ids = stratified_fold_ids(
        y, max(2, int(round(1.0 / spec.holdout_frac))), rng
    ) == 0
    if holdout_ids.all() or not holdout_ids.any():
        raise CapacityError("blending holdout is empty or everything")
    fit_idx = np.nonzero(~holdout_ids)[0]
    ho_idx = np.nonzero(holdout_ids)[0]
    pipes = []
    onehot_list: set[int] = set()
    K = classes.size
    meta_X = np.zeros((ho_idx.size, K * len(spec.base)))
    for b, cfg in enumerate(spec.base):
        pipe = fit_pipeline(
            cfg.reseeded(derive_seed(spec.seed, "blend", b)),
            X[fit_idx], y[fit_idx],
        )
        block, used_onehot = _proba_in_classes(pipe, X[ho_idx], classes)
        if used_onehot:
            onehot_list.add(b)
        meta_X[:, b * K:(b + 1) * K] = block
        pipes.append(pipe)
    meta_model = _models.fit(
        meta_spec.with_seed(derive_seed(spec.seed, "meta")),
        meta_X, y[ho_idx],
    )
    return FittedEnsemble(spec, classes, pipes, meta_model,
                          tuple(sorted(onehot_list)))
