"""Model registry: nine built-in classifiers plus external registrations.

A ModelSpec names a registered model, carries validated hyperparameters
(defaults filled in from the model's declared defaults) and a seed for the
stochastic models. ``fit`` turns a spec into a fitted classifier and stamps
wall-clock training time and serialized size onto it.
"""
from __future__ import annotations

import pickle
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

from ..errors import ConfigError
from .base import BaseClassifier
from .boosting import GradientBoostingClassifier
from .forest import ExtraTreesClassifier, RandomForestClassifier
from .linear import LogisticRegressionClassifier, RidgeClassifier
from .naive_bayes import GaussianNBClassifier
from .neighbors import KNeighborsClassifier
from .plsda import PLSDAClassifier
from .spaces import DEFAULTS, SPACES, validate_params
from .tree import DecisionTreeClassifier

# name -> factory(params, seed) -> unfitted model
_FACTORIES: dict[str, Callable] = {}
# external models may declare their own space/defaults at registration
_EXTRA_SPACES: dict[str, dict] = {}
_EXTRA_DEFAULTS: dict[str, dict] = {}


def register_model(name: str, factory: Callable, space: dict | None = None,
                   defaults: dict | None = None) -> None:
    """Add a model to the registry (overwrites an existing name)."""
    _FACTORIES[name] = factory
    if space is not None:
        _EXTRA_SPACES[name] = space
    if defaults is not None:
        _EXTRA_DEFAULTS[name] = defaults


def available_models() -> tuple[str, ...]:
    return tuple(sorted(_FACTORIES))


def model_space(name: str) -> dict:
    if name in SPACES:
        return SPACES[name]
    return _EXTRA_SPACES.get(name, {})


def model_defaults(name: str) -> dict:
    if name in DEFAULTS:
        return dict(DEFAULTS[name])
    return dict(_EXTRA_DEFAULTS.get(name, {}))


@dataclass(frozen=True)
class ModelSpec:
    """A registered model name plus in-bounds hyperparameters and a seed."""

    name: str
    params: Mapping = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.name not in _FACTORIES:
            raise ConfigError(
                f"unknown model {self.name!r}; registered:"
                f" {available_models()}"
            )
        merged = model_defaults(self.name)
        merged.update(dict(self.params))
        validate_params(self.name, merged, model_space(self.name) or None)
        object.__setattr__(self, "params", merged)
        if self.seed < 0:
            raise ConfigError("model seed must be >= 0")

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.name, dict(self.params), seed)


def create(spec: ModelSpec) -> BaseClassifier:
    return _FACTORIES[spec.name](dict(spec.params), spec.seed)


def fit(spec: ModelSpec, X, y) -> BaseClassifier:
    """Instantiate and fit; records train_time_s and model_size_bytes."""
    model = create(spec)
    t0 = time.perf_counter()
    model.fit(X, y)
    model.train_time_s = time.perf_counter() - t0
    model.model_size_bytes = len(pickle.dumps(model))
    model.spec = spec
    return model


def _seeded(cls):
    return lambda params, seed: cls(seed=seed, **params)


def _plain(cls):
    return lambda params, seed: cls(**params)


register_model("decision_tree", _plain(DecisionTreeClassifier))
register_model("random_forest", _seeded(RandomForestClassifier))
register_model("extra_trees", _seeded(ExtraTreesClassifier))
register_model("gradient_boosting", _seeded(GradientBoostingClassifier))
register_model("knn", _plain(KNeighborsClassifier))
register_model("gaussian_nb", _plain(GaussianNBClassifier))
register_model("logistic_regression", _plain(LogisticRegressionClassifier))
register_model("ridge", _plain(RidgeClassifier))
register_model("plsda", _plain(PLSDAClassifier))
