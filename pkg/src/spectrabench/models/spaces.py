"""Hyperparameter search spaces and defaults for the built-in models.

Each space maps a parameter name to a domain tuple:

    ("int", lo, hi)            inclusive integer range
    ("real", lo, hi)           inclusive float range, linear scale
    ("real", lo, hi, "log")    inclusive float range, log scale
    ("cat", (choices...))      finite unordered choices

Log scale is declared wherever a range spans at least two orders of
magnitude. Specs validate their hyperparameters against these domains, so
every tuned or default configuration stays inside the documented bounds.
"""
from __future__ import annotations

from ..errors import ConfigError

_TREE_COMMON = {
    "max_depth": ("int", 3, 30),
    "min_samples_split": ("int", 2, 20),
    "min_samples_leaf": ("int", 1, 20),
    "criterion": ("cat", ("gini", "entropy")),
}

SPACES: dict[str, dict[str, tuple]] = {
    "decision_tree": dict(_TREE_COMMON),
    "random_forest": {
        "n_estimators": ("int", 50, 500),
        **_TREE_COMMON,
        "max_features": ("cat", ("sqrt", "log2", "all")),
    },
    "extra_trees": {
        "n_estimators": ("int", 50, 500),
        **_TREE_COMMON,
    },
    "gradient_boosting": {
        "n_estimators": ("int", 50, 500),
        "learning_rate": ("real", 0.01, 0.3),
        "max_depth": ("int", 3, 10),
        "min_samples_split": ("int", 2, 20),
        "min_samples_leaf": ("int", 1, 20),
    },
    "knn": {
        "n_neighbors": ("int", 3, 50),
        "weights": ("cat", ("uniform", "distance")),
        "p": ("cat", (1, 2)),
    },
    "gaussian_nb": {
        "var_smoothing": ("real", 1e-10, 1e-6, "log"),
    },
    "logistic_regression": {
        "C": ("real", 0.01, 100.0, "log"),
        "penalty": ("cat", ("l1", "l2")),
    },
    "ridge": {
        "alpha": ("real", 0.1, 100.0, "log"),
    },
    "plsda": {
        "n_components": ("int", 1, 30),
    },
}

DEFAULTS: dict[str, dict] = {
    "decision_tree": {
        "criterion": "gini", "max_depth": 30,
        "min_samples_split": 2, "min_samples_leaf": 1,
    },
    "random_forest": {
        "n_estimators": 100, "criterion": "gini", "max_depth": 30,
        "min_samples_split": 2, "min_samples_leaf": 1,
        "max_features": "sqrt",
    },
    "extra_trees": {
        "n_estimators": 100, "criterion": "gini", "max_depth": 30,
        "min_samples_split": 2, "min_samples_leaf": 1,
    },
    "gradient_boosting": {
        "n_estimators": 100, "learning_rate": 0.1, "max_depth": 3,
        "min_samples_split": 2, "min_samples_leaf": 1,
    },
    "knn": {"n_neighbors": 5, "weights": "uniform", "p": 2},
    "gaussian_nb": {"var_smoothing": 1e-9},
    "logistic_regression": {"C": 1.0, "penalty": "l2"},
    "ridge": {"alpha": 1.0},
    "plsda": {"n_components": 2},
}


def check_value(name: str, param: str, domain: tuple, value) -> None:
    kind = domain[0]
    if kind == "int":
        if not isinstance(value, (int,)) or isinstance(value, bool):
            raise ConfigError(
                f"{name}.{param}: expected an integer, got {value!r}"
            )
        lo, hi = domain[1], domain[2]
        if not lo <= value <= hi:
            raise ConfigError(
                f"{name}.{param}: {value!r} outside [{lo}, {hi}]"
            )
    elif kind == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(
                f"{name}.{param}: expected a number, got {value!r}"
            )
        lo, hi = domain[1], domain[2]
        if not lo <= float(value) <= hi:
            raise ConfigError(
                f"{name}.{param}: {value!r} outside [{lo}, {hi}]"
            )
    elif kind == "cat":
        if value not in domain[1]:
            raise ConfigError(
                f"{name}.{param}: {value!r} not in {domain[1]!r}"
            )
    else:  # pragma: no cover - table authoring error
        raise ConfigError(f"{name}.{param}: unknown domain kind {kind!r}")


def validate_params(name: str, params: dict, space: dict | None = None) -> None:
    """Reject unknown parameter names and out-of-bounds values."""
    if space is None:
        space = SPACES.get(name)
    if space is None:
        return  # externally registered model with no declared space
    for param, value in params.items():
        if param not in space:
            raise ConfigError(f"{name}: unknown hyperparameter {param!r}")
        check_value(name, param, space[param], value)
