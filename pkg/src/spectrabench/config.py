"""Run configuration: JSON schema, validation, canonical serialization.

A RunConfig is shared by every CLI subcommand; each phase reads the fields
it needs. The JSON file mirrors the dataclass field names one to one, and
unknown keys are rejected so typos fail loudly instead of silently running
with defaults.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace

from .balance import STRATEGY_KINDS
from .ensemble import ENSEMBLE_KINDS
from .errors import ConfigError
from .transforms import BAND_PRESETS

_SELECT_ON = ("test", "validation")
_REDUCED_MODES = ("subset-then-transform", "transform-then-subset")

# synth block defaults; a config may override any subset of these keys
_SYNTH_DEFAULTS = {
    "class_counts": {"unripe": 30, "perfect": 30, "overripe": 30},
    "band_count": 224,
    "separation": 3.0,
    "test_fraction": 0.25,
}


@dataclass(frozen=True)
class RunConfig:
    dataset: str = ""
    manifest: str = ""
    out_dir: str = "runs"
    seed: int = 42
    models: tuple = ()  # empty = all registered, in registry order
    strategies: tuple = STRATEGY_KINDS
    pca: tuple = (False, True)
    pca_variance_target: float = 0.95
    n_trials: int = 100
    cv_k: int = 10
    select_on: str = "test"
    subset: object = None  # preset name or tuple of band indices
    reduced_mode: str = "subset-then-transform"
    resplit_counts: object = None  # fruit -> train count; None = balanced
    top_n_bases: int = 5
    ensemble_kinds: tuple = ENSEMBLE_KINDS
    explain_model: str = "extra_trees"
    explain_metric: str = "accuracy"
    n_repeats: int = 10
    consensus_cutoff_nm: float = 700.0
    consensus_top_n: int = 3
    consensus_source: str = "impurity"
    rolling_window: int = 5
    bootstrap_resamples: int = 10000
    markdown: bool = False
    synth: object = None  # dict overriding _SYNTH_DEFAULTS

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        object.__setattr__(self, "models", tuple(self.models))
        for m in self.models:
            if not isinstance(m, str):
                raise ConfigError("models must be a list of names")
        strategies = tuple(self.strategies)
        for s in strategies:
            if s not in STRATEGY_KINDS:
                raise ConfigError(
                    f"unknown strategy {s!r}; valid: {STRATEGY_KINDS}"
                )
        object.__setattr__(self, "strategies", strategies)
        pca = tuple(bool(p) for p in self.pca)
        if not pca:
            raise ConfigError("pca grid must be nonempty")
        object.__setattr__(self, "pca", pca)
        if not 0.0 < self.pca_variance_target <= 1.0:
            raise ConfigError("pca_variance_target must be in (0, 1]")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.cv_k < 2:
            raise ConfigError("cv_k must be >= 2")
        if self.select_on not in _SELECT_ON:
            raise ConfigError(f"select_on must be one of {_SELECT_ON}")
        if self.reduced_mode not in _REDUCED_MODES:
            raise ConfigError(f"reduced_mode must be one of {_REDUCED_MODES}")
        if self.subset is not None and not isinstance(self.subset, str):
            try:
                idx = tuple(int(b) for b in self.subset)
            except (TypeError, ValueError):
                raise ConfigError(
                    "subset must be a preset name or a list of band indices"
                ) from None
            object.__setattr__(self, "subset", idx)
        if isinstance(self.subset, str) and self.subset not in BAND_PRESETS:
            raise ConfigError(
                f"unknown subset preset {self.subset!r}; "
                f"valid: {tuple(sorted(BAND_PRESETS))}"
            )
        if self.resplit_counts is not None:
            try:
                counts = {
                    str(k): int(v) for k, v in dict(self.resplit_counts).items()
                }
            except (TypeError, ValueError):
                raise ConfigError(
                    "resplit_counts must map fruit names to counts"
                ) from None
            if any(v < 0 for v in counts.values()):
                raise ConfigError("resplit_counts must be >= 0")
            object.__setattr__(self, "resplit_counts", counts)
        if self.top_n_bases < 1:
            raise ConfigError("top_n_bases must be >= 1")
        kinds = tuple(self.ensemble_kinds)
        for k in kinds:
            if k not in ENSEMBLE_KINDS:
                raise ConfigError(
                    f"unknown ensemble kind {k!r}; valid: {ENSEMBLE_KINDS}"
                )
        object.__setattr__(self, "ensemble_kinds", kinds)
        if self.explain_metric not in ("accuracy", "f1_macro"):
            raise ConfigError("explain_metric must be accuracy or f1_macro")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        if self.consensus_top_n < 1:
            raise ConfigError("consensus_top_n must be >= 1")
        if self.consensus_source not in ("impurity", "permutation"):
            raise ConfigError(
                "consensus_source must be impurity or permutation"
            )
        if self.rolling_window < 1 or self.rolling_window % 2 == 0:
            raise ConfigError("rolling_window must be a positive odd integer")
        if self.bootstrap_resamples < 1:
            raise ConfigError("bootstrap_resamples must be >= 1")
        if self.synth is not None:
            merged = dict(_SYNTH_DEFAULTS)
            try:
                blob = dict(self.synth)
            except (TypeError, ValueError):
                raise ConfigError("synth must be an object") from None
            unknown = set(blob) - set(_SYNTH_DEFAULTS)
            if unknown:
                raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
            merged.update(blob)
            merged["class_counts"] = {
                str(k): int(v) for k, v in dict(merged["class_counts"]).items()
            }
            merged["band_count"] = int(merged["band_count"])
            merged["separation"] = float(merged["separation"])
            merged["test_fraction"] = float(merged["test_fraction"])
            object.__setattr__(self, "synth", merged)

    def require_dataset(self) -> None:
        """Phases that read data call this before touching the paths."""
        if not self.dataset or not self.manifest:
            raise ConfigError("config needs 'dataset' and 'manifest' paths")
        for p in (self.dataset, self.manifest):
            if not os.path.exists(p):
                raise ConfigError(f"path does not exist: {p}")

    def semantic_dict(self) -> dict:
        """Fields that affect results, for hashing. Output location and
        report cosmetics are excluded so moving a run does not change it."""
        out = {}
        for f in fields(self):
            if f.name in ("out_dir", "markdown"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def override(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs) if kwargs else self


def load_config(path: str | os.PathLike) -> RunConfig:
    """Parse a JSON config file into a validated RunConfig."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(blob, dict):
        raise ConfigError("config root must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(blob) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("models", "strategies", "pca", "ensemble_kinds"):
        if key in blob and not isinstance(blob[key], list):
            raise ConfigError(f"config key {key!r} must be a list")
    try:
        return RunConfig(**blob)
    except TypeError as e:
        raise ConfigError(f"bad config value types: {e}") from e
