"""Explainability: feature importances, band consensus, group ablation.

Permutation importance measures the drop in a metric when one raw feature
column is shuffled (mean over repeats, seed-deterministic). Band-level
importance sums feature importances over the five transform blocks mapping
to the same band, conserving total mass. Consensus band selection rank-sums
the two tasks' band importances and keeps the top bands below a wavelength
cutoff. Group ablation retrains the pipeline without one transform block at
a time and reports the relative score drop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import WavelengthGrid
from .errors import CapacityError, DomainError, ShapeError
from .evaluate import task_metrics
from .pipeline import FittedPipeline, PipelineConfig, fit_pipeline
from .seeding import derive_seed
from .transforms import TRANSFORM_IDS


def _metric_fn(metric: str):
    if metric == "accuracy":
        return lambda y_true, y_pred: task_metrics(y_true, y_pred).accuracy
    if metric == "f1_macro":
        return lambda y_true, y_pred: task_metrics(y_true, y_pred).f1_macro
    raise DomainError(f"unknown metric {metric!r}")


def permutation_importance(
    pipe: FittedPipeline,
    X: np.ndarray,
    y,
    metric: str = "accuracy",
    n_repeats: int = 10,
    seed: int = 0,
) -> np.ndarray:
    """Baseline score minus mean score with each column permuted.

    Permutations are drawn from per-(feature, repeat) derived seeds, so
    repeats can run in any order or in parallel with identical results.
    """
    if n_repeats < 1:
        raise DomainError("n_repeats must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    score = _metric_fn(metric)
    baseline = score(y, pipe.predict(X))
    n, F = X.shape
    out = np.empty(F)
    for f in range(F):
        # stack all repeats of this feature into one predict call
        Xp = np.tile(X, (n_repeats, 1))
        for r in range(n_repeats):
            rng = np.random.default_rng(derive_seed(seed, "perm", f, r))
            Xp[r * n:(r + 1) * n, f] = X[rng.permutation(n), f]
        pred = pipe.predict(Xp)
        drops = np.empty(n_repeats)
        for r in range(n_repeats):
            drops[r] = score(y, pred[r * n:(r + 1) * n])
        out[f] = baseline - drops.mean()
    return out


def band_importance(feature_importance: np.ndarray, group_map) -> np.ndarray:
    """Sum per-feature importance over the transforms of each band.

    The output vector has one entry per band and the same total mass as the
    input (whatever the transform block count).
    """
    fi = np.asarray(feature_importance, dtype=float)
    if fi.ndim != 1 or len(group_map) != fi.size:
        raise ShapeError("feature importance and group map disagree")
    bands = [b for _, b in group_map]
    n_bands = max(bands) + 1
    out = np.zeros(n_bands)
    for value, (tid, b) in zip(fi, group_map):
        if tid not in TRANSFORM_IDS:
            raise DomainError(f"unknown transform id {tid!r} in group map")
        out[b] += value
    return out


def _ordinal_ranks(importance: np.ndarray) -> np.ndarray:
    """Rank 1 = most important; exact ties order by lower band index."""
    order = np.lexsort((np.arange(importance.size), -importance))
    ranks = np.empty(importance.size, dtype=np.int64)
    ranks[order] = np.arange(1, importance.size + 1)
    return ranks


@dataclass(frozen=True)
class ConsensusSelection:
    band_indices: tuple[int, ...]
    wavelengths_nm: tuple[float, ...]
    joint_ranks: tuple[int, ...]


def consensus_bands(
    importance_ripeness: np.ndarray,
    importance_firmness: np.ndarray,
    grid: WavelengthGrid,
    wavelength_cutoff_nm: float = 700.0,
    top_n: int = 3,
) -> ConsensusSelection:
    """Rank-sum the two tasks' band importances and pick the top bands
    strictly below the wavelength cutoff.

    Joint rank = rank in task 1 + rank in task 2 (ordinal, descending
    importance); joint ties resolve toward the lower band index. Selected
    indices are reported in ascending band order.
    """
    ir = np.asarray(importance_ripeness, dtype=float)
    if_ = np.asarray(importance_firmness, dtype=float)
    if ir.shape != if_.shape or ir.ndim != 1:
        raise ShapeError("importance vectors must be equal-length 1-D")
    if ir.size != grid.band_count:
        raise ShapeError("importance length must equal band count")
    if top_n < 1:
        raise DomainError("top_n must be >= 1")
    joint = _ordinal_ranks(ir) + _ordinal_ranks(if_)
    eligible = np.nonzero(grid.wavelengths_nm < wavelength_cutoff_nm)[0]
    if eligible.size < top_n:
        raise CapacityError(
            f"only {eligible.size} bands below {wavelength_cutoff_nm} nm;"
            f" need {top_n}"
        )
    ordered = sorted(eligible.tolist(), key=lambda b: (joint[b], b))
    chosen = sorted(ordered[:top_n])
    return ConsensusSelection(
        tuple(int(b) for b in chosen),
        tuple(float(grid.wavelengths_nm[b]) for b in chosen),
        tuple(int(joint[b]) for b in chosen),
    )


def group_ablation(
    config: PipelineConfig,
    X_train: np.ndarray,
    y_train,
    X_eval: np.ndarray,
    y_eval,
    group_map,
    metric: str = "accuracy",
) -> dict[str, float]:
    """Relative score drop (percent) when one transform block is removed.

    Every variant, including the full model, is retrained from scratch on
    the same rows with the same seeds; only the feature columns differ.
    """
    score = _metric_fn(metric)
    X_train = np.asarray(X_train, dtype=float)
    X_eval = np.asarray(X_eval, dtype=float)
    if len(group_map) != X_train.shape[1]:
        raise ShapeError("group map and feature count disagree")
    tids = [t for t, _ in group_map]
    present = [t for t in TRANSFORM_IDS if t in set(tids)]
    full = fit_pipeline(config, X_train, y_train)
    full_score = score(np.asarray(y_eval), full.predict(X_eval))
    out: dict[str, float] = {}
    for gid in present:
        keep = [i for i, t in enumerate(tids) if t != gid]
        pipe = fit_pipeline(config, X_train[:, keep], y_train)
        s = score(np.asarray(y_eval), pipe.predict(X_eval[:, keep]))
        if full_score == 0:
            out[gid] = 0.0
        else:
            out[gid] = 100.0 * (full_score - s) / full_score
    return out


def rolling_band_importance(
    importance: np.ndarray, window: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """Centered rolling mean and population std over bands.

    The window must be odd; at the edges it shrinks to whatever fits.
    Returns (means, stds).
    """
    if window < 1 or window % 2 == 0:
        raise DomainError("window must be a positive odd integer")
    v = np.asarray(importance, dtype=float)
    if v.ndim != 1:
        raise ShapeError("importance must be 1-D")
    h = window // 2
    means = np.empty_like(v)
    stds = np.empty_like(v)
    for i in range(v.size):
        lo = max(0, i - h)
        hi = min(v.size, i + h + 1)
        win = v[lo:hi]
        means[i] = win.mean()
        stds[i] = win.std()  # ddof=0
    return means, stds
