"""Metrics, cross-validation and the statistics battery.

Per-class precision, recall and F1 use the 0/0 -> 0 convention. Macro
averages run over the classes present in the true labels; weighted averages
weight by true-class support. The two tasks combine into an overall
accuracy (plain mean of the two task accuracies) and a mean macro-F1.
Firmness rows whose true label is ``unknown`` are excluded from scoring but
retained for training.
"""
from __future__ import annotations

import pickle
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as _sstats

from .dataset import Dataset
from .errors import CapacityError, DegenerateError, DomainError, ShapeError, UnsupportedError
from .pipeline import PipelineConfig, fit_pipeline
from .seeding import derive_seed
from .transforms import BandSubset, build_feature_matrix

TASKS = ("ripeness", "firmness")


# ---------------------------------------------------------------------------
# task data containers

@dataclass(frozen=True)
class TaskData:
    """Feature matrix plus labels for both tasks, with sample ids."""

    X: np.ndarray
    y_ripeness: np.ndarray
    y_firmness: np.ndarray
    ids: tuple[str, ...]
    group_map: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        yr = np.asarray(self.y_ripeness)
        yf = np.asarray(self.y_firmness)
        if X.ndim != 2:
            raise ShapeError("X must be 2-D")
        if yr.shape != (X.shape[0],) or yf.shape != (X.shape[0],):
            raise ShapeError("labels must match X row count")
        if len(self.ids) != X.shape[0]:
            raise ShapeError("ids must match X row count")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y_ripeness", yr)
        object.__setattr__(self, "y_firmness", yf)
        object.__setattr__(self, "ids", tuple(self.ids))

    def label(self, task: str) -> np.ndarray:
        if task == "ripeness":
            return self.y_ripeness
        if task == "firmness":
            return self.y_firmness
        raise DomainError(f"unknown task {task!r}")

    def take(self, idx) -> "TaskData":
        idx = np.asarray(idx)
        return TaskData(
            self.X[idx], self.y_ripeness[idx], self.y_firmness[idx],
            tuple(self.ids[int(i)] for i in idx), self.group_map,
        )

    def __len__(self) -> int:
        return self.X.shape[0]


def extract_task_data(
    ds: Dataset,
    split: str | None = None,
    subset: BandSubset | None = None,
    reduced_mode: str = "subset-then-transform",
) -> TaskData:
    """Assemble features and both label vectors for one split (or all)."""
    samples = ds.samples if split is None else ds.subset(split)
    if not samples:
        raise CapacityError(f"no samples in split {split!r}")
    spectra = np.stack([s.spectrum for s in samples])
    X, gmap = build_feature_matrix(spectra, ds.grid, subset, reduced_mode)
    return TaskData(
        X,
        np.array([s.ripeness for s in samples]),
        np.array([s.firmness_class for s in samples]),
        tuple(s.sample_id for s in samples),
        gmap,
    )


# ---------------------------------------------------------------------------
# confusion matrix and per-task metrics

def confusion_matrix(y_true, y_pred, classes: Sequence | None = None):
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeError("y_true and y_pred must have the same length")
    if classes is None:
        classes = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        cm[index[t], index[p]] += 1
    return cm, tuple(classes)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class TaskMetrics:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    per_class: Mapping[str, ClassScores]
    n_scored: int

    def __post_init__(self):
        object.__setattr__(self, "per_class", dict(self.per_class))


def _div(num: float, den: float) -> float:
    """The 0/0 -> 0 convention used by every ratio metric."""
    return num / den if den > 0 else 0.0


def task_metrics_from_cm(cm: np.ndarray, classes: Sequence) -> TaskMetrics:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] != len(classes):
        raise ShapeError("confusion matrix and class list disagree")
    total = int(cm.sum())
    row = cm.sum(axis=1)
    col = cm.sum(axis=0)
    per_class: dict = {}
    f1_present = []
    weighted = 0.0
    for i, c in enumerate(classes):
        tp = float(cm[i, i])
        prec = _div(tp, float(col[i]))
        rec = _div(tp, float(row[i]))
        f1 = _div(2 * prec * rec, prec + rec)
        per_class[c] = ClassScores(prec, rec, f1, int(row[i]))
        if row[i] > 0:
            f1_present.append(f1)
            weighted += (row[i] / total) * f1
    accuracy = _div(float(np.trace(cm)), float(total))
    f1_macro = float(np.mean(f1_present)) if f1_present else 0.0
    return TaskMetrics(accuracy, f1_macro, float(weighted), per_class, total)


def task_metrics(y_true, y_pred, classes: Sequence | None = None) -> TaskMetrics:
    cm, cls = confusion_matrix(y_true, y_pred, classes)
    return task_metrics_from_cm(cm, cls)


@dataclass(frozen=True)
class PairedMetrics:
    """Both tasks of one evaluation plus the combined summaries."""

    ripeness: TaskMetrics
    firmness: TaskMetrics
    overall_accuracy: float
    mean_f1_macro: float


def pair_metrics(ripeness: TaskMetrics, firmness: TaskMetrics) -> PairedMetrics:
    return PairedMetrics(
        ripeness, firmness,
        overall_accuracy=0.5 * (ripeness.accuracy + firmness.accuracy),
        mean_f1_macro=0.5 * (ripeness.f1_macro + firmness.f1_macro),
    )


def paired_metrics(cm_ripeness, classes_ripeness, cm_firmness,
                   classes_firmness) -> PairedMetrics:
    """Combine two confusion matrices into paired task metrics.

    The firmness matrix may include an `unknown` row; those samples are
    excluded from scoring before any ratio is computed.
    """
    m_r = task_metrics_from_cm(np.asarray(cm_ripeness), classes_ripeness)
    cm_f = np.asarray(cm_firmness)
    classes_f = list(classes_firmness)
    if "unknown" in classes_f:
        u = classes_f.index("unknown")
        keep = [i for i in range(len(classes_f)) if i != u]
        total = int(cm_f[keep, :].sum())
        tp = int(sum(cm_f[i, i] for i in keep))
        # per-class ratios use full row/column totals so predicted-unknown
        # mass still counts against recall of the kept classes
        kept_classes = [classes_f[i] for i in keep]
        per_class = {}
        f1_present = []
        weighted = 0.0
        for j, c in enumerate(kept_classes):
            row_total = float(cm_f[keep[j], :].sum())
            col_total = float(cm_f[keep, keep[j]].sum())
            tp_c = float(cm_f[keep[j], keep[j]])
            prec = _div(tp_c, col_total)
            rec = _div(tp_c, row_total)
            f1 = _div(2 * prec * rec, prec + rec)
            per_class[c] = ClassScores(prec, rec, f1, int(row_total))
            if row_total > 0:
                f1_present.append(f1)
                weighted += (row_total / total) * f1 if total else 0.0
        m_f = TaskMetrics(
            _div(float(tp), float(total)),
            float(np.mean(f1_present)) if f1_present else 0.0,
            float(weighted),
            per_class,
            total,
        )
    else:
        m_f = task_metrics_from_cm(cm_f, classes_f)
    return pair_metrics(m_r, m_f)


def score_pipelines(pipe_r, pipe_f, data: TaskData) -> PairedMetrics:
    """Evaluate one fitted pipeline per task on shared rows."""
    pred_r = pipe_r.predict(data.X)
    m_r = task_metrics(data.y_ripeness, pred_r)
    mask = data.y_firmness != "unknown"
    pred_f = pipe_f.predict(data.X[mask])
    m_f = task_metrics(data.y_firmness[mask], pred_f)
    return pair_metrics(m_r, m_f)


# ---------------------------------------------------------------------------
# interval and effect-size statistics

def successes_from_rate(rate: float, n: int) -> int:
    """Integer successes from a rate, rounding half up."""
    if not 0.0 <= rate <= 1.0:
        raise DomainError(f"rate must be in [0, 1], got {rate!r}")
    return int(np.floor(rate * n + 0.5))


def wilson_ci(successes: int, n: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not 0 <= successes <= n:
        raise DomainError("successes must be in [0, n]")
    if not 0.0 < confidence < 1.0:
        raise DomainError("confidence must be in (0, 1)")
    z = float(_sstats.norm.ppf(0.5 + confidence / 2.0))
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    # the exact bounds live in [0, 1]; clamp away float wobble at s=0, s=n
    return float(max(0.0, center - half)), float(min(1.0, center + half))


def cohen_d_paired(a, b) -> float:
    """Paired Cohen's d: mean difference over sample std of differences."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("paired samples must be equal-length vectors")
    if a.size < 2:
        raise DomainError("need at least 2 pairs")
    d = a - b
    sd = float(d.std(ddof=1))
    if sd <= 0:
        raise DegenerateError("zero-variance difference")
    return float(d.mean() / sd)


# ---------------------------------------------------------------------------
# rank statistics

def _column_ranks(scores: np.ndarray) -> np.ndarray:
    """Rank models (rows) within each column; rank 1 = highest score,
    ties share the average rank."""
    M, k = scores.shape
    ranks = np.empty_like(scores, dtype=float)
    for j in range(k):
        ranks[:, j] = _sstats.rankdata(-scores[:, j], method="average")
    return ranks


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    dof: int
    p_value: float
    mean_ranks: np.ndarray


def friedman(scores) -> FriedmanResult:
    """Friedman rank test over an (M models, k folds) score matrix."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ShapeError("scores must be (M, k)")
    M, k = scores.shape
    if M < 2:
        raise DomainError("need at least 2 models")
    if k < 1:
        raise DomainError("need at least 1 score column")
    ranks = _column_ranks(scores)
    mean_ranks = ranks.mean(axis=1)
    chi2 = 12.0 * k / (M * (M + 1)) * float(
        np.sum((mean_ranks - (M + 1) / 2.0) ** 2)
    )
    dof = M - 1
    p = float(_sstats.chi2.sf(chi2, dof))
    return FriedmanResult(float(chi2), dof, p, mean_ranks)


# Two-tailed Nemenyi critical values: infinite-df studentized range divided
# by sqrt(2), for M = 2..20 groups (standard published table).
_NEMENYI_Q = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164,
           3.219, 3.268, 3.313, 3.354, 3.391, 3.426, 3.458, 3.489, 3.517,
           3.544),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920,
           2.978, 3.030, 3.077, 3.120, 3.159, 3.196, 3.230, 3.261, 3.291,
           3.319),
}


def nemenyi_cd(M: int, k: int, alpha: float = 0.05) -> float:
    """Critical difference of mean ranks for M models over k folds."""
    if alpha not in _NEMENYI_Q:
        raise UnsupportedError(
            f"alpha {alpha!r} not tabulated; available: "
            f"{sorted(_NEMENYI_Q)}"
        )
    table = _NEMENYI_Q[alpha]
    if not 2 <= M <= len(table) + 1:
        raise UnsupportedError(
            f"critical values tabulated for 2 <= M <= {len(table) + 1},"
            f" got M={M}"
        )
    if k < 1:
        raise DomainError("k must be >= 1")
    q = table[M - 2]
    return float(q * np.sqrt(M * (M + 1) / (6.0 * k)))


@dataclass(frozen=True)
class NemenyiResult:
    cd: float
    mean_ranks: np.ndarray
    significant: np.ndarray  # (M, M) bool, pairwise |rank gap| > CD


def nemenyi(scores, alpha: float = 0.05) -> NemenyiResult:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ShapeError("scores must be (M, k)")
    M, k = scores.shape
    cd = nemenyi_cd(M, k, alpha)
    mean_ranks = _column_ranks(scores).mean(axis=1)
    gap = np.abs(mean_ranks[:, None] - mean_ranks[None, :])
    sig = gap > cd
    np.fill_diagonal(sig, False)
    return NemenyiResult(cd, mean_ranks, sig)


def bootstrap_median_range_diff(
    matrix, n_resamples: int = 10000, seed: int = 0,
    confidence: float = 0.95,
):
    """Bootstrap the gap between the two sources of accuracy spread.

    For a (models x configs) accuracy matrix the statistic is

        median over configs of (max - min across models)
      - median over models  of (max - min across configs)

    resampling rows and columns with replacement. Returns
    (statistic, ci_lo, ci_hi) with a percentile interval.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError("matrix must be 2-D and non-empty")
    if n_resamples < 1:
        raise DomainError("n_resamples must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise DomainError("confidence must be in (0, 1)")

    def stat(mat: np.ndarray) -> float:
        col_range = mat.max(axis=0) - mat.min(axis=0)
        row_range = mat.max(axis=1) - mat.min(axis=1)
        return float(np.median(col_range) - np.median(row_range))

    rng = np.random.default_rng(seed)
    M, C = A.shape
    rows = rng.integers(M, size=(n_resamples, M))
    cols = rng.integers(C, size=(n_resamples, C))
    sub = A[rows[:, :, None], cols[:, None, :]]       # (R, M, C)
    col_ranges = sub.max(axis=1) - sub.min(axis=1)    # (R, C)
    row_ranges = sub.max(axis=2) - sub.min(axis=2)    # (R, M)
    stats = np.median(col_ranges, axis=1) - np.median(row_ranges, axis=1)
    tail = 100.0 * (1.0 - confidence) / 2.0
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return stat(A), float(lo), float(hi)


# ---------------------------------------------------------------------------
# cross-validation

def stratified_fold_ids(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffled stratified fold assignment; per-class counts differ by <= 1
    across folds."""
    labels = np.asarray(labels)
    fold = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for cls in sorted(set(labels.tolist())):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            fold[i] = (j + offset) % k
        offset += idx.size
    return fold


@dataclass
class FoldScores:
    per_fold: list[PairedMetrics]
    k: int
    held_out_ids: Mapping[str, list]

    _METRICS = {
        "oa": lambda m: m.overall_accuracy,
        "mean_f1_macro": lambda m: m.mean_f1_macro,
        "ripeness_accuracy": lambda m: m.ripeness.accuracy,
        "ripeness_f1_macro": lambda m: m.ripeness.f1_macro,
        "ripeness_f1_weighted": lambda m: m.ripeness.f1_weighted,
        "firmness_accuracy": lambda m: m.firmness.accuracy,
        "firmness_f1_macro": lambda m: m.firmness.f1_macro,
        "firmness_f1_weighted": lambda m: m.firmness.f1_weighted,
    }

    def values(self, metric: str) -> np.ndarray:
        if metric not in self._METRICS:
            raise DomainError(f"unknown metric {metric!r}")
        f = self._METRICS[metric]
        return np.array([f(m) for m in self.per_fold])

    def aggregate(self, metric: str) -> dict:
        """Mean, sample std across folds, dispersion coefficient and the
        mean +/- t_{k-1, 0.975} * std interval (std, not std/sqrt(k))."""
        v = self.values(metric)
        mean = float(v.mean())
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        t = float(_sstats.t.ppf(0.975, v.size - 1)) if v.size > 1 else 0.0
        return {
            "mean": mean,
            "std": std,
            "cv": std / mean if mean != 0 else 0.0,
            "ci_lo": mean - t * std,
            "ci_hi": mean + t * std,
        }


def cross_validate(
    config: PipelineConfig, data: TaskData, k: int = 10, seed: int = 0
) -> FoldScores:
    """k-fold stratified CV fitting the full pipeline inside every fold.

    Folds are stratified per task on that task's labels (the two tasks
    train independently); fold i of each task pairs into one PairedMetrics.
    If the smallest class has fewer than k members the fold count drops to
    that size with a warning.
    """
    if k < 2:
        raise DomainError("k must be >= 2")
    min_class = min(
        min(np.unique(data.label(t), return_counts=True)[1].min()
            for t in TASKS),
        len(data),
    )
    k_eff = min(k, int(min_class))
    if k_eff < 2:
        raise CapacityError(
            f"smallest class has {min_class} member(s); cannot stratify"
        )
    if k_eff < k:
        warnings.warn(
            f"reducing fold count from {k} to {k_eff} (smallest class has"
            f" {min_class} members)",
            stacklevel=2,
        )
    folds = {
        t: stratified_fold_ids(
            data.label(t), k_eff,
            np.random.default_rng(derive_seed(seed, "cv-folds", t)),
        )
        for t in TASKS
    }
    per_fold: list[PairedMetrics] = []
    held_out: dict[str, list] = {t: [] for t in TASKS}
    for i in range(k_eff):
        fold_metrics: dict[str, TaskMetrics] = {}
        for t in TASKS:
            train_idx = np.nonzero(folds[t] != i)[0]
            eval_idx = np.nonzero(folds[t] == i)[0]
            assert not set(train_idx.tolist()) & set(eval_idx.tolist())
            cfg = config.reseeded(derive_seed(seed, "cv", t, i))
            pipe = fit_pipeline(cfg, data.X[train_idx],
                                data.label(t)[train_idx])
            y_true = data.label(t)[eval_idx]
            pred = pipe.predict(data.X[eval_idx])
            if t == "firmness":
                mask = y_true != "unknown"
                y_true, pred = y_true[mask], pred[mask]
            fold_metrics[t] = task_metrics(y_true, pred)
            held_out[t].append(tuple(data.ids[int(j)] for j in eval_idx))
        per_fold.append(pair_metrics(fold_metrics["ripeness"],
                                     fold_metrics["firmness"]))
    return FoldScores(per_fold, k_eff, held_out)


# ---------------------------------------------------------------------------
# measurement wrapper

def measure(fn: Callable):
    """Run fn(), returning (result, wall_time_s, artifact_size_bytes)."""
    t0 = time.perf_counter()
    result = fn()
    elapsed = time.perf_counter() - t0
    try:
        size = len(pickle.dumps(result))
    except Exception:
        size = 0
    return result, elapsed, size
