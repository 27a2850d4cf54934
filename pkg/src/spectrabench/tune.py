"""Tree-structured Parzen estimator search over model hyperparameters.

The sampler follows the classic recipe: the first ``n_startup`` trials draw
uniformly from the search space; afterwards the history is split at the
gamma quantile of the objective into good and bad sets, per-parameter
Parzen estimators (Gaussian kernels with neighbor-spacing bandwidths; for
categoricals, add-one smoothed frequencies) model each set, and the next
point is the best of ``n_candidates`` draws from the good-set density
ranked by the density ratio l(x)/g(x). Integer parameters are sampled as
reals and rounded; log-scaled parameters are modeled in log space.

Suggestions are deterministic per (seed, trial_index). The search objective
is the mean macro-F1 over the two tasks on a 70/30 stratified validation
split of the training data; a failed trial scores 0.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .models import model_space
from .models.spaces import check_value
from .seeding import derive_seed

N_STARTUP = 10
GAMMA = 0.25
N_CANDIDATES = 24


@dataclass(frozen=True)
class NumericalDomain:
    """Inclusive numeric range; log ranges are modeled in log space."""

    lo: float
    hi: float
    integer: bool = False
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("domain needs lo < hi")
        if self.log and self.lo <= 0:
            raise ConfigError("log domain needs lo > 0")

    def to_unit(self, value: float) -> float:
        return math.log(value) if self.log else float(value)

    def from_unit(self, u: float) -> float:
        value = math.exp(u) if self.log else float(u)
        value = min(max(value, self.lo), self.hi)
        if self.integer:
            value = int(round(value))
            value = int(min(max(value, math.ceil(self.lo)),
                            math.floor(self.hi)))
        return value

    @property
    def unit_bounds(self) -> tuple[float, float]:
        if self.log:
            return math.log(self.lo), math.log(self.hi)
        return float(self.lo), float(self.hi)


@dataclass(frozen=True)
class CategoricalDomain:
    choices: tuple

    def __post_init__(self):
        if len(self.choices) < 1:
            raise ConfigError("categorical domain needs choices")
        object.__setattr__(self, "choices", tuple(self.choices))


@dataclass(frozen=True)
class SearchSpace:
    """Named parameter domains."""

    params: Mapping[str, object]

    def __post_init__(self):
        for name, dom in dict(self.params).items():
            if not isinstance(dom, (NumericalDomain, CategoricalDomain)):
                raise ConfigError(f"parameter {name!r} has an unknown domain")
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_table(cls, table: Mapping[str, tuple]) -> "SearchSpace":
        """Build a space from the domain-tuple notation used by the model
        registry (see models.spaces)."""
        params: dict[str, object] = {}
        for name, dom in table.items():
            kind = dom[0]
            if kind == "int":
                params[name] = NumericalDomain(dom[1], dom[2], integer=True)
            elif kind == "real":
                log = len(dom) > 3 and dom[3] == "log"
                params[name] = NumericalDomain(dom[1], dom[2], log=log)
            elif kind == "cat":
                params[name] = CategoricalDomain(tuple(dom[1]))
            else:
                raise ConfigError(f"unknown domain kind {kind!r}")
        if not params:
            raise ConfigError("empty search space")
        return cls(params)


def space_for_model(name: str) -> SearchSpace:
    table = model_space(name)
    if not table:
        raise ConfigError(f"no search space declared for model {name!r}")
    return SearchSpace.from_table(table)


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    params: Mapping
    objective: float
    failed: bool = False
    # wall-clock seconds; informational only, never part of written reports
    duration_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))


def _uniform_sample(space: SearchSpace, rng: np.random.Generator) -> dict:
    out = {}
    for name in space.params:  # insertion order, deterministic
        dom = space.params[name]
        if isinstance(dom, CategoricalDomain):
            out[name] = dom.choices[int(rng.integers(len(dom.choices)))]
        else:
            lo, hi = dom.unit_bounds
            out[name] = dom.from_unit(rng.uniform(lo, hi))
    return out


def _bandwidths(points: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Neighbor-spacing bandwidths, clipped to a sane range."""
    spread = hi - lo
    if points.size == 1:
        return np.array([spread])
    order = np.argsort(points, kind="stable")
    sorted_pts = points[order]
    gaps = np.diff(sorted_pts)
    bw_sorted = np.empty_like(sorted_pts)
    bw_sorted[0] = gaps[0]
    bw_sorted[-1] = gaps[-1]
    if points.size > 2:
        bw_sorted[1:-1] = np.maximum(gaps[:-1], gaps[1:])
    bw = np.empty_like(bw_sorted)
    bw[order] = bw_sorted
    # the floor must shrink slowly with the component count: repeated
    # near-identical observations otherwise collapse the mixture into a
    # delta spike that keeps re-proposing itself
    floor = spread / min(100.0, 1.0 + points.size)
    return np.clip(bw, max(floor, 1e-12), spread)


class _ParzenNumeric:
    """Gaussian mixture over observations plus one wide prior component."""

    def __init__(self, points: np.ndarray, lo: float, hi: float):
        self.lo = lo
        self.hi = hi
        prior_center = 0.5 * (lo + hi)
        prior_bw = hi - lo
        if points.size:
            centers = np.append(points, prior_center)
            bws = np.append(_bandwidths(points, lo, hi), prior_bw)
        else:
            centers = np.array([prior_center])
            bws = np.array([prior_bw])
        self.centers = centers
        self.bws = bws

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.integers(len(self.centers), size=size)
        draws = rng.normal(self.centers[comp], self.bws[comp])
        return np.clip(draws, self.lo, self.hi)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:, None]
        z = (x - self.centers[None, :]) / self.bws[None, :]
        log_k = -0.5 * z * z - np.log(self.bws[None, :] * math.sqrt(2 * math.pi))
        m = log_k.max(axis=1, keepdims=True)
        return (m[:, 0] + np.log(np.exp(log_k - m).sum(axis=1))
                - math.log(len(self.centers)))


class _ParzenCategorical:
    """Category frequencies with add-one smoothing."""

    def __init__(self, observed: Sequence, choices: tuple):
        counts = np.array(
            [1.0 + sum(1 for v in observed if v == c) for c in choices]
        )
        self.choices = choices
        self.probs = counts / counts.sum()

    def sample(self, rng: np.random.Generator, size: int) -> list:
        idx = rng.choice(len(self.choices), size=size, p=self.probs)
        return [self.choices[int(i)] for i in idx]

    def logpdf_one(self, value) -> float:
        return float(np.log(self.probs[self.choices.index(value)]))


def suggest(history: Sequence[TrialRecord], space: SearchSpace, seed: int,
            trial_index: int) -> dict:
    """Propose the next parameter dict, deterministically.

    Startup trials sample uniformly; later trials maximize the Parzen
    density ratio over n_candidates draws from the good-set model.
    """
    rng = np.random.default_rng(derive_seed(seed, "tpe", trial_index))
    if len(history) < N_STARTUP:
        return _uniform_sample(space, rng)
    ordered = sorted(history, key=lambda t: (-t.objective, t.trial_index))
    n_good = max(1, math.ceil(GAMMA * len(ordered)))
    good = ordered[:n_good]
    bad = ordered[n_good:]
    out = {}
    for name in space.params:
        dom = space.params[name]
        if isinstance(dom, CategoricalDomain):
            l_est = _ParzenCategorical([t.params[name] for t in good],
                                       dom.choices)
            g_est = _ParzenCategorical([t.params[name] for t in bad],
                                       dom.choices)
            cands = l_est.sample(rng, N_CANDIDATES)
            scores = [l_est.logpdf_one(c) - g_est.logpdf_one(c)
                      for c in cands]
            out[name] = cands[int(np.argmax(scores))]
        else:
            lo, hi = dom.unit_bounds
            g_pts = np.array([dom.to_unit(t.params[name]) for t in good])
            b_pts = np.array([dom.to_unit(t.params[name]) for t in bad])
            l_est = _ParzenNumeric(g_pts, lo, hi)
            g_est = _ParzenNumeric(b_pts, lo, hi)
            cands = l_est.sample(rng, N_CANDIDATES)
            scores = l_est.logpdf(cands) - g_est.logpdf(cands)
            out[name] = dom.from_unit(float(cands[int(np.argmax(scores))]))
    return out


@dataclass
class TuneResult:
    best_params: dict
    best_objective: float
    history: list[TrialRecord] = field(default_factory=list)

    @property
    def best_objective_curve(self) -> list[float]:
        """Running maximum of the objective, by trial index."""
        best = -math.inf
        curve = []
        for t in sorted(self.history, key=lambda t: t.trial_index):
            best = max(best, t.objective)
            curve.append(best)
        return curve


def optimize(objective: Callable[[dict, int], float], space: SearchSpace,
             n_trials: int, seed: int) -> TuneResult:
    """Run the TPE loop against an objective(params, trial_index) callable.

    Objectives are maximized. An objective that raises scores 0.0 and the
    trial is recorded as failed rather than aborting the study.
    """
    if n_trials < 1:
        raise DomainError("n_trials must be >= 1")
    history: list[TrialRecord] = []
    for i in range(n_trials):
        params = suggest(history, space, seed, i)
        started = time.perf_counter()
        try:
            value = float(objective(params, i))
            failed = not math.isfinite(value)
            if failed:
                value = 0.0
        except Exception:
            value = 0.0
            failed = True
        history.append(TrialRecord(i, params, value, failed,
                                   time.perf_counter() - started))
    best = max(history, key=lambda t: (t.objective, -t.trial_index))
    return TuneResult(dict(best.params), best.objective, history)


def validate_sample(name: str, params: dict) -> None:
    """Assert a sampled point satisfies the model's declared bounds."""
    table = model_space(name)
    for key, value in params.items():
        check_value(name, key, table[key], value)


# ---------------------------------------------------------------------------
# model-level tuning: mean macro-F1 over both tasks on a held-out 30%

def _stratified_split(labels, holdout_frac: float, rng: np.random.Generator):
    """Per-class shuffled split; every class keeps at least one train row."""
    labels = np.asarray(labels)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for cls in sorted(set(labels.tolist())):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(idx.size * holdout_frac))
        n_val = min(n_val, idx.size - 1)
        val_idx.extend(int(i) for i in idx[:n_val])
        train_idx.extend(int(i) for i in idx[n_val:])
    return np.array(sorted(train_idx)), np.array(sorted(val_idx))


def tune_model(
    model_name: str,
    train,
    n_trials: int,
    seed: int,
    balance=None,
    use_pca: bool = False,
    pca_variance_target: float = 0.95,
    space: SearchSpace | None = None,
    holdout_frac: float = 0.30,
):
    """TPE-search a model's space; returns (TuneResult, final pipelines).

    ``train`` is an evaluate.TaskData over the training partition. Each
    trial fits both task pipelines on the 70% portion (balancing included,
    so nothing leaks into the validation 30%) and scores the mean macro-F1
    on the held-out portion. The best parameters are refit on the full
    training data for the returned per-task pipelines.
    """
    from .balance import BalanceStrategy
    from .evaluate import TASKS, task_metrics
    from .pipeline import PipelineConfig, fit_pipeline
    from .models import ModelSpec

    if balance is None:
        balance = BalanceStrategy()
    if space is None:
        space = space_for_model(model_name)

    splits = {}
    for task in TASKS:
        rng = np.random.default_rng(derive_seed(seed, "tune-split", task))
        splits[task] = _stratified_split(train.label(task), holdout_frac, rng)

    def objective(params: dict, trial_index: int) -> float:
        scores = []
        for task in TASKS:
            tr_idx, va_idx = splits[task]
            cfg = PipelineConfig(
                model=ModelSpec(model_name, params,
                                seed=derive_seed(seed, "trial", trial_index,
                                                 task)),
                balance=balance, use_pca=use_pca,
                pca_variance_target=pca_variance_target,
                seed=derive_seed(seed, "trial", trial_index, task),
            )
            pipe = fit_pipeline(cfg, train.X[tr_idx],
                                train.label(task)[tr_idx])
            y_true = train.label(task)[va_idx]
            pred = pipe.predict(train.X[va_idx])
            if task == "firmness":
                mask = y_true != "unknown"
                y_true, pred = y_true[mask], pred[mask]
            scores.append(task_metrics(y_true, pred).f1_macro)
        return float(np.mean(scores))

    result = optimize(objective, space, n_trials, seed)
    final = {}
    for task in TASKS:
        cfg = PipelineConfig(
            model=ModelSpec(model_name, result.best_params,
                            seed=derive_seed(seed, "final", task)),
            balance=balance, use_pca=use_pca,
            pca_variance_target=pca_variance_target,
            seed=derive_seed(seed, "final", task),
        )
        final[task] = fit_pipeline(cfg, train.X, train.label(task))
    return result, final
