"""Phase drivers: the batch studies behind each CLI subcommand.

Every phase returns a complete report dict (meta + rows + extra sections)
plus the CSV column order and a wall-clock timing log. All computation is
seeded per unit of work as derive_seed(global_seed, phase, unit...), so a
worker pool cannot change results, and rerunning a phase with the same
config, data, and version reproduces the report byte for byte.

Later phases read earlier phases' JSON reports from the output directory
(phase3 picks its preprocessing from phase2, phase4 takes phase3's tuned
parameters, phase5 ranks its base learners by phase3 test OA) and fall
back to documented defaults when those files are absent.
"""
from __future__ import annotations

import os
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from hashlib import sha256

import numpy as np

from . import models as _models
from .balance import BalanceStrategy
from .config import RunConfig, _SYNTH_DEFAULTS
from .dataset import (
    Dataset,
    WavelengthGrid,
    load_feature_table,
    stratified_resplit,
    synth_dataset,
    write_feature_table,
)
from .ensemble import EnsembleSpec, fit_ensemble
from .errors import (
    CapacityError,
    ConfigError,
    DegenerateError,
    IntegrityError,
    SpectraBenchError,
    UnsupportedError,
)
from .evaluate import (
    TaskData,
    cohen_d_paired,
    cross_validate,
    extract_task_data,
    friedman,
    nemenyi,
    score_pipelines,
    successes_from_rate,
    task_metrics,
    wilson_ci,
)
from .explain import (
    band_importance,
    consensus_bands,
    group_ablation,
    permutation_importance,
    rolling_band_importance,
)
from .pipeline import PipelineConfig, fit_pipeline, save_pipeline
from .report import config_hash, read_report, report_header
from .seeding import derive_seed
from .transforms import BandSubset, preset_subset
from .tune import _stratified_split, tune_model

_METRIC_KEYS = (
    "oa",
    "mean_f1_macro",
    "ripeness_accuracy",
    "ripeness_f1_macro",
    "ripeness_f1_weighted",
    "firmness_accuracy",
    "firmness_f1_macro",
    "firmness_f1_weighted",
)

_DEFAULT_PHASE3_PREPROCESSING = {"strategy": "stratified_resplit",
                                 "pca": False}


@dataclass
class PhaseResult:
    name: str
    report: dict
    columns: list
    timings: list


def _workers() -> int:
    raw = os.environ.get("SPECTRABENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(
            f"SPECTRABENCH_THREADS must be an integer, got {raw!r}"
        ) from None


def _map(fn, items):
    """Apply fn over items, optionally on a thread pool; output order is
    input order either way, so scheduling cannot reorder reports."""
    items = list(items)
    w = _workers()
    if w <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))


class Cache:
    """Pickled per-unit results under <out>/cache, keyed by content hash.

    Writes always happen so a later --resume can pick the results up;
    reads only happen when resume is requested.
    """

    def __init__(self, out_dir: str, resume: bool):
        self.dir = os.path.join(out_dir, "cache")
        self.resume = resume

    def _path(self, parts: tuple) -> str:
        digest = sha256(repr(parts).encode("utf-8")).hexdigest()
        return os.path.join(self.dir, f"{digest}.pkl")

    def get(self, *parts):
        if not self.resume:
            return None
        path = self._path(parts)
        if not os.path.exists(path):
            return None
        try:
            with open(path, "rb") as fh:
                return pickle.load(fh)
        except Exception:
            return None  # stale or corrupt entry; recompute

    def put(self, *parts, value) -> None:
        os.makedirs(self.dir, exist_ok=True)
        with open(self._path(parts), "wb") as fh:
            pickle.dump(value, fh)


@dataclass
class RunData:
    ds: Dataset
    subset: BandSubset | None
    used_grid: WavelengthGrid
    train: TaskData
    test: TaskData


def resolve_subset(cfg: RunConfig,
                   grid: WavelengthGrid) -> BandSubset | None:
    if cfg.subset is None:
        return None
    if isinstance(cfg.subset, str):
        sub = preset_subset(cfg.subset)
    else:
        sub = BandSubset(tuple(cfg.subset))
    sub.validate_against(grid)
    return sub


def load_run_data(cfg: RunConfig) -> RunData:
    cfg.require_dataset()
    ds = load_feature_table(cfg.dataset, cfg.manifest)
    subset = resolve_subset(cfg, ds.grid)
    if subset is None:
        used_grid = ds.grid
    else:
        used_grid = WavelengthGrid(subset.wavelengths(ds.grid))
    train = extract_task_data(ds, "train", subset, cfg.reduced_mode)
    test = extract_task_data(ds, "test", subset, cfg.reduced_mode)
    return RunData(ds, subset, used_grid, train, test)


def _model_names(cfg: RunConfig) -> list:
    names = list(cfg.models) if cfg.models else list(_models.available_models())
    for n in names:
        if n not in _models.available_models():
            raise ConfigError(
                f"unknown model {n!r}; registered:"
                f" {_models.available_models()}"
            )
    return names


def _resplit_dataset(cfg: RunConfig, ds: Dataset) -> Dataset:
    """Redraw the train partition with the test set pinned.

    Without configured per-fruit counts the new train set is fruit-balanced
    at the size of the scarcest fruit's non-test pool.
    """
    counts = cfg.resplit_counts
    if counts is None:
        test_ids = set(ds.ids("test"))
        pool: dict[str, int] = {}
        for s in ds.samples:
            if s.sample_id not in test_ids:
                pool[s.fruit] = pool.get(s.fruit, 0) + 1
        if not pool:
            raise CapacityError("no samples outside the test set to resplit")
        floor = min(pool.values())
        counts = {fruit: floor for fruit in pool}
    out = stratified_resplit(ds, ds.ids("test"), counts,
                             derive_seed(cfg.seed, "resplit"))
    if out.ids("test") != ds.ids("test"):
        raise IntegrityError("resplit moved a test sample")
    return out


def _effective_train(cfg: RunConfig, data: RunData, strategy: str,
                     cache: dict) -> tuple[TaskData, str]:
    """Training rows and the in-pipeline balance kind for one strategy.

    Resplit changes dataset membership up front, so inside the pipeline it
    degrades to the identity strategy; everything else passes through.
    """
    if strategy != "stratified_resplit":
        return data.train, strategy
    if "resplit" not in cache:
        ds2 = _resplit_dataset(cfg, data.ds)
        cache["resplit"] = extract_task_data(
            ds2, "train", data.subset, cfg.reduced_mode
        )
    return cache["resplit"], "original"


def _pipe_config(cfg: RunConfig, model_name: str, params: dict,
                 balance_kind: str, use_pca: bool, seed: int) -> PipelineConfig:
    return PipelineConfig(
        model=_models.ModelSpec(model_name, params, seed=seed),
        balance=BalanceStrategy(balance_kind),
        use_pca=use_pca,
        pca_variance_target=cfg.pca_variance_target,
        seed=seed,
    )


def _metrics_row(pm) -> dict:
    return {
        "oa": pm.overall_accuracy,
        "mean_f1_macro": pm.mean_f1_macro,
        "ripeness_accuracy": pm.ripeness.accuracy,
        "ripeness_f1_macro": pm.ripeness.f1_macro,
        "ripeness_f1_weighted": pm.ripeness.f1_weighted,
        "firmness_accuracy": pm.firmness.accuracy,
        "firmness_f1_macro": pm.firmness.f1_macro,
        "firmness_f1_weighted": pm.firmness.f1_weighted,
    }


def _fit_and_score(pcfg: PipelineConfig, train: TaskData, test: TaskData):
    pipe_r = fit_pipeline(pcfg, train.X, train.y_ripeness)
    pipe_f = fit_pipeline(pcfg, train.X, train.y_firmness)
    return score_pipelines(pipe_r, pipe_f, test), pipe_r, pipe_f


def _validation_oa(pcfg: PipelineConfig, td: TaskData, seed: int) -> float:
    """Leak-free cell score: refit on 70% of the rows, accuracy on the 30%.

    Firmness rows labeled unknown stay in training but never enter the
    scored denominator.
    """
    accs = []
    for task in ("ripeness", "firmness"):
        y = td.label(task)
        rng = np.random.default_rng(derive_seed(seed, "val-split", task))
        tr_idx, va_idx = _stratified_split(y, 0.30, rng)
        pipe = fit_pipeline(
            pcfg.reseeded(derive_seed(seed, "val-fit", task)),
            td.X[tr_idx], y[tr_idx],
        )
        yv = y[va_idx]
        mask = yv != "unknown" if task == "firmness" else np.ones(
            yv.size, dtype=bool
        )
        if not mask.any():
            accs.append(0.0)
            continue
        pred = pipe.predict(td.X[va_idx][mask])
        accs.append(task_metrics(yv[mask], pred).accuracy)
    return 0.5 * (accs[0] + accs[1])


def _meta(cfg: RunConfig, phase: str, provenance: str) -> tuple[dict, str]:
    h = config_hash(cfg.semantic_dict())
    return report_header(phase, h, cfg.seed, provenance), h


# ---------------------------------------------------------------- phases

def phase1(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Defaults baseline: every model, original split, no balancing or PCA."""
    data = load_run_data(cfg)
    meta, h = _meta(cfg, "phase1", data.ds.provenance)
    cache = Cache(cfg.out_dir, resume)
    timings: list = []

    def run(name: str) -> dict:
        key = (h, "phase1", name, data.ds.provenance)
        hit = cache.get(*key)
        if hit is not None:
            return hit
        t0 = time.perf_counter()
        seed = derive_seed(cfg.seed, "phase1", name)
        pcfg = _pipe_config(cfg, name, {}, "original", False, seed)
        pm, _, _ = _fit_and_score(pcfg, data.train, data.test)
        row = {"model": name, **_metrics_row(pm)}
        timings.append((f"phase1/{name}", time.perf_counter() - t0))
        cache.put(*key, value=row)
        return row

    rows = _map(run, _model_names(cfg))
    report = {"meta": meta, "rows": rows}
    return PhaseResult("phase1", report, ["model", *_METRIC_KEYS], timings)


def phase2(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Full factorial balancing strategy x PCA x model grid.

    Each cell reports test metrics plus a leak-free validation OA; cell
    failures are recorded as rows with an error message and the grid keeps
    going. The spread summary feeds the bootstrap comparison of
    model-induced vs preprocessing-induced accuracy ranges.
    """
    data = load_run_data(cfg)
    meta, h = _meta(cfg, "phase2", data.ds.provenance)
    cache = Cache(cfg.out_dir, resume)
    shared: dict = {}
    timings: list = []
    names = _model_names(cfg)

    cells = [
        (strategy, pca, model)
        for strategy in cfg.strategies
        for pca in cfg.pca
        for model in names
    ]

    def run(cell) -> dict:
        strategy, pca, model = cell
        key = (h, "phase2", strategy, pca, model, data.ds.provenance)
        hit = cache.get(*key)
        if hit is not None:
            return hit
        t0 = time.perf_counter()
        base = {"strategy": strategy, "pca": pca, "model": model}
        try:
            train_eff, kind = _effective_train(cfg, data, strategy, shared)
            seed = derive_seed(cfg.seed, "phase2", strategy, pca, model)
            pcfg = _pipe_config(cfg, model, {}, kind, pca, seed)
            pm, _, _ = _fit_and_score(pcfg, train_eff, data.test)
            row = {
                **base,
                **_metrics_row(pm),
                "validation_oa": _validation_oa(pcfg, train_eff, seed),
                "error": None,
            }
        except SpectraBenchError as e:
            row = {**base, "error": str(e)}
        timings.append(
            (f"phase2/{strategy}/pca={pca}/{model}",
             time.perf_counter() - t0)
        )
        cache.put(*key, value=row)
        return row

    # resplit membership is shared state; materialize it before fanning out
    if "stratified_resplit" in cfg.strategies:
        _effective_train(cfg, data, "stratified_resplit", shared)
    rows = _map(run, cells)

    best = []
    for model in names:
        mine = [r for r in rows if r["model"] == model and not r.get("error")]
        if not mine:
            best.append({"model": model, "strategy": None, "pca": None,
                         "oa": None})
            continue
        top = max(mine, key=lambda r: r["oa"])
        best.append({"model": model, "strategy": top["strategy"],
                     "pca": top["pca"], "oa": top["oa"]})

    spread = _phase2_spread(cfg, rows, names)

    report = {"meta": meta, "rows": rows, "best": best, "spread": spread}
    columns = ["strategy", "pca", "model", *_METRIC_KEYS,
               "validation_oa", "error"]
    return PhaseResult("phase2", report, columns, timings)


def _phase2_spread(cfg: RunConfig, rows: list, names: list) -> dict:
    """Median accuracy ranges across models vs across preprocessing cells,
    with a bootstrap CI on their difference."""
    configs = [(s, p) for s in cfg.strategies for p in cfg.pca]
    ok = {(r["strategy"], r["pca"], r["model"]): r["oa"]
          for r in rows if not r.get("error")}
    kept = [m for m in names
            if all((s, p, m) in ok for s, p in configs)]
    if len(kept) < 2 or len(configs) < 2:
        return {"note": "needs >= 2 models and >= 2 grid cells without"
                        " errors", "models": kept}
    matrix = np.array([[ok[(s, p, m)] for s, p in configs] for m in kept])
    per_config_range = matrix.max(axis=0) - matrix.min(axis=0)
    per_model_range = matrix.max(axis=1) - matrix.min(axis=1)
    from .evaluate import bootstrap_median_range_diff
    stat, lo, hi = bootstrap_median_range_diff(
        matrix, n_resamples=cfg.bootstrap_resamples,
        seed=derive_seed(cfg.seed, "phase2", "bootstrap"),
    )
    return {
        "models": kept,
        "configs": [{"strategy": s, "pca": p} for s, p in configs],
        "median_range_across_models": float(np.median(per_config_range)),
        "median_range_across_configs": float(np.median(per_model_range)),
        "range_diff": float(stat),
        "range_diff_ci": [float(lo), float(hi)],
        "n_resamples": cfg.bootstrap_resamples,
    }


def _phase3_preprocessing(cfg: RunConfig) -> dict:
    """The (strategy, pca) every tuning study runs under.

    Taken from the phase2 report when one exists in the output directory:
    the cell with the best test OA, or best validation OA under
    select_on=validation. Falls back to a fixed default otherwise.
    """
    p2 = read_report(cfg.out_dir, "phase2")
    if p2 and p2.get("rows"):
        key = "validation_oa" if cfg.select_on == "validation" else "oa"
        candidates = [r for r in p2["rows"]
                      if not r.get("error") and r.get(key) is not None]
        if candidates:
            top = max(candidates, key=lambda r: r[key])
            return {"strategy": top["strategy"], "pca": bool(top["pca"]),
                    "selected_on": cfg.select_on, "source": "phase2"}
    return {**_DEFAULT_PHASE3_PREPROCESSING,
            "selected_on": cfg.select_on, "source": "default"}


def phase3(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Sequential model-based hyperparameter search per model.

    Runs under one preprocessing configuration for the whole study, fits
    the best parameters on the full training rows, scores the benchmark
    test split, and archives the fitted per-task pipelines.
    """
    data = load_run_data(cfg)
    meta, h = _meta(cfg, "phase3", data.ds.provenance)
    pre = _phase3_preprocessing(cfg)
    meta = {**meta, "preprocessing": pre}
    cache = Cache(cfg.out_dir, resume)
    shared: dict = {}
    train_eff, balance_kind = _effective_train(
        cfg, data, pre["strategy"], shared
    )
    timings: list = []
    history: dict = {}
    model_dir = os.path.join(cfg.out_dir, "models")

    def run(name: str) -> dict:
        key = (h, "phase3", name, data.ds.provenance,
               pre["strategy"], pre["pca"])
        hit = cache.get(*key)
        if hit is not None:
            row, hist = hit
            history[name] = hist
            return row
        t0 = time.perf_counter()
        seed = derive_seed(cfg.seed, "phase3", name)
        result, pipes = tune_model(
            name, train_eff, n_trials=cfg.n_trials, seed=seed,
            balance=BalanceStrategy(balance_kind), use_pca=pre["pca"],
            pca_variance_target=cfg.pca_variance_target,
        )
        pm = score_pipelines(pipes["ripeness"], pipes["firmness"], data.test)
        os.makedirs(model_dir, exist_ok=True)
        for task, pipe in pipes.items():
            save_pipeline(
                pipe, os.path.join(model_dir, f"phase3_{name}_{task}.pipe")
            )
        row = {
            "model": name,
            "best_objective": result.best_objective,
            "best_params": dict(result.best_params),
            "n_trials": cfg.n_trials,
            **_metrics_row(pm),
        }
        hist = {
            "trials": [
                {"trial_index": t.trial_index, "params": dict(t.params),
                 "objective": t.objective, "failed": t.failed}
                for t in result.history
            ],
            "best_objective_curve": list(result.best_objective_curve),
        }
        history[name] = hist
        timings.append((f"phase3/{name}", time.perf_counter() - t0))
        cache.put(*key, value=(row, hist))
        return row

    rows = _map(run, _model_names(cfg))
    report = {"meta": meta, "rows": rows,
              "history": {k: history[k] for k in sorted(history)}}
    columns = ["model", "best_objective", "n_trials", *_METRIC_KEYS,
               "best_params"]
    return PhaseResult("phase3", report, columns, timings)


def _phase3_params(cfg: RunConfig) -> tuple[dict, dict]:
    """Tuned parameters per model plus the preprocessing they came from."""
    p3 = read_report(cfg.out_dir, "phase3")
    if not p3:
        return {}, {**_DEFAULT_PHASE3_PREPROCESSING, "source": "default"}
    params = {r["model"]: r.get("best_params", {}) for r in p3.get("rows", [])}
    pre = p3.get("meta", {}).get("preprocessing",
                                 dict(_DEFAULT_PHASE3_PREPROCESSING))
    return params, {"strategy": pre["strategy"], "pca": bool(pre["pca"]),
                    "source": "phase3"}


def phase4(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """k-fold cross-validation plus the statistics battery.

    Per model: fold-level metrics, mean +/- t-interval aggregates, a test
    refit with a Wilson interval on its OA. Across models: Friedman and
    Nemenyi on per-fold mean macro-F1, and paired Cohen's d between the
    ripeness and firmness test accuracy columns.
    """
    data = load_run_data(cfg)
    meta, h = _meta(cfg, "phase4", data.ds.provenance)
    params, pre = _phase3_params(cfg)
    meta = {**meta, "preprocessing": pre,
            "params_source": "phase3" if params else "defaults"}
    cache = Cache(cfg.out_dir, resume)
    shared: dict = {}
    train_eff, balance_kind = _effective_train(
        cfg, data, pre["strategy"], shared
    )
    timings: list = []
    names = _model_names(cfg)
    folds_section: dict = {}
    fold_matrix: dict = {}

    def run(name: str) -> dict:
        key = (h, "phase4", name, data.ds.provenance, pre["strategy"],
               pre["pca"], repr(sorted(params.get(name, {}).items())))
        hit = cache.get(*key)
        if hit is not None:
            row, folds, series = hit
            folds_section[name] = folds
            fold_matrix[name] = series
            return row
        t0 = time.perf_counter()
        seed = derive_seed(cfg.seed, "phase4", name)
        pcfg = _pipe_config(cfg, name, params.get(name, {}), balance_kind,
                            pre["pca"], seed)
        fs = cross_validate(pcfg, train_eff, k=cfg.cv_k, seed=seed)
        folds = [_metrics_row(pm) for pm in fs.per_fold]
        oa = fs.aggregate("oa")
        f1 = fs.aggregate("mean_f1_macro")
        pm_test, _, _ = _fit_and_score(pcfg, train_eff, data.test)
        n_test = len(data.test)
        successes = successes_from_rate(pm_test.overall_accuracy, n_test)
        w_lo, w_hi = wilson_ci(successes, n_test)
        row = {
            "model": name,
            "k": fs.k,
            "oa_mean": oa["mean"], "oa_std": oa["std"],
            "oa_ci_lo": oa["ci_lo"], "oa_ci_hi": oa["ci_hi"],
            "f1_mean": f1["mean"], "f1_std": f1["std"],
            "f1_ci_lo": f1["ci_lo"], "f1_ci_hi": f1["ci_hi"],
            "test_oa": pm_test.overall_accuracy,
            "test_ripeness_accuracy": pm_test.ripeness.accuracy,
            "test_firmness_accuracy": pm_test.firmness.accuracy,
            "wilson_lo": w_lo, "wilson_hi": w_hi, "n_test": n_test,
        }
        series = fs.values("mean_f1_macro").tolist()
        folds_section[name] = folds
        fold_matrix[name] = series
        timings.append((f"phase4/{name}", time.perf_counter() - t0))
        cache.put(*key, value=(row, folds, series))
        return row

    rows = _map(run, names)
    stats = _phase4_stats(cfg, rows, names, fold_matrix)
    report = {"meta": meta, "rows": rows,
              "folds": {k: folds_section[k] for k in sorted(folds_section)},
              "stats": stats}
    columns = ["model", "k", "oa_mean", "oa_std", "oa_ci_lo", "oa_ci_hi",
               "f1_mean", "f1_std", "f1_ci_lo", "f1_ci_hi", "test_oa",
               "test_ripeness_accuracy", "test_firmness_accuracy",
               "wilson_lo", "wilson_hi", "n_test"]
    return PhaseResult("phase4", report, columns, timings)


def _phase4_stats(cfg: RunConfig, rows: list, names: list,
                  fold_matrix: dict) -> dict:
    if len(names) < 2:
        return {"note": "statistics across models need >= 2 models"}
    lengths = {len(fold_matrix[n]) for n in names}
    if len(lengths) != 1:
        return {"note": "fold counts differ across models; rank tests"
                        " skipped", "fold_counts":
                {n: len(fold_matrix[n]) for n in names}}
    matrix = np.array([fold_matrix[n] for n in names])
    out: dict = {"metric": "mean_f1_macro", "models": list(names)}
    fr = friedman(matrix)
    out["friedman"] = {
        "chi2": fr.chi2, "dof": fr.dof, "p_value": fr.p_value,
        "mean_ranks": {n: float(r) for n, r in zip(names, fr.mean_ranks)},
    }
    try:
        ne = nemenyi(matrix, alpha=0.05)
        pairs = [
            [names[i], names[j]]
            for i in range(len(names)) for j in range(i + 1, len(names))
            if ne.significant[i, j]
        ]
        out["nemenyi"] = {"alpha": 0.05, "cd": ne.cd,
                          "significant_pairs": pairs}
    except UnsupportedError as e:
        out["nemenyi"] = {"note": str(e)}
    ra = np.array([r["test_ripeness_accuracy"] for r in rows])
    fa = np.array([r["test_firmness_accuracy"] for r in rows])
    try:
        out["cohen_d_ripeness_vs_firmness"] = cohen_d_paired(ra, fa)
    except DegenerateError as e:
        out["cohen_d_ripeness_vs_firmness"] = None
        out["cohen_d_note"] = str(e)
    return out


def phase5(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Ensembles of the strongest tuned models on both split variants.

    Base learners are the top models by phase3 test OA (phase1 OA, then
    registry order, as fallbacks), each with its tuned parameters. Every
    configured ensemble kind runs on the original split and on the
    fruit-balanced resplit.
    """
    data = load_run_data(cfg)
    meta, h = _meta(cfg, "phase5", data.ds.provenance)
    params, pre = _phase3_params(cfg)
    bases, base_source = _phase5_bases(cfg)
    balance_kind = ("original" if pre["strategy"] == "stratified_resplit"
                    else pre["strategy"])
    meta = {**meta, "bases": bases, "base_source": base_source,
            "preprocessing": pre}
    cache = Cache(cfg.out_dir, resume)
    shared: dict = {}
    timings: list = []

    base_cfgs = tuple(
        _pipe_config(cfg, name, params.get(name, {}), balance_kind,
                     pre["pca"], 0)
        for name in bases
    )

    cells = [(kind, variant) for kind in cfg.ensemble_kinds
             for variant in ("original", "resplit")]

    def run(cell) -> dict:
        kind, variant = cell
        key = (h, "phase5", kind, variant, data.ds.provenance,
               tuple(bases), pre["strategy"], pre["pca"])
        hit = cache.get(*key)
        if hit is not None:
            return hit
        t0 = time.perf_counter()
        base_row = {"kind": kind, "dataset": variant}
        try:
            if variant == "resplit":
                train_eff, _ = _effective_train(
                    cfg, data, "stratified_resplit", shared
                )
            else:
                train_eff = data.train
            seed = derive_seed(cfg.seed, "phase5", kind, variant)
            spec = EnsembleSpec(kind=kind, base=base_cfgs, seed=seed)
            ens_r = fit_ensemble(spec, train_eff.X, train_eff.y_ripeness)
            ens_f = fit_ensemble(spec, train_eff.X, train_eff.y_firmness)
            pm = score_pipelines(ens_r, ens_f, data.test)
            row = {
                **base_row,
                **_metrics_row(pm),
                "onehot_bases_ripeness": len(ens_r.onehot_bases),
                "onehot_bases_firmness": len(ens_f.onehot_bases),
                "error": None,
            }
        except SpectraBenchError as e:
            row = {**base_row, "error": str(e)}
        timings.append(
            (f"phase5/{kind}/{variant}", time.perf_counter() - t0)
        )
        cache.put(*key, value=row)
        return row

    rows = _map(run, cells)
    report = {"meta": meta, "rows": rows}
    columns = ["kind", "dataset", *_METRIC_KEYS, "onehot_bases_ripeness",
               "onehot_bases_firmness", "error"]
    return PhaseResult("phase5", report, columns, timings)


def _phase5_bases(cfg: RunConfig) -> tuple[list, str]:
    p3 = read_report(cfg.out_dir, "phase3")
    if p3 and p3.get("rows"):
        ranked = sorted(p3["rows"], key=lambda r: (-r["oa"], r["model"]))
        return [r["model"] for r in ranked[:cfg.top_n_bases]], "phase3"
    p1 = read_report(cfg.out_dir, "phase1")
    if p1 and p1.get("rows"):
        ranked = sorted(p1["rows"], key=lambda r: (-r["oa"], r["model"]))
        return [r["model"] for r in ranked[:cfg.top_n_bases]], "phase1"
    return list(_models.available_models())[:cfg.top_n_bases], "registry"


def phase6(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Explainability study for one model on the untransformed feature map.

    PCA is forced off here: band attribution needs feature columns that
    still mean (transform, band). Produces impurity and permutation
    importances per task, per-band aggregates, the cross-task consensus
    bands below the red-edge cutoff, transform-group ablations, and a
    rolling per-band summary.
    """
    data = load_run_data(cfg)
    meta, h = _meta(cfg, "phase6", data.ds.provenance)
    params, pre = _phase3_params(cfg)
    name = cfg.explain_model
    if name not in _models.available_models():
        raise ConfigError(f"unknown explain_model {name!r}")
    balance_kind = ("original" if pre["strategy"] == "stratified_resplit"
                    else pre["strategy"])
    meta = {**meta, "model": name, "metric": cfg.explain_metric,
            "n_repeats": cfg.n_repeats, "pca_forced_off": bool(pre["pca"]),
            "preprocessing": {**pre, "pca": False}}
    cache = Cache(cfg.out_dir, resume)
    shared: dict = {}
    train_eff, _ = _effective_train(cfg, data, pre["strategy"], shared)
    # the strategy above only resolves membership; balancing stays in-pipe
    timings: list = []
    key = (h, "phase6", name, data.ds.provenance, pre["strategy"],
           balance_kind, repr(sorted(params.get(name, {}).items())))
    hit = cache.get(*key)
    if hit is not None:
        report, columns = hit
        return PhaseResult("phase6", report, columns, timings)

    t0 = time.perf_counter()
    B = data.used_grid.band_count
    per_task: dict = {}
    perm_bands = {}
    imp_bands = {}
    ablation = {}
    for task in ("ripeness", "firmness"):
        seed = derive_seed(cfg.seed, "phase6", task)
        pcfg = _pipe_config(cfg, name, params.get(name, {}), balance_kind,
                            False, seed)
        y_tr = train_eff.label(task)
        pipe = fit_pipeline(pcfg, train_eff.X, y_tr)
        y_te = data.test.label(task)
        if task == "firmness":
            mask = y_te != "unknown"
        else:
            mask = np.ones(y_te.size, dtype=bool)
        perm = permutation_importance(
            pipe, data.test.X[mask], y_te[mask],
            metric=cfg.explain_metric, n_repeats=cfg.n_repeats,
            seed=derive_seed(cfg.seed, "phase6", "perm", task),
        )
        perm_band = band_importance(perm, data.test.group_map)
        perm_bands[task] = perm_band
        imp = pipe.model.importance()
        imp_band = (band_importance(imp, data.test.group_map)
                    if imp is not None else None)
        imp_bands[task] = imp_band
        roll_mean, roll_std = rolling_band_importance(
            perm_band, cfg.rolling_window
        )
        ablation[task] = group_ablation(
            pcfg, train_eff.X, y_tr, data.test.X[mask], y_te[mask],
            data.test.group_map, metric=cfg.explain_metric,
        )
        per_task[task] = {
            "permutation_band": perm_band.tolist(),
            "impurity_band": None if imp_band is None else imp_band.tolist(),
            "rolling_mean": roll_mean.tolist(),
            "rolling_std": roll_std.tolist(),
        }

    source = cfg.consensus_source
    note = None
    if source == "impurity" and any(v is None for v in imp_bands.values()):
        # the model has no impurity attribution; permutation always exists
        source = "permutation"
        note = (f"model {name!r} has no impurity importances; "
                "consensus fell back to permutation")
    chosen = imp_bands if source == "impurity" else perm_bands
    try:
        sel = consensus_bands(
            chosen["ripeness"], chosen["firmness"], data.used_grid,
            wavelength_cutoff_nm=cfg.consensus_cutoff_nm,
            top_n=cfg.consensus_top_n,
        )
        consensus = {
            "band_indices": list(sel.band_indices),
            "wavelengths_nm": list(sel.wavelengths_nm),
            "joint_ranks": list(sel.joint_ranks),
            "cutoff_nm": cfg.consensus_cutoff_nm,
            "source": source,
        }
        if note:
            consensus["note"] = note
    except CapacityError as e:
        consensus = {"note": str(e), "cutoff_nm": cfg.consensus_cutoff_nm,
                     "source": source}

    rows = []
    for b in range(B):
        row = {
            "band_index": b,
            "wavelength_nm": float(data.used_grid.wavelengths_nm[b]),
        }
        for task in ("ripeness", "firmness"):
            blob = per_task[task]
            row[f"perm_{task}"] = blob["permutation_band"][b]
            row[f"impurity_{task}"] = (
                None if blob["impurity_band"] is None
                else blob["impurity_band"][b]
            )
            row[f"rolling_mean_{task}"] = blob["rolling_mean"][b]
            row[f"rolling_std_{task}"] = blob["rolling_std"][b]
        rows.append(row)

    timings.append((f"phase6/{name}", time.perf_counter() - t0))
    report = {"meta": meta, "rows": rows, "consensus": consensus,
              "ablation": ablation, "importance": per_task}
    columns = ["band_index", "wavelength_nm",
               "perm_ripeness", "perm_firmness",
               "impurity_ripeness", "impurity_firmness",
               "rolling_mean_ripeness", "rolling_std_ripeness",
               "rolling_mean_firmness", "rolling_std_firmness"]
    cache.put(*key, value=(report, columns))
    return PhaseResult("phase6", report, columns, timings)


def bands(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Band-subset study: defaults baseline and tuned runs on a reduced
    band set, with recovery relative to the full spectrum.

    Baseline recovery compares default-parameter models on the subset vs
    the full spectrum, both trained here. Tuned recovery compares the
    subset study's tuned OA against the full-spectrum tuned OA from an
    existing phase3 report, when one is present.
    """
    if cfg.subset is None:
        raise ConfigError("the bands study needs a 'subset' in the config"
                          " (preset name or band index list)")
    data = load_run_data(cfg)  # subset features
    full_train = extract_task_data(data.ds, "train", None, cfg.reduced_mode)
    full_test = extract_task_data(data.ds, "test", None, cfg.reduced_mode)
    meta, h = _meta(cfg, "bands", data.ds.provenance)
    sub_idx = list(data.subset.indices)
    meta = {
        **meta,
        "subset": sub_idx,
        "subset_wavelengths_nm": [
            float(w) for w in data.used_grid.wavelengths_nm
        ],
        "reduced_mode": cfg.reduced_mode,
    }
    p3 = read_report(cfg.out_dir, "phase3")
    full_tuned = {r["model"]: r["oa"] for r in (p3 or {}).get("rows", [])}
    cache = Cache(cfg.out_dir, resume)
    timings: list = []

    def run(name: str) -> dict:
        key = (h, "bands", name, data.ds.provenance, tuple(sub_idx),
               cfg.reduced_mode)
        hit = cache.get(*key)
        if hit is not None:
            return hit
        t0 = time.perf_counter()
        seed_s = derive_seed(cfg.seed, "bands", "baseline", name)
        pcfg_s = _pipe_config(cfg, name, {}, "original", False, seed_s)
        pm_sub, _, _ = _fit_and_score(pcfg_s, data.train, data.test)
        seed_f = derive_seed(cfg.seed, "bands", "full", name)
        pcfg_f = _pipe_config(cfg, name, {}, "original", False, seed_f)
        pm_full, _, _ = _fit_and_score(pcfg_f, full_train, full_test)
        recovery = (
            100.0 * pm_sub.overall_accuracy / pm_full.overall_accuracy
            if pm_full.overall_accuracy > 0 else None
        )
        result, pipes = tune_model(
            name, data.train, n_trials=cfg.n_trials,
            seed=derive_seed(cfg.seed, "bands", "tune", name),
        )
        pm_tuned = score_pipelines(
            pipes["ripeness"], pipes["firmness"], data.test
        )
        ft = full_tuned.get(name)
        tuned_recovery = (
            100.0 * pm_tuned.overall_accuracy / ft
            if ft is not None and ft > 0 else None
        )
        row = {
            "model": name,
            "oa": pm_sub.overall_accuracy,
            "mean_f1_macro": pm_sub.mean_f1_macro,
            "full_oa": pm_full.overall_accuracy,
            "baseline_recovery_pct": recovery,
            "tuned_oa": pm_tuned.overall_accuracy,
            "tuned_best_params": dict(result.best_params),
            "full_tuned_oa": ft,
            "tuned_recovery_pct": tuned_recovery,
        }
        timings.append((f"bands/{name}", time.perf_counter() - t0))
        cache.put(*key, value=row)
        return row

    rows = _map(run, _model_names(cfg))
    report = {"meta": meta, "rows": rows}
    columns = ["model", "oa", "mean_f1_macro", "full_oa",
               "baseline_recovery_pct", "tuned_oa", "full_tuned_oa",
               "tuned_recovery_pct", "tuned_best_params"]
    return PhaseResult("bands", report, columns, timings)


def synth(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Write a synthetic labeled dataset (feature table plus manifest)."""
    blob = cfg.synth if cfg.synth is not None else dict(_SYNTH_DEFAULTS)
    ds = synth_dataset(
        seed=cfg.seed,
        class_counts=blob["class_counts"],
        band_count=blob["band_count"],
        separation=blob["separation"],
        test_fraction=blob["test_fraction"],
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    table = os.path.join(cfg.out_dir, "synthetic.csv")
    manifest = os.path.join(cfg.out_dir, "synthetic.manifest.json")
    write_feature_table(ds, table, manifest)
    meta, _ = _meta(cfg, "synth", ds.provenance)
    meta = {**meta, "table": os.path.basename(table),
            "manifest": os.path.basename(manifest),
            "separation": blob["separation"],
            "band_count": blob["band_count"]}
    rows = _split_summary(ds)
    return PhaseResult("synth", {"meta": meta, "rows": rows},
                       ["split", "n", "ripeness_counts", "firmness_counts"],
                       [])


def _split_summary(ds: Dataset) -> list:
    rows = []
    splits = sorted({s.split for s in ds.samples})
    for split in splits:
        samples = ds.subset(split)
        rip: dict = {}
        firm: dict = {}
        for s in samples:
            rip[s.ripeness] = rip.get(s.ripeness, 0) + 1
            fc = s.firmness_class
            firm[fc] = firm.get(fc, 0) + 1
        rows.append({
            "split": split,
            "n": len(samples),
            "ripeness_counts": {k: rip[k] for k in sorted(rip)},
            "firmness_counts": {k: firm[k] for k in sorted(firm)},
        })
    return rows


def validate(cfg: RunConfig, resume: bool = False) -> PhaseResult:
    """Load the dataset and report integrity and distribution summaries."""
    cfg.require_dataset()
    ds = load_feature_table(cfg.dataset, cfg.manifest)
    meta, _ = _meta(cfg, "validate", ds.provenance)
    warnings: list = []
    for task in ("ripeness", "firmness"):
        counts: dict = {}
        for s in ds.train:
            label = s.ripeness if task == "ripeness" else s.firmness_class
            counts[label] = counts.get(label, 0) + 1
        for label, n in sorted(counts.items()):
            if n < 2 and label != "unknown":
                warnings.append(
                    f"train class {label!r} ({task}) has {n} sample(s)"
                )
    if not ds.subset("test"):
        warnings.append("dataset has no test split")
    grid = ds.grid
    meta = {
        **meta,
        "n_samples": len(ds),
        "band_count": grid.band_count,
        "wavelength_min_nm": float(grid.wavelengths_nm[0]),
        "wavelength_max_nm": float(grid.wavelengths_nm[-1]),
        "fruits": sorted({s.fruit for s in ds.samples}),
        "warnings": warnings,
    }
    rows = _split_summary(ds)
    return PhaseResult("validate", {"meta": meta, "rows": rows},
                       ["split", "n", "ripeness_counts", "firmness_counts"],
                       [])


PHASES = {
    "phase1": phase1,
    "phase2": phase2,
    "phase3": phase3,
    "phase4": phase4,
    "phase5": phase5,
    "phase6": phase6,
    "bands": bands,
    "synth": synth,
    "validate": validate,
}
