from __future__ import annotations

import numpy as np
import pytest

import spectrabench.ensemble as ensemble_mod
from spectrabench.ensemble import (
    ENSEMBLE_KINDS,
    EnsembleSpec,
    FittedEnsemble,
    fit_ensemble,
)
from spectrabench.errors import CapacityError, ConfigError, DomainError
from spectrabench.models import ModelSpec, register_model
from spectrabench import models as registry
from spectrabench.pipeline import PipelineConfig


def _cfgs(*names, **kw):
    return tuple(PipelineConfig(ModelSpec(n), **kw) for n in names)


def test_kind_enum():
    assert ENSEMBLE_KINDS == ("hard_vote", "soft_vote", "stacking",
                              "blending")


def test_spec_validation():
    base = _cfgs("knn", "decision_tree")
    with pytest.raises(ConfigError):
        EnsembleSpec("ranked_choice", base)
    with pytest.raises(ConfigError):
        EnsembleSpec("hard_vote", base[:1])
    with pytest.raises(ConfigError):
        EnsembleSpec("stacking", base, oof_folds=1)
    with pytest.raises(ConfigError):
        EnsembleSpec("blending", base, holdout_frac=0.0)
    with pytest.raises(ConfigError):
        EnsembleSpec("blending", base, holdout_frac=1.0)


def test_label_shape_mismatch():
    spec = EnsembleSpec("hard_vote", _cfgs("knn", "gaussian_nb"))
    with pytest.raises(DomainError):
        fit_ensemble(spec, np.zeros((4, 2)), np.array(["a", "b"]))


@pytest.mark.parametrize("kind", ENSEMBLE_KINDS)
def test_single_class_training_set(kind):
    X = np.random.default_rng(0).normal(size=(6, 3))
    y = np.array(["ripe"] * 6)
    ens = fit_ensemble(EnsembleSpec(kind, _cfgs("knn", "decision_tree")),
                       X, y)
    probe = np.zeros((4, 3))
    assert (ens.predict(probe) == "ripe").all()
    np.testing.assert_array_equal(ens.predict_proba(probe),
                                  np.ones((4, 1)))


class _StubPipe:
    """Fixed-output stand-in for a fitted base pipeline."""

    def __init__(self, classes, proba=None, labels=None):
        self.classes_ = np.asarray(classes)
        self._proba = None if proba is None else np.asarray(proba, float)
        self._labels = labels
        self.model = self

    def predict_proba(self, X):
        return np.tile(self._proba, (np.asarray(X).shape[0], 1))

    def predict(self, X):
        if self._labels is not None:
            return np.asarray([self._labels] * np.asarray(X).shape[0])
        idx = int(np.argmax(self._proba))
        return np.asarray([self.classes_[idx]] * np.asarray(X).shape[0])


def _manual(kind, pipes, classes=("A", "B")):
    spec = EnsembleSpec(kind, _cfgs("knn", "gaussian_nb"))
    return FittedEnsemble(spec, np.asarray(classes), pipes)


def test_hard_vote_plurality():
    pipes = [_StubPipe(["A", "B"], labels="A"),
             _StubPipe(["A", "B"], labels="A"),
             _StubPipe(["A", "B"], labels="B")]
    ens = _manual("hard_vote", pipes)
    X = np.zeros((5, 2))
    assert (ens.predict(X) == "A").all()
    np.testing.assert_allclose(ens.predict_proba(X)[0], [2 / 3, 1 / 3])


def test_hard_vote_tie_takes_lower_class_index():
    pipes = [_StubPipe(["A", "B"], labels="B"),
             _StubPipe(["A", "B"], labels="A")]
    ens = _manual("hard_vote", pipes)
    assert (ens.predict(np.zeros((3, 2))) == "A").all()


def test_soft_vote_averages_probabilities():
    pipes = [_StubPipe(["A", "B"], proba=[0.6, 0.4]),
             _StubPipe(["A", "B"], proba=[0.2, 0.8])]
    ens = _manual("soft_vote", pipes)
    X = np.zeros((2, 2))
    np.testing.assert_allclose(ens.predict_proba(X),
                               [[0.4, 0.6], [0.4, 0.6]])
    assert (ens.predict(X) == "B").all()


def test_soft_vote_aligns_partial_class_lists():
    # one base never saw class C; its probability mass lands on its own
    # classes and C's column stays zero for that base
    pipes = [_StubPipe(["A", "B", "C"], proba=[0.1, 0.2, 0.7]),
             _StubPipe(["A", "B"], proba=[0.5, 0.5])]
    ens = _manual("soft_vote", pipes, classes=("A", "B", "C"))
    np.testing.assert_allclose(ens.predict_proba(np.zeros((1, 2)))[0],
                               [0.3, 0.35, 0.35])


@pytest.mark.parametrize("kind", ENSEMBLE_KINDS)
def test_all_kinds_learn_separable_data(kind, blobs):
    X, y = blobs(seed=3, n_per=20, n_features=4, spread=5.0,
                 labels=("a", "b", "c"))
    spec = EnsembleSpec(kind, _cfgs("knn", "decision_tree", "gaussian_nb"),
                        seed=11)
    ens = fit_ensemble(spec, X, y)
    probe, truth = blobs(seed=4, n_per=10, n_features=4, spread=5.0,
                         labels=("a", "b", "c"))
    acc = float(np.mean(ens.predict(probe) == truth))
    assert acc >= 0.9
    proba = ens.predict_proba(probe)
    assert proba.shape == (30, 3)
    np.testing.assert_allclose(proba.sum(axis=1), np.ones(30), atol=1e-9)
    assert (proba >= 0).all()


def test_identical_bases_vote_like_one(blobs):
    X, y = blobs(seed=5, n_per=15, n_features=3, spread=4.0)
    base = PipelineConfig(ModelSpec("knn"), seed=2)
    probe, _ = blobs(seed=6, n_per=25, n_features=3, spread=4.0)
    from spectrabench.pipeline import fit_pipeline

    solo = fit_pipeline(base, X, y).predict(probe)
    for kind in ("hard_vote", "soft_vote"):
        ens = fit_ensemble(EnsembleSpec(kind, (base, base, base), seed=2),
                           X, y)
        np.testing.assert_array_equal(ens.predict(probe), solo)


def test_hard_vote_prediction_is_some_base_prediction(blobs):
    X, y = blobs(seed=7, n_per=12, n_features=3, spread=1.0)
    spec = EnsembleSpec("hard_vote",
                        _cfgs("knn", "decision_tree", "gaussian_nb"), seed=0)
    ens = fit_ensemble(spec, X, y)
    probe = np.random.default_rng(8).normal(size=(40, 3))
    votes = np.stack([p.predict(probe) for p in ens.base_pipes])
    out = ens.predict(probe)
    for i in range(40):
        assert out[i] in votes[:, i]


def _tagged_blobs(rng_seed, n_per=12):
    rng = np.random.default_rng(rng_seed)
    X = np.vstack([rng.normal(i * 5.0, 1.0, size=(n_per, 3))
                   for i in range(2)])
    # a unique tag column lets tests recover which rows a fit saw
    X = np.hstack([X, np.arange(2 * n_per, dtype=float)[:, None]])
    y = np.repeat(["a", "b"], n_per)
    return X, y


def test_stacking_meta_rows_come_from_unfit_models(monkeypatch):
    X, y = _tagged_blobs(1)
    seen: list[set] = []
    real = ensemble_mod.fit_pipeline

    def spy(cfg, Xf, yf):
        seen.append(set(Xf[:, -1].astype(int).tolist()))
        return real(cfg, Xf, yf)

    monkeypatch.setattr(ensemble_mod, "fit_pipeline", spy)
    spec = EnsembleSpec("stacking", _cfgs("knn", "gaussian_nb"),
                        oof_folds=3, seed=5)
    fit_ensemble(spec, X, y)

    n = len(X)
    assert len(seen) == 3 * 2 + 2      # per-fold fits then final refits
    oof, final = seen[:6], seen[6:]
    for rows in final:
        assert rows == set(range(n))
    held_out = []
    for f in range(3):
        a, b = oof[2 * f], oof[2 * f + 1]
        assert a == b                   # both bases share the fold split
        assert 0 < len(a) < n
        held_out.append(set(range(n)) - a)
    # the held-out complements partition the data: every row's meta
    # features come from models that never trained on it
    assert set().union(*held_out) == set(range(n))
    assert sum(len(h) for h in held_out) == n


def test_stacking_reduces_folds_with_warning(blobs):
    X, y = blobs(seed=9, n_per=3, n_features=3, spread=5.0)
    spec = EnsembleSpec("stacking", _cfgs("knn", "gaussian_nb"),
                        oof_folds=5, seed=1)
    with pytest.warns(UserWarning, match="reducing stacking folds"):
        fit_ensemble(spec, X, y)


def test_stacking_rejects_near_empty_class():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(7, 3))
    y = np.array(["a"] * 6 + ["b"])
    spec = EnsembleSpec("stacking", _cfgs("knn", "gaussian_nb"), seed=1)
    with pytest.raises(CapacityError):
        fit_ensemble(spec, X, y)


def test_blending_bases_never_see_holdout(monkeypatch):
    X, y = _tagged_blobs(3, n_per=20)
    seen: list[set] = []
    real = ensemble_mod.fit_pipeline

    def spy(cfg, Xf, yf):
        seen.append(set(Xf[:, -1].astype(int).tolist()))
        return real(cfg, Xf, yf)

    monkeypatch.setattr(ensemble_mod, "fit_pipeline", spy)
    spec = EnsembleSpec("blending", _cfgs("knn", "gaussian_nb"),
                        holdout_frac=0.2, seed=5)
    fit_ensemble(spec, X, y)

    assert len(seen) == 2
    assert seen[0] == seen[1]           # both bases share the split
    n = len(X)
    held = n - len(seen[0])
    assert held == pytest.approx(0.2 * n, abs=1)


class _LabelsOnly:
    """Nearest-centroid predictor without probability output."""

    calibrated = False

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        self._centroids = np.stack(
            [X[y == c].mean(axis=0) for c in self.classes_])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        d = ((X[:, None, :] - self._centroids[None]) ** 2).sum(axis=-1)
        return self.classes_[np.argmin(d, axis=1)]

    def importance(self):
        return None


@pytest.fixture
def labels_only_plugin():
    register_model("labels_only", lambda params, seed: _LabelsOnly(),
                   space={}, defaults={})
    yield "labels_only"
    registry._FACTORIES.pop("labels_only", None)
    registry._EXTRA_SPACES.pop("labels_only", None)
    registry._EXTRA_DEFAULTS.pop("labels_only", None)


def test_onehot_fallback_recorded(labels_only_plugin, blobs):
    X, y = blobs(seed=10, n_per=15, n_features=3, spread=4.0)
    spec = EnsembleSpec("soft_vote", _cfgs("knn", labels_only_plugin),
                        seed=4)
    ens = fit_ensemble(spec, X, y)
    assert ens.onehot_bases == (1,)
    probe, truth = blobs(seed=11, n_per=10, n_features=3, spread=4.0)
    assert float(np.mean(ens.predict(probe) == truth)) >= 0.9
    proba = ens.predict_proba(probe)
    np.testing.assert_allclose(proba.sum(axis=1), np.ones(20), atol=1e-9)


@pytest.mark.parametrize("kind", ("stacking", "blending"))
def test_meta_kinds_deterministic(kind, blobs):
    X, y = blobs(seed=12, n_per=18, n_features=4, spread=3.0)
    spec = EnsembleSpec(kind, _cfgs("knn", "decision_tree", "extra_trees"),
                        seed=9)
    probe = np.random.default_rng(13).normal(2.0, 2.0, size=(30, 4))
    a = fit_ensemble(spec, X, y).predict(probe)
    b = fit_ensemble(spec, X, y).predict(probe)
    np.testing.assert_array_equal(a, b)
