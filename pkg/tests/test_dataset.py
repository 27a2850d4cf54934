from __future__ import annotations

import numpy as np
import pytest

from spectrabench.dataset import (
    Dataset,
    Sample,
    WavelengthGrid,
    bin_firmness,
    load_feature_table,
    load_manifest,
    stratified_resplit,
    synth_dataset,
    write_feature_table,
    write_manifest,
)
from spectrabench.errors import (
    CapacityError,
    DomainError,
    IntegrityError,
    LabelError,
    SchemaError,
    ShapeError,
)
from spectrabench.models import ModelSpec, fit as fit_model

CLASS_ORDER = {"soft": 0, "medium": 1, "firm": 2}


def _grid(n=6, lo=400.0, hi=900.0):
    return WavelengthGrid(np.linspace(lo, hi, n))


def _sample(sid, split="train", fruit="kiwi", ripeness="perfect", gf=500.0,
            n_bands=6):
    return Sample(sid, fruit, ripeness, gf, split,
                  np.linspace(0.1, 0.9, n_bands))


def test_bin_firmness_published_boundaries():
    assert bin_firmness(1000) == "soft"
    assert bin_firmness(1001) == "medium"
    assert bin_firmness(2500) == "medium"
    assert bin_firmness(2501) == "firm"


def test_bin_firmness_zero_and_missing():
    assert bin_firmness(0) == "soft"
    assert bin_firmness(None) == "unknown"


def test_bin_firmness_fractional_gap_falls_to_lower_class():
    assert bin_firmness(1000.5) == "soft"
    assert bin_firmness(2500.5) == "medium"


def test_bin_firmness_rejects_negative_and_nonfinite():
    with pytest.raises(DomainError):
        bin_firmness(-1.0)
    with pytest.raises(DomainError):
        bin_firmness(float("nan"))
    with pytest.raises(DomainError):
        bin_firmness(float("inf"))


def test_bin_firmness_monotone_over_random_pairs():
    rng = np.random.default_rng(11)
    for _ in range(300):
        a, b = sorted(rng.uniform(0.0, 4000.0, size=2))
        assert CLASS_ORDER[bin_firmness(a)] <= CLASS_ORDER[bin_firmness(b)]


def test_wavelength_grid_rejects_bad_input():
    with pytest.raises(ShapeError):
        WavelengthGrid(np.array([500.0]))
    with pytest.raises(DomainError):
        WavelengthGrid(np.array([500.0, 500.0, 600.0]))
    with pytest.raises(DomainError):
        WavelengthGrid(np.array([500.0, np.nan, 600.0]))


def test_sample_label_validation():
    with pytest.raises(LabelError):
        _sample("s1", ripeness="green")
    with pytest.raises(LabelError):
        _sample("s1", split="holdout")
    with pytest.raises(DomainError):
        _sample("s1", gf=-5.0)


def test_dataset_rejects_duplicate_ids_and_band_mismatch():
    grid = _grid()
    with pytest.raises(IntegrityError):
        Dataset(grid, (_sample("a"), _sample("a")))
    with pytest.raises(ShapeError):
        Dataset(grid, (_sample("a", n_bands=5),))


def test_dataset_split_accessors_disjoint():
    grid = _grid()
    ds = Dataset(grid, (_sample("a", "train"), _sample("b", "test"),
                        _sample("c", "unassigned")))
    assert set(ds.ids("train")) == {"a"}
    assert set(ds.ids("test")) == {"b"}
    assert not set(ds.ids("train")) & set(ds.ids("test"))
    assert ds.spectra("train").shape == (1, grid.band_count)


def test_manifest_round_trip(tmp_path):
    grid = WavelengthGrid(np.linspace(398.0, 1004.0, 24), camera="bench")
    path = tmp_path / "m.json"
    write_manifest(grid, path)
    back = load_manifest(path)
    assert back.camera == "bench"
    np.testing.assert_allclose(back.wavelengths_nm, grid.wavelengths_nm,
                               rtol=1e-8)


def test_feature_table_round_trip(tmp_path):
    ds = synth_dataset(3, {"unripe": 4, "perfect": 4, "overripe": 4},
                       band_count=8, separation=2.0, test_fraction=0.25)
    table = tmp_path / "t.csv"
    manifest = tmp_path / "m.json"
    write_feature_table(ds, table, manifest)
    back = load_feature_table(table, manifest)
    assert back.ids() == ds.ids()
    for s_old, s_new in zip(ds.samples, back.samples):
        assert s_new.split == s_old.split
        assert s_new.ripeness == s_old.ripeness
        assert s_new.firmness_class == s_old.firmness_class
        if s_old.firmness_gf is None:
            assert s_new.firmness_gf is None
        else:
            assert s_new.firmness_gf == pytest.approx(s_old.firmness_gf,
                                                      rel=1e-8)
        np.testing.assert_allclose(s_new.spectrum, s_old.spectrum, rtol=1e-8)


def test_feature_table_header_only_loads_empty(tmp_path):
    grid = _grid(4)
    manifest = tmp_path / "m.json"
    write_manifest(grid, manifest)
    table = tmp_path / "t.csv"
    write_feature_table(Dataset(grid, ()), table)
    ds = load_feature_table(table, manifest)
    assert len(ds) == 0
    assert ds.grid.band_count == 4


def test_feature_table_band_count_mismatch_names_row(tmp_path):
    grid = _grid(4)
    manifest = tmp_path / "m.json"
    write_manifest(grid, manifest)
    table = tmp_path / "t.csv"
    header = "sample_id,fruit,ripeness,firmness_gf,split," + ",".join(
        f"b{i:03d}" for i in range(4)
    )
    good = "s1,kiwi,perfect,500,train,0.1,0.2,0.3,0.4"
    short = "s2,kiwi,perfect,500,train,0.1,0.2,0.3"
    table.write_text(f"{header}\n{good}\n{short}\n")
    with pytest.raises(SchemaError, match="row 3"):
        load_feature_table(table, manifest)


def test_feature_table_bad_label_names_row(tmp_path):
    grid = _grid(3)
    manifest = tmp_path / "m.json"
    write_manifest(grid, manifest)
    table = tmp_path / "t.csv"
    header = "sample_id,fruit,ripeness,firmness_gf,split,b000,b001,b002"
    bad = "s1,kiwi,greenish,500,train,0.1,0.2,0.3"
    table.write_text(f"{header}\n{bad}\n")
    with pytest.raises(LabelError, match="row 2"):
        load_feature_table(table, manifest)


def test_feature_table_empty_split_means_unassigned(tmp_path):
    grid = _grid(3)
    ds = Dataset(grid, (_sample("u1", "unassigned", n_bands=3),))
    table = tmp_path / "t.csv"
    manifest = tmp_path / "m.json"
    write_feature_table(ds, table, manifest)
    raw = table.read_text().splitlines()[1]
    assert raw.split(",")[4] == ""
    back = load_feature_table(table, manifest)
    assert back.samples[0].split == "unassigned"


def _fruit_ds(seed=0):
    """60 samples over two fruits, 10 of them pinned as test."""
    rng = np.random.default_rng(seed)
    grid = _grid(4)
    samples = []
    for i in range(60):
        fruit = "kiwi" if i < 30 else "mango"
        split = "test" if i % 6 == 0 else "train"
        samples.append(Sample(
            f"s{i:02d}", fruit, "perfect", 500.0, split,
            rng.uniform(0.1, 0.9, size=4),
        ))
    return Dataset(grid, tuple(samples))


def test_resplit_keeps_test_fixed_and_never_duplicates():
    ds = _fruit_ds()
    test_ids = set(ds.ids("test"))
    out = stratified_resplit(ds, test_ids, {"kiwi": 10, "mango": 5}, seed=3)
    assert set(out.ids("test")) == test_ids
    assert sorted(out.ids()) == sorted(ds.ids())
    by_fruit = {"kiwi": 0, "mango": 0}
    for s in out.train:
        by_fruit[s.fruit] += 1
        assert s.sample_id not in test_ids
    assert by_fruit == {"kiwi": 10, "mango": 5}


def test_resplit_deterministic_per_seed():
    ds = _fruit_ds()
    test_ids = set(ds.ids("test"))
    counts = {"kiwi": 8, "mango": 8}
    a = stratified_resplit(ds, test_ids, counts, seed=9)
    b = stratified_resplit(ds, test_ids, counts, seed=9)
    c = stratified_resplit(ds, test_ids, counts, seed=10)
    assert a.ids("train") == b.ids("train")
    assert a.ids("train") != c.ids("train")


def test_resplit_over_capacity_errors():
    ds = _fruit_ds()
    with pytest.raises(CapacityError):
        stratified_resplit(ds, set(ds.ids("test")), {"mango": 200}, seed=0)


def test_resplit_unknown_test_id_errors():
    ds = _fruit_ds()
    with pytest.raises(IntegrityError):
        stratified_resplit(ds, {"nope"}, {"kiwi": 5}, seed=0)


def test_synth_dataset_deterministic():
    kwargs = dict(class_counts={"unripe": 5, "perfect": 5, "overripe": 5},
                  band_count=12, separation=3.0)
    a = synth_dataset(21, **kwargs)
    b = synth_dataset(21, **kwargs)
    np.testing.assert_array_equal(a.spectra(), b.spectra())
    assert a.ids() == b.ids()


def test_synth_dataset_separated_classes_are_tree_learnable():
    ds = synth_dataset(7, {"unripe": 60, "perfect": 60, "overripe": 60},
                       band_count=224, separation=5.0, test_fraction=0.0)
    X = ds.spectra()
    y = np.array([s.ripeness for s in ds.samples])
    model = fit_model(ModelSpec("decision_tree", {"max_depth": 3}), X, y)
    acc = float((model.predict(X) == y).mean())
    assert acc >= 0.95


def test_synth_dataset_zero_separation_has_no_signal():
    ds = synth_dataset(7, {"unripe": 40, "perfect": 40, "overripe": 40},
                       band_count=48, separation=0.0, test_fraction=0.25)
    train = ds.train
    test = ds.test
    X_tr = np.stack([s.spectrum for s in train])
    y_tr = np.array([s.ripeness for s in train])
    X_te = np.stack([s.spectrum for s in test])
    y_te = np.array([s.ripeness for s in test])
    model = fit_model(ModelSpec("decision_tree", {"max_depth": 3}), X_tr, y_tr)
    acc = float((model.predict(X_te) == y_te).mean())
    # chance level for 3 balanced classes, with sampling slack
    assert acc <= 0.60
