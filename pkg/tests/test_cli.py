"""End-to-end command tests plus config and report unit coverage."""
from __future__ import annotations

import json
import pickle
from pathlib import Path

import numpy as np
import pytest

from spectrabench import cli
from spectrabench.config import RunConfig, load_config
from spectrabench.errors import ConfigError, ShapeError
from spectrabench.report import (
    canonical_json,
    config_hash,
    jsonable,
    read_report,
    write_report,
    write_timings,
)

SYNTH_BLOCK = {
    "class_counts": {"unripe": 8, "perfect": 8, "overripe": 8},
    "band_count": 12,
    "separation": 6.0,
    "test_fraction": 0.25,
}


def _write_cfg(path: Path, **fields) -> str:
    path.write_text(json.dumps(fields), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A synthetic dataset on disk, generated through the CLI."""
    root = tmp_path_factory.mktemp("cliws")
    data_dir = root / "data"
    cfg = _write_cfg(root / "synth.json", synth=SYNTH_BLOCK, seed=11)
    rc = cli.main(["synth", "--config", cfg, "--out", str(data_dir)])
    assert rc == 0
    table = data_dir / "synthetic.csv"
    manifest = data_dir / "synthetic.manifest.json"
    assert table.exists() and manifest.exists()
    return {"root": root, "table": str(table), "manifest": str(manifest)}


def _phase_cfg(ws, path: Path, **extra) -> str:
    fields = {"dataset": ws["table"], "manifest": ws["manifest"],
              "seed": 11, **extra}
    return _write_cfg(path, **fields)


# ---------------------------------------------------------------------------
# config unit coverage

def test_config_validation_errors():
    with pytest.raises(ConfigError):
        RunConfig(strategies=("original", "mixup"))
    with pytest.raises(ConfigError):
        RunConfig(pca=())
    with pytest.raises(ConfigError):
        RunConfig(select_on="train")
    with pytest.raises(ConfigError):
        RunConfig(consensus_source="shap")
    with pytest.raises(ConfigError):
        RunConfig(rolling_window=4)
    with pytest.raises(ConfigError):
        RunConfig(seed=-1)
    with pytest.raises(ConfigError):
        RunConfig(cv_k=1)
    with pytest.raises(ConfigError):
        RunConfig(pca_variance_target=1.5)
    with pytest.raises(ConfigError):
        RunConfig(synth={"bands": 5})


def test_load_config_rejects_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="root must be"):
        load_config(arr)
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"cv_folds": 5}), encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_config(unknown)
    notalist = tmp_path / "notalist.json"
    notalist.write_text(json.dumps({"models": "knn"}), encoding="utf-8")
    with pytest.raises(ConfigError, match="must be a list"):
        load_config(notalist)


def test_load_config_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({
        "seed": 7, "models": ["knn"], "strategies": ["original", "smote"],
        "pca": [False], "n_trials": 3, "consensus_source": "permutation",
    }), encoding="utf-8")
    cfg = load_config(path)
    assert cfg.seed == 7
    assert cfg.models == ("knn",)
    assert cfg.strategies == ("original", "smote")
    assert cfg.pca == (False,)
    assert cfg.consensus_source == "permutation"


def test_config_hash_ignores_cosmetic_fields():
    a = RunConfig(seed=5, out_dir="runs/a", markdown=False)
    b = RunConfig(seed=5, out_dir="elsewhere", markdown=True)
    c = RunConfig(seed=6, out_dir="runs/a")
    assert config_hash(a.semantic_dict()) == config_hash(b.semantic_dict())
    assert config_hash(a.semantic_dict()) != config_hash(c.semantic_dict())


def test_synth_block_merges_defaults():
    cfg = RunConfig(synth={"band_count": 16})
    assert cfg.synth["band_count"] == 16
    assert cfg.synth["separation"] == 3.0
    assert cfg.synth["class_counts"]["perfect"] == 30


# ---------------------------------------------------------------------------
# report unit coverage

def test_canonical_json_is_sorted_with_trailing_newline():
    text = canonical_json({"b": 1, "a": np.float64(0.5)})
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 0.5, "b": 1}


def test_jsonable_handles_numpy_and_rejects_objects():
    blob = jsonable({
        "f": np.float32(1.5), "i": np.int64(3), "flag": np.bool_(True),
        "arr": np.arange(3), "nested": [np.float64(0.25), (1, 2)],
    })
    assert blob == {"f": 1.5, "i": 3, "flag": True, "arr": [0, 1, 2],
                    "nested": [0.25, [1, 2]]}
    with pytest.raises(ShapeError):
        jsonable({"x": object()})


def test_write_report_outputs(tmp_path):
    report = {"meta": {"phase": "demo"},
              "rows": [{"model": "knn", "oa": 0.5, "note": None}]}
    paths = write_report(tmp_path, "demo", report, ["model", "oa", "note"],
                         markdown=True)
    assert set(paths) == {"json", "csv", "md"}
    assert read_report(tmp_path, "demo") == report
    csv_text = Path(paths["csv"]).read_text(encoding="utf-8")
    assert csv_text.splitlines()[0] == "model,oa,note"
    assert csv_text.splitlines()[1] == "knn,0.5,"
    md_text = Path(paths["md"]).read_text(encoding="utf-8")
    assert "| model | oa | note |" in md_text
    a = Path(paths["json"]).read_bytes()
    write_report(tmp_path, "demo", report, ["model", "oa", "note"])
    assert Path(paths["json"]).read_bytes() == a
    assert read_report(tmp_path, "nothing-here") is None


def test_write_timings_separate_file(tmp_path):
    path = write_timings(tmp_path, "demo", [("unit-a", 0.5)])
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "unit,seconds"
    assert lines[1] == "unit-a,0.500000"


# ---------------------------------------------------------------------------
# exit codes

def test_missing_config_file_is_config_error(tmp_path, capsys):
    rc = cli.main(["phase1", "--config", str(tmp_path / "absent.json")])
    assert rc == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_config_key_is_config_error(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json", folds=5)
    assert cli.main(["phase1", "--config", cfg]) == 2


def test_phase_without_dataset_is_config_error(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json", seed=1)
    assert cli.main(["phase1", "--config", cfg,
                     "--out", str(tmp_path / "out")]) == 2


def test_unknown_model_is_config_error(ws, tmp_path):
    cfg = _phase_cfg(ws, tmp_path / "c.json")
    assert cli.main(["phase1", "--config", cfg, "--models", "perceptron9",
                     "--out", str(tmp_path / "out")]) == 2


def test_corrupt_data_is_data_error(ws, tmp_path, capsys):
    broken = tmp_path / "broken.csv"
    lines = Path(ws["table"]).read_text(encoding="utf-8").splitlines()
    parts = lines[1].split(",")
    parts[2] = "mellow"  # ripeness column
    lines[1] = ",".join(parts)
    broken.write_text("\n".join(lines) + "\n", encoding="utf-8")
    cfg = _write_cfg(tmp_path / "c.json", dataset=str(broken),
                     manifest=ws["manifest"], seed=1)
    rc = cli.main(["validate", "--config", cfg,
                   "--out", str(tmp_path / "out")])
    assert rc == 3
    assert "error" in capsys.readouterr().err


def test_bad_subset_values(ws, tmp_path):
    cfg = _phase_cfg(ws, tmp_path / "c.json", models=["knn"])
    out = str(tmp_path / "out")
    # malformed flag value: config problem
    assert cli.main(["phase1", "--config", cfg, "--subset", "a,b",
                     "--out", out]) == 2
    # unknown preset name: config problem
    assert cli.main(["phase1", "--config", cfg, "--subset", "nir9",
                     "--out", out]) == 2
    # known preset whose indices overflow this 12-band grid
    assert cli.main(["phase1", "--config", cfg, "--subset", "vis3",
                     "--out", out]) == 3


# ---------------------------------------------------------------------------
# phase runs

def test_validate_reports_splits(ws, tmp_path, capsys):
    cfg = _phase_cfg(ws, tmp_path / "c.json")
    out = tmp_path / "out"
    assert cli.main(["validate", "--config", cfg, "--out", str(out)]) == 0
    assert "validate" in capsys.readouterr().out
    report = read_report(out, "validate")
    assert report["meta"]["band_count"] == 12
    assert report["meta"]["n_samples"] == 24
    splits = {r["split"]: r for r in report["rows"]}
    assert set(splits) == {"train", "test"}
    assert splits["train"]["n"] + splits["test"]["n"] == 24


def test_phase1_restricted_models(ws, tmp_path):
    cfg = _phase_cfg(ws, tmp_path / "c.json")
    out = tmp_path / "out"
    rc = cli.main(["phase1", "--config", cfg, "--out", str(out),
                   "--models", "knn,gaussian_nb", "--markdown"])
    assert rc == 0
    report = read_report(out, "phase1")
    assert [r["model"] for r in report["rows"]] == ["knn", "gaussian_nb"]
    for row in report["rows"]:
        assert 0.0 <= row["oa"] <= 1.0
        assert 0.0 <= row["mean_f1_macro"] <= 1.0
    assert (out / "phase1.csv").exists()
    assert (out / "phase1.md").exists()
    assert (out / "phase1.timings.csv").exists()


def test_phase1_reports_are_reproducible(ws, tmp_path, monkeypatch):
    cfg = _phase_cfg(ws, tmp_path / "c.json", models=["knn", "decision_tree"])
    out1, out2, out3 = (tmp_path / d for d in ("o1", "o2", "o3"))
    assert cli.main(["phase1", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["phase1", "--config", cfg, "--out", str(out2)]) == 0
    a = (out1 / "phase1.json").read_bytes()
    assert (out2 / "phase1.json").read_bytes() == a
    assert ((out1 / "phase1.csv").read_bytes()
            == (out2 / "phase1.csv").read_bytes())
    # thread pool fan-out must not change a single byte
    monkeypatch.setenv("SPECTRABENCH_THREADS", "4")
    assert cli.main(["phase1", "--config", cfg, "--out", str(out3)]) == 0
    assert (out3 / "phase1.json").read_bytes() == a


def test_resume_reads_cached_units(ws, tmp_path):
    cfg = _phase_cfg(ws, tmp_path / "c.json", models=["knn"])
    out = tmp_path / "out"
    assert cli.main(["phase1", "--config", cfg, "--out", str(out)]) == 0
    cache_dir = out / "cache"
    entries = sorted(cache_dir.glob("*.pkl"))
    assert entries
    # poison the cache; a resumed run must surface the poisoned value and
    # a fresh run must not
    for p in entries:
        row = pickle.loads(p.read_bytes())
        row["oa"] = 0.123456789
        p.write_bytes(pickle.dumps(row))
    assert cli.main(["phase1", "--config", cfg, "--out", str(out),
                     "--resume"]) == 0
    assert read_report(out, "phase1")["rows"][0]["oa"] == 0.123456789
    assert cli.main(["phase1", "--config", cfg, "--out", str(out)]) == 0
    assert read_report(out, "phase1")["rows"][0]["oa"] != 0.123456789


def test_subset_changes_semantics_not_row_shape(ws, tmp_path):
    cfg = _phase_cfg(ws, tmp_path / "c.json", models=["knn"])
    out_full, out_sub = tmp_path / "full", tmp_path / "sub"
    assert cli.main(["phase1", "--config", cfg, "--out", str(out_full)]) == 0
    assert cli.main(["phase1", "--config", cfg, "--out", str(out_sub),
                     "--subset", "1,5,9"]) == 0
    full = read_report(out_full, "phase1")
    sub = read_report(out_sub, "phase1")
    assert full["meta"]["config_hash"] != sub["meta"]["config_hash"]
    assert set(full["rows"][0]) == set(sub["rows"][0])


def test_phase2_grid_and_selection(ws, tmp_path):
    out = tmp_path / "out"
    cfg = _phase_cfg(
        ws, tmp_path / "c.json",
        models=["knn", "gaussian_nb"],
        strategies=["original", "oversample"],
        pca=[False, True],
        bootstrap_resamples=200,
    )
    assert cli.main(["phase2", "--config", cfg, "--out", str(out)]) == 0
    report = read_report(out, "phase2")
    rows = report["rows"]
    assert len(rows) == 2 * 2 * 2
    combos = {(r["strategy"], r["pca"], r["model"]) for r in rows}
    assert len(combos) == 8
    for row in rows:
        assert row["error"] is None
        assert 0.0 <= row["validation_oa"] <= 1.0

    # best block = argmax test OA per model, recomputed here by brute force
    for entry in report["best"]:
        mine = [r for r in rows if r["model"] == entry["model"]]
        top = max(mine, key=lambda r: r["oa"])
        assert entry["oa"] == top["oa"]
        assert (entry["strategy"], entry["pca"]) == (top["strategy"],
                                                     top["pca"])

    spread = report["spread"]
    assert spread["models"] == ["knn", "gaussian_nb"]
    assert len(spread["range_diff_ci"]) == 2
    lo, hi = spread["range_diff_ci"]
    assert lo <= hi
    assert spread["n_resamples"] == 200


def test_phase3_consumes_phase2_validation_choice(ws, tmp_path):
    out = tmp_path / "out"
    cfg = _phase_cfg(
        ws, tmp_path / "c.json",
        models=["knn", "gaussian_nb"],
        strategies=["original", "oversample"],
        pca=[False, True],
        bootstrap_resamples=100,
        n_trials=2,
    )
    assert cli.main(["phase2", "--config", cfg, "--out", str(out)]) == 0
    p2 = read_report(out, "phase2")
    expected = max(
        (r for r in p2["rows"] if r["error"] is None),
        key=lambda r: r["validation_oa"],
    )
    assert cli.main(["phase3", "--config", cfg, "--out", str(out),
                     "--select-on", "validation"]) == 0
    p3 = read_report(out, "phase3")
    pre = p3["meta"]["preprocessing"]
    assert pre["source"] == "phase2"
    assert pre["selected_on"] == "validation"
    assert pre["strategy"] == expected["strategy"]
    assert pre["pca"] == expected["pca"]

    assert [r["model"] for r in p3["rows"]] == ["knn", "gaussian_nb"]
    for row in p3["rows"]:
        assert row["n_trials"] == 2
        assert 0.0 <= row["best_objective"] <= 1.0
    for name, hist in p3["history"].items():
        assert len(hist["trials"]) == 2
        assert len(hist["best_objective_curve"]) == 2
        for trial in hist["trials"]:
            # wall-clock never enters canonical reports
            assert set(trial) == {"trial_index", "params", "objective",
                                  "failed"}
    models_dir = out / "models"
    assert sorted(p.name for p in models_dir.glob("phase3_knn_*.pipe")) == [
        "phase3_knn_firmness.pipe", "phase3_knn_ripeness.pipe"]


def test_phase5_builds_on_phase3(ws, tmp_path):
    out = tmp_path / "out"
    cfg = _phase_cfg(
        ws, tmp_path / "c.json",
        models=["knn", "gaussian_nb", "decision_tree"],
        n_trials=2,
        top_n_bases=2,
        ensemble_kinds=["hard_vote", "soft_vote"],
    )
    assert cli.main(["phase3", "--config", cfg, "--out", str(out)]) == 0
    assert cli.main(["phase5", "--config", cfg, "--out", str(out)]) == 0
    report = read_report(out, "phase5")
    assert report["meta"]["base_source"] == "phase3"
    assert len(report["meta"]["bases"]) == 2
    rows = report["rows"]
    assert {(r["kind"], r["dataset"]) for r in rows} == {
        ("hard_vote", "original"), ("hard_vote", "resplit"),
        ("soft_vote", "original"), ("soft_vote", "resplit"),
    }
    for row in rows:
        assert row["error"] is None
        assert 0.0 <= row["oa"] <= 1.0


def test_phase4_statistics_block(ws, tmp_path):
    out = tmp_path / "out"
    cfg = _phase_cfg(ws, tmp_path / "c.json",
                     models=["knn", "gaussian_nb", "decision_tree"],
                     cv_k=3)
    assert cli.main(["phase4", "--config", cfg, "--out", str(out)]) == 0
    report = read_report(out, "phase4")
    rows = report["rows"]
    assert [r["model"] for r in rows] == ["knn", "gaussian_nb",
                                          "decision_tree"]
    for row in rows:
        assert row["k"] == 3
        assert row["oa_ci_lo"] <= row["oa_mean"] <= row["oa_ci_hi"]
        assert 0.0 <= row["wilson_lo"] <= row["wilson_hi"] <= 1.0
        assert row["n_test"] == 6
        assert len(report["folds"][row["model"]]) == 3
    stats = report["stats"]
    assert stats["friedman"]["dof"] == 2
    assert stats["friedman"]["chi2"] >= 0.0
    assert "nemenyi" in stats


def test_phase6_impurity_consensus(ws, tmp_path):
    out = tmp_path / "out"
    cfg = _phase_cfg(ws, tmp_path / "c.json", explain_model="extra_trees",
                     n_repeats=3)
    assert cli.main(["phase6", "--config", cfg, "--out", str(out)]) == 0
    report = read_report(out, "phase6")
    assert report["meta"]["model"] == "extra_trees"
    assert len(report["rows"]) == 12
    consensus = report["consensus"]
    assert consensus["source"] == "impurity"
    assert "note" not in consensus
    assert len(consensus["band_indices"]) == 3
    grid_nm = [r["wavelength_nm"] for r in report["rows"]]
    for b, nm in zip(consensus["band_indices"], consensus["wavelengths_nm"]):
        assert grid_nm[b] == nm
        assert nm < 700.0
    for task in ("ripeness", "firmness"):
        assert set(report["ablation"][task]) == {
            "raw", "d1", "cr", "snv", "d1cr"}
        assert len(report["importance"][task]["permutation_band"]) == 12
        assert report["importance"][task]["impurity_band"] is not None


def test_phase6_permutation_source_and_fallback(ws, tmp_path):
    out_a = tmp_path / "a"
    cfg_a = _phase_cfg(ws, tmp_path / "ca.json", explain_model="extra_trees",
                       n_repeats=2, consensus_source="permutation")
    assert cli.main(["phase6", "--config", cfg_a, "--out", str(out_a)]) == 0
    assert read_report(out_a, "phase6")["consensus"]["source"] == "permutation"

    # knn has no impurity attribution: impurity request falls back, noted
    out_b = tmp_path / "b"
    cfg_b = _phase_cfg(ws, tmp_path / "cb.json", explain_model="knn",
                       n_repeats=2)
    assert cli.main(["phase6", "--config", cfg_b, "--out", str(out_b)]) == 0
    consensus = read_report(out_b, "phase6")["consensus"]
    assert consensus["source"] == "permutation"
    assert "no impurity importances" in consensus["note"]


def test_bands_study_reports_recovery(ws, tmp_path):
    out = tmp_path / "out"
    cfg = _phase_cfg(ws, tmp_path / "c.json", models=["knn", "gaussian_nb"],
                     n_trials=2, subset=[1, 5, 9])
    assert cli.main(["bands", "--config", cfg, "--out", str(out)]) == 0
    report = read_report(out, "bands")
    assert report["meta"]["subset"] == [1, 5, 9]
    assert len(report["meta"]["subset_wavelengths_nm"]) == 3
    assert [r["model"] for r in report["rows"]] == ["knn", "gaussian_nb"]
    for row in report["rows"]:
        if row["full_oa"] > 0:
            assert row["baseline_recovery_pct"] == pytest.approx(
                100.0 * row["oa"] / row["full_oa"])
        # no phase3 report in this out dir: tuned recovery is undefined
        assert row["full_tuned_oa"] is None
        assert row["tuned_recovery_pct"] is None


def test_bands_requires_subset(ws, tmp_path):
    cfg = _phase_cfg(ws, tmp_path / "c.json", models=["knn"])
    assert cli.main(["bands", "--config", cfg,
                     "--out", str(tmp_path / "out")]) == 2
