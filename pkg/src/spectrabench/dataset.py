"""Feature-table datasets: loading, validation, splitting, synthesis.

A dataset couples a wavelength grid (from a manifest file) with a list of
labeled spectra (from a CSV feature table). The CSV schema is:

    sample_id,fruit,ripeness,firmness_gf,split,b000..b{B-1}

``firmness_gf`` is empty when firmness was not measured; ``split`` is
``train`` or ``test`` (empty means the sample is currently unassigned, e.g.
the leftover pool after a stratified resplit). The manifest is a JSON object
with keys ``camera`` (str), ``band_count`` (int) and ``wavelengths_nm``
(list of band_count floats, strictly increasing).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    CapacityError,
    DomainError,
    IntegrityError,
    LabelError,
    ParseError,
    SchemaError,
    ShapeError,
)

RIPENESS_CLASSES = ("unripe", "perfect", "overripe")
FIRMNESS_CLASSES = ("soft", "medium", "firm", "unknown")
KNOWN_FRUITS = ("avocado", "kiwi", "mango", "kaki", "papaya")
SPLITS = ("train", "test", "unassigned")

# Serialized spectra keep 9 significant digits; round-trips are exact at that
# precision.
_FLOAT_FMT = "%.9g"


def bin_firmness(gf: float | None) -> str:
    """Map a firmness measurement in grams-force to its class token.

    soft covers [0, 1001), medium [1001, 2501), firm [2501, inf); values in
    the open gaps between the published integer boundaries fall to the lower
    class. None (not measured) maps to ``unknown``.
    """
    if gf is None:
        return "unknown"
    gf = float(gf)
    if math.isnan(gf) or math.isinf(gf):
        raise DomainError(f"firmness_gf must be finite, got {gf!r}")
    if gf < 0:
        raise DomainError(f"firmness_gf must be >= 0, got {gf!r}")
    if gf < 1001:
        return "soft"
    if gf < 2501:
        return "medium"
    return "firm"


@dataclass(frozen=True)
class WavelengthGrid:
    """Strictly increasing band-center wavelengths in nanometers."""

    wavelengths_nm: np.ndarray
    camera: str = ""

    def __post_init__(self):
        arr = np.asarray(self.wavelengths_nm, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ShapeError("wavelength grid needs at least 2 bands")
        if not np.all(np.isfinite(arr)):
            raise DomainError("wavelength grid contains non-finite values")
        if not np.all(np.diff(arr) > 0):
            raise DomainError("wavelength grid must be strictly increasing")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "wavelengths_nm", arr)

    @property
    def band_count(self) -> int:
        return int(self.wavelengths_nm.size)

    def __len__(self) -> int:
        return self.band_count


@dataclass(frozen=True)
class Sample:
    """One labeled spectrum."""

    sample_id: str
    fruit: str
    ripeness: str
    firmness_gf: float | None
    split: str
    spectrum: np.ndarray

    def __post_init__(self):
        if not self.sample_id:
            raise SchemaError("sample_id must be non-empty")
        if not self.fruit:
            raise LabelError(f"sample {self.sample_id!r}: fruit must be non-empty")
        if self.ripeness not in RIPENESS_CLASSES:
            raise LabelError(
                f"sample {self.sample_id!r}: unknown ripeness {self.ripeness!r}"
            )
        if self.split not in SPLITS:
            raise LabelError(
                f"sample {self.sample_id!r}: unknown split {self.split!r}"
            )
        if self.firmness_gf is not None:
            gf = float(self.firmness_gf)
            if not math.isfinite(gf) or gf < 0:
                raise DomainError(
                    f"sample {self.sample_id!r}: firmness_gf must be finite and"
                    f" >= 0, got {self.firmness_gf!r}"
                )
            object.__setattr__(self, "firmness_gf", gf)
        spec = np.asarray(self.spectrum, dtype=float)
        if spec.ndim != 1:
            raise ShapeError(f"sample {self.sample_id!r}: spectrum must be 1-D")
        if not np.all(np.isfinite(spec)):
            raise SchemaError(
                f"sample {self.sample_id!r}: spectrum contains non-finite values"
            )
        spec = spec.copy()
        spec.flags.writeable = False
        object.__setattr__(self, "spectrum", spec)

    @property
    def firmness_class(self) -> str:
        return bin_firmness(self.firmness_gf)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of samples on a shared wavelength grid."""

    grid: WavelengthGrid
    samples: tuple[Sample, ...]
    provenance: str = "unspecified"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen: set[str] = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise IntegrityError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)
            if s.spectrum.size != self.grid.band_count:
                raise ShapeError(
                    f"sample {s.sample_id!r}: spectrum has {s.spectrum.size}"
                    f" bands, grid has {self.grid.band_count}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, split: str) -> tuple[Sample, ...]:
        if split not in SPLITS:
            raise DomainError(f"unknown split {split!r}")
        return tuple(s for s in self.samples if s.split == split)

    @property
    def train(self) -> tuple[Sample, ...]:
        return self.subset("train")

    @property
    def test(self) -> tuple[Sample, ...]:
        return self.subset("test")

    def ids(self, split: str | None = None) -> tuple[str, ...]:
        rows = self.samples if split is None else self.subset(split)
        return tuple(s.sample_id for s in rows)

    def spectra(self, split: str | None = None) -> np.ndarray:
        """Spectra stacked into an (N, B) matrix, in sample order."""
        rows = self.samples if split is None else self.subset(split)
        if not rows:
            return np.empty((0, self.grid.band_count))
        return np.stack([s.spectrum for s in rows])

    def with_splits(self, assignment: Mapping[str, str]) -> "Dataset":
        """Copy of the dataset with split labels replaced per sample_id."""
        new = []
        for s in self.samples:
            split = assignment.get(s.sample_id, s.split)
            new.append(
                Sample(s.sample_id, s.fruit, s.ripeness, s.firmness_gf, split,
                       s.spectrum)
            )
        return Dataset(self.grid, tuple(new), self.provenance)


def _band_columns(band_count: int) -> list[str]:
    width = max(3, len(str(band_count - 1)))
    return [f"b{i:0{width}d}" for i in range(band_count)]


def load_manifest(path: str | os.PathLike) -> WavelengthGrid:
    """Parse a manifest JSON file into a WavelengthGrid."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read manifest {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"manifest {path!r}: top level must be an object")
    for key in ("camera", "band_count", "wavelengths_nm"):
        if key not in doc:
            raise SchemaError(f"manifest {path!r}: missing key {key!r}")
    wl = doc["wavelengths_nm"]
    if not isinstance(wl, list):
        raise SchemaError(f"manifest {path!r}: wavelengths_nm must be a list")
    if int(doc["band_count"]) != len(wl):
        raise SchemaError(
            f"manifest {path!r}: band_count={doc['band_count']} disagrees with"
            f" {len(wl)} wavelengths"
        )
    return WavelengthGrid(np.asarray(wl, dtype=float), camera=str(doc["camera"]))


def write_manifest(grid: WavelengthGrid, path: str | os.PathLike) -> None:
    doc = {
        "camera": grid.camera,
        "band_count": grid.band_count,
        "wavelengths_nm": [float(_FLOAT_FMT % w) for w in grid.wavelengths_nm],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _provenance(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return f"{os.path.basename(str(path))}:sha256:{digest[:12]}"


def load_feature_table(
    table_path: str | os.PathLike, manifest_path: str | os.PathLike
) -> Dataset:
    """Load and validate a CSV feature table against its manifest.

    Raises ParseError / SchemaError / LabelError / IntegrityError with the
    offending row number (1-based, header = row 1) in the message.
    """
    grid = load_manifest(manifest_path)
    expected = ["sample_id", "fruit", "ripeness", "firmness_gf", "split"]
    expected += _band_columns(grid.band_count)
    samples: list[Sample] = []
    try:
        fh = open(table_path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ParseError(f"cannot read table {table_path!r}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"table {table_path!r} is empty")
        if header != expected:
            raise SchemaError(
                f"table {table_path!r}: header mismatch (row 1): expected"
                f" {len(expected)} columns ending {expected[-1]!r}, got"
                f" {len(header)} columns"
            )
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise SchemaError(
                    f"table {table_path!r} row {rownum}: expected"
                    f" {len(expected)} columns, got {len(row)}"
                )
            sid, fruit, ripeness, gf_raw, split_raw = row[:5]
            if gf_raw.strip() == "":
                gf = None
            else:
                try:
                    gf = float(gf_raw)
                except ValueError:
                    raise ParseError(
                        f"table {table_path!r} row {rownum}: bad firmness_gf"
                        f" {gf_raw!r}"
                    ) from None
            split = split_raw.strip() or "unassigned"
            if split not in SPLITS:
                raise LabelError(
                    f"table {table_path!r} row {rownum}: unknown split"
                    f" {split_raw!r}"
                )
            try:
                spec = np.array(row[5:], dtype=float)
            except ValueError:
                raise ParseError(
                    f"table {table_path!r} row {rownum}: non-numeric band value"
                ) from None
            try:
                sample = Sample(sid, fruit.strip(), ripeness.strip(), gf, split,
                                spec)
            except (LabelError, DomainError, SchemaError) as exc:
                raise type(exc)(
                    f"table {table_path!r} row {rownum}: {exc}"
                ) from None
            samples.append(sample)
    return Dataset(grid, tuple(samples), provenance=_provenance(table_path))


def write_feature_table(
    ds: Dataset,
    table_path: str | os.PathLike,
    manifest_path: str | os.PathLike | None = None,
) -> None:
    """Serialize a dataset back to CSV (+ optional manifest JSON)."""
    header = ["sample_id", "fruit", "ripeness", "firmness_gf", "split"]
    header += _band_columns(ds.grid.band_count)
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in ds.samples:
            gf = "" if s.firmness_gf is None else _FLOAT_FMT % s.firmness_gf
            split = "" if s.split == "unassigned" else s.split
            row = [s.sample_id, s.fruit, s.ripeness, gf, split]
            row += [_FLOAT_FMT % v for v in s.spectrum]
            writer.writerow(row)
    if manifest_path is not None:
        write_manifest(ds.grid, manifest_path)


def stratified_resplit(
    ds: Dataset,
    fixed_test_ids: Iterable[str],
    per_fruit_train_counts: Mapping[str, int],
    seed: int,
) -> Dataset:
    """Redraw the training set per fruit, keeping the test set fixed.

    Samples in fixed_test_ids stay test; per fruit, the requested number of
    train samples is drawn uniformly without replacement from the remaining
    pool; everything else becomes unassigned. Deterministic per seed.
    """
    test_ids = set(fixed_test_ids)
    all_ids = set(ds.ids())
    missing = test_ids - all_ids
    if missing:
        raise IntegrityError(
            f"fixed_test_ids not in dataset: {sorted(missing)[:5]}"
        )
    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for s in ds.samples:
        assignment[s.sample_id] = "test" if s.sample_id in test_ids else "unassigned"
    for fruit in sorted(per_fruit_train_counts):
        count = int(per_fruit_train_counts[fruit])
        if count < 0:
            raise DomainError(f"train count for {fruit!r} must be >= 0")
        pool = [s.sample_id for s in ds.samples
                if s.fruit == fruit and s.sample_id not in test_ids]
        if len(pool) < count:
            raise CapacityError(
                f"fruit {fruit!r}: requested {count} train samples but only"
                f" {len(pool)} available outside the test set"
            )
        chosen = rng.choice(len(pool), size=count, replace=False)
        for i in chosen:
            assignment[pool[int(i)]] = "train"
    return ds.with_splits(assignment)


def _gauss(lam: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((lam - center) / width) ** 2)


def synth_dataset(
    seed: int,
    class_counts: Mapping[str, int],
    band_count: int,
    separation: float,
    test_fraction: float = 0.25,
) -> Dataset:
    """Generate a labeled synthetic dataset with known class structure.

    Spectra are a smooth reflectance baseline with fixed absorption features
    plus class-dependent Gaussian absorptions: the ripeness class moves one
    dip in the visible range, the firmness class one in the NIR range. Dip
    depths scale with ``separation`` in units of the per-band noise sigma
    (0.01), so separation=0 makes all class-conditional distributions
    identical and separation >= 5 gives an easily separable problem.
    """
    if band_count < 2:
        raise DomainError("band_count must be >= 2")
    if separation < 0:
        raise DomainError("separation must be >= 0")
    if not 0.0 <= test_fraction < 1.0:
        raise DomainError("test_fraction must be in [0, 1)")
    for cls in class_counts:
        if cls not in RIPENESS_CLASSES:
            raise LabelError(f"unknown ripeness class {cls!r}")
        if int(class_counts[cls]) < 0:
            raise DomainError(f"count for {cls!r} must be >= 0")

    rng = np.random.default_rng(seed)
    lam = np.linspace(398.0, 1004.0, band_count)
    grid = WavelengthGrid(lam, camera="synthetic")
    noise_sigma = 0.01
    depth = separation * noise_sigma
    base = 0.30 + 0.45 / (1.0 + np.exp(-(lam - 720.0) / 40.0))
    base = base - 0.12 * _gauss(lam, 680.0, 18.0) - 0.10 * _gauss(lam, 960.0, 30.0)

    firmness_order = ("soft", "medium", "firm")
    gf_ranges = {"soft": (300.0, 900.0), "medium": (1200.0, 2300.0),
                 "firm": (2600.0, 3600.0)}
    samples: list[Sample] = []
    idx = 0
    for r_idx, ripeness in enumerate(RIPENESS_CLASSES):
        count = int(class_counts.get(ripeness, 0))
        n_test = int(round(count * test_fraction))
        test_pick = set(rng.permutation(count)[:n_test].tolist())
        for j in range(count):
            firmness = firmness_order[j % 3]
            f_idx = firmness_order.index(firmness)
            lo, hi = gf_ranges[firmness]
            gf = float(rng.uniform(lo, hi))
            spec = base.copy()
            spec -= depth * _gauss(lam, 620.0 + 40.0 * r_idx, 14.0)
            spec -= depth * _gauss(lam, 800.0 + 55.0 * f_idx, 16.0)
            spec += rng.normal(0.0, noise_sigma, size=band_count)
            samples.append(
                Sample(
                    sample_id=f"synth-{idx:04d}",
                    fruit=KNOWN_FRUITS[idx % len(KNOWN_FRUITS)],
                    ripeness=ripeness,
                    firmness_gf=gf,
                    split="test" if j in test_pick else "train",
                    spectrum=spec,
                )
            )
            idx += 1
    return Dataset(grid, tuple(samples),
                   provenance=f"synthetic:seed={seed}:sep={separation:g}")
