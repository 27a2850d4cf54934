"""Spectral preprocessing transforms and feature-vector assembly.

Five representations of each spectrum are concatenated in a fixed order:

    [raw, d1, cr, snv, d1cr]

where d1 is the first derivative against wavelength, cr the continuum
removed spectrum, snv the standard normal variate, and d1cr the derivative
of the continuum-removed spectrum. With B bands the assembled vector has
5*B entries; band subsets shrink B before the transforms run (default) or
after (ablation flag).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import WavelengthGrid
from .errors import DegenerateError, DomainError, ShapeError

TRANSFORM_IDS = ("raw", "d1", "cr", "snv", "d1cr")

# Published band subsets for the 224-band camera grid.
BAND_PRESETS = {
    "vis3": (18, 52, 89),
    "rgb": (19, 56, 93),
}

_EPS = 1e-12


def mean_spectrum(pixels: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Average a (P, B) pixel matrix into a single spectrum.

    ``mask`` selects foreground pixels; an empty foreground is a domain
    error.
    """
    pixels = np.asarray(pixels, dtype=float)
    if pixels.ndim != 2:
        raise ShapeError("pixels must be a (P, B) matrix")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (pixels.shape[0],):
            raise ShapeError("mask length must match pixel count")
        pixels = pixels[mask]
    if pixels.shape[0] == 0:
        raise DomainError("mean_spectrum: no foreground pixels")
    return pixels.mean(axis=0)


def first_derivative(spectra: np.ndarray, wavelengths: np.ndarray) -> np.ndarray:
    """First derivative with respect to wavelength, length preserving.

    Interior points use the central difference
    (s[i+1] - s[i-1]) / (lam[i+1] - lam[i-1]); the two endpoints use
    one-sided differences. Works on a single spectrum or an (N, B) batch.
    """
    s = np.asarray(spectra, dtype=float)
    lam = np.asarray(wavelengths, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    if s.ndim != 2 or s.shape[1] != lam.size:
        raise ShapeError("spectra and wavelengths disagree in band count")
    if lam.size < 2:
        raise ShapeError("need at least 2 bands for a derivative")
    out = np.empty_like(s)
    out[:, 1:-1] = (s[:, 2:] - s[:, :-2]) / (lam[2:] - lam[:-2])
    out[:, 0] = (s[:, 1] - s[:, 0]) / (lam[1] - lam[0])
    out[:, -1] = (s[:, -1] - s[:, -2]) / (lam[-1] - lam[-2])
    return out[0] if single else out


def _upper_hull(lam: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Indices of the upper convex hull vertices, left to right.

    Both endpoints are always vertices; the hull is the tightest
    piecewise-linear envelope with C(lam) >= s(lam) everywhere.
    """
    hull: list[int] = []
    for i in range(lam.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # pop b when it lies on or below chord a->i (non-left turn)
            cross = (lam[b] - lam[a]) * (s[i] - s[a]) - (s[b] - s[a]) * (lam[i] - lam[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull, dtype=int)


def continuum_removal(spectra: np.ndarray, wavelengths: np.ndarray) -> np.ndarray:
    """Divide each spectrum by its piecewise-linear upper convex hull.

    The hull is anchored at both endpoint bands, so the output is exactly 1
    there. Where the hull evaluates to <= 0 (only possible when the spectrum
    itself is <= 0 there) the output is defined as 1.
    """
    s = np.asarray(spectra, dtype=float)
    lam = np.asarray(wavelengths, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    if s.ndim != 2 or s.shape[1] != lam.size:
        raise ShapeError("spectra and wavelengths disagree in band count")
    if lam.size < 2:
        raise ShapeError("need at least 2 bands for continuum removal")
    out = np.empty_like(s)
    for r in range(s.shape[0]):
        hull = _upper_hull(lam, s[r])
        cont = np.interp(lam, lam[hull], s[r][hull])
        safe = cont > 0
        out[r] = np.where(safe, s[r] / np.where(safe, cont, 1.0), 1.0)
        # hull anchors at both endpoints, so the ratio there is exactly 1
        out[r, 0] = 1.0
        out[r, -1] = 1.0
    return out[0] if single else out


def snv(spectra: np.ndarray) -> np.ndarray:
    """Standard normal variate: (s - mean(s)) / std(s), population std.

    A spectrum with population std <= 1e-12 cannot be normalized and raises
    DegenerateError.
    """
    s = np.asarray(spectra, dtype=float)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    mu = s.mean(axis=1, keepdims=True)
    sigma = s.std(axis=1, keepdims=True)  # ddof=0
    bad = np.nonzero(sigma[:, 0] <= _EPS)[0]
    if bad.size:
        raise DegenerateError(
            f"snv: spectrum {int(bad[0])} has population std <= {_EPS:g}"
        )
    out = (s - mu) / sigma
    return out[0] if single else out


@dataclass(frozen=True)
class BandSubset:
    """An ordered selection of band indices into a wavelength grid."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise DomainError("band subset must select at least one band")
        if len(set(idx)) != len(idx):
            raise DomainError("band subset indices must be unique")
        if any(i < 0 for i in idx):
            raise DomainError("band subset indices must be >= 0")
        if list(idx) != sorted(idx):
            raise DomainError("band subset indices must be ascending")
        object.__setattr__(self, "indices", idx)

    def validate_against(self, grid: WavelengthGrid) -> None:
        if max(self.indices) >= grid.band_count:
            raise DomainError(
                f"band index {max(self.indices)} out of range for"
                f" {grid.band_count}-band grid"
            )

    def wavelengths(self, grid: WavelengthGrid) -> np.ndarray:
        self.validate_against(grid)
        return grid.wavelengths_nm[list(self.indices)]


def preset_subset(name: str) -> BandSubset:
    if name not in BAND_PRESETS:
        raise DomainError(
            f"unknown band preset {name!r}; available: {sorted(BAND_PRESETS)}"
        )
    return BandSubset(BAND_PRESETS[name])


@dataclass(frozen=True)
class FeatureVector:
    """Assembled per-sample features plus their provenance map.

    ``group_map`` lists one (transform_id, band_index) pair per feature,
    where band_index counts within the bands actually used (0..B'-1).
    """

    values: np.ndarray
    group_map: tuple[tuple[str, int], ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ShapeError("feature values must be 1-D")
        if len(self.group_map) != vals.size:
            raise ShapeError("group_map length must match feature count")
        object.__setattr__(self, "values", vals)


def _transform_block(s: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Stack the five transform blocks of an (N, B) batch into (N, 5*B)."""
    d1 = first_derivative(s, lam)
    cr = continuum_removal(s, lam)
    sn = snv(s)
    d1cr = first_derivative(cr, lam)
    return np.concatenate([s, d1, cr, sn, d1cr], axis=1)


def feature_group_map(band_count: int) -> tuple[tuple[str, int], ...]:
    """The (transform, band) pair for every feature column, in layout order."""
    return tuple(
        (tid, b) for tid in TRANSFORM_IDS for b in range(band_count)
    )


def build_feature_matrix(
    spectra: np.ndarray,
    grid: WavelengthGrid,
    subset: BandSubset | None = None,
    reduced_mode: str = "subset-then-transform",
) -> tuple[np.ndarray, tuple[tuple[str, int], ...]]:
    """Assemble the (N, 5*B') feature matrix for a batch of spectra.

    With a subset, ``subset-then-transform`` (default) restricts the bands
    first and runs the transforms on the reduced grid, mimicking a camera
    that only measures those bands. ``transform-then-subset`` runs the
    transforms on the full grid and then picks the subset columns from each
    block; useful for ablating the effect of the reduced grid itself.
    """
    s = np.asarray(spectra, dtype=float)
    if s.ndim == 1:
        s = s[None, :]
    if s.shape[1] != grid.band_count:
        raise ShapeError("spectra band count disagrees with grid")
    if reduced_mode not in ("subset-then-transform", "transform-then-subset"):
        raise DomainError(f"unknown reduced_mode {reduced_mode!r}")
    lam = grid.wavelengths_nm
    if subset is None:
        return _transform_block(s, lam), feature_group_map(grid.band_count)
    subset.validate_against(grid)
    idx = list(subset.indices)
    if reduced_mode == "subset-then-transform":
        if len(idx) < 2:
            raise DomainError("subset-then-transform needs >= 2 bands")
        X = _transform_block(s[:, idx], lam[idx])
    else:
        full = _transform_block(s, lam)
        B = grid.band_count
        cols = [t * B + b for t in range(len(TRANSFORM_IDS)) for b in idx]
        X = full[:, cols]
    return X, feature_group_map(len(idx))


def build_feature_vector(
    spectrum: np.ndarray,
    grid: WavelengthGrid,
    subset: BandSubset | None = None,
    reduced_mode: str = "subset-then-transform",
) -> FeatureVector:
    """Single-spectrum convenience wrapper around build_feature_matrix."""
    X, gmap = build_feature_matrix(
        np.asarray(spectrum, dtype=float)[None, :], grid, subset, reduced_mode
    )
    return FeatureVector(X[0], gmap)
