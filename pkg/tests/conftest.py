from __future__ import annotations

import numpy as np
import pytest

from spectrabench.dataset import synth_dataset
from spectrabench.evaluate import extract_task_data

SMALL_COUNTS = {"unripe": 12, "perfect": 12, "overripe": 12}


@pytest.fixture(scope="session")
def small_ds():
    """36 samples on 24 bands with well-separated classes."""
    return synth_dataset(7, SMALL_COUNTS, band_count=24, separation=6.0,
                         test_fraction=0.25)


@pytest.fixture(scope="session")
def train_data(small_ds):
    return extract_task_data(small_ds, "train")


@pytest.fixture(scope="session")
def test_data(small_ds):
    return extract_task_data(small_ds, "test")


@pytest.fixture(scope="session")
def blobs():
    """Factory for separable Gaussian class blobs."""

    def make(seed=0, n_per=20, n_features=4, spread=4.0, labels=("a", "b")):
        rng = np.random.default_rng(seed)
        X = np.vstack([
            rng.normal(i * spread, 1.0, size=(n_per, n_features))
            for i in range(len(labels))
        ])
        y = np.repeat(np.array(labels), n_per)
        return X, y

    return make
