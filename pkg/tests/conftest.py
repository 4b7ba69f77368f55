"""Shared fixtures: trained estimator models at two dataset scales.

The small model keeps unit tests fast; the full-size model (1e5 rows,
the production training configuration) backs the acceptance suite and is
trained once per session.
"""
import numpy as np
import pytest

from qfb.kest import generate_dataset, train_estimator


@pytest.fixture(scope="session")
def model_small():
    feats, ks = generate_dataset(dataset_size=20000, samples_per_record=100, seed=7)
    return train_estimator(feats, ks, seed=7)


@pytest.fixture(scope="session")
def model_full():
    feats, ks = generate_dataset(dataset_size=10 ** 5, samples_per_record=100, seed=42)
    return train_estimator(feats, ks, seed=42)


@pytest.fixture(scope="session")
def model_small_file(model_small, tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "kest_model.json"
    model_small.save(path)
    return path
