"""Gradient-boosted tree booster: fitting power, determinism, serialization."""
import json
import math

import numpy as np
import pytest

from qfb.gbt import GBTModel, GBTParams, train_gbt


def _toy(n=4000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, 3))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 1] ** 2 + 0.1 * rng.standard_normal(n)
    return x, y


class TestTraining:
    def test_beats_constant_predictor(self):
        x, y = _toy()
        model = train_gbt(x, y, GBTParams(n_trees=80, max_depth=4), seed=1)
        resid = y - model.predict(x)
        assert float(np.mean(resid ** 2)) < 0.25 * float(np.var(y))

    def test_constant_target_recovered(self):
        x, _ = _toy(500)
        y = np.full(500, 3.25)
        model = train_gbt(x, y, GBTParams(n_trees=20), seed=0)
        np.testing.assert_allclose(model.predict(x), 3.25, atol=1e-9)

    def test_deterministic(self):
        x, y = _toy(2000)
        a = train_gbt(x, y, GBTParams(n_trees=30), seed=5)
        b = train_gbt(x, y, GBTParams(n_trees=30), seed=5)
        np.testing.assert_array_equal(a.predict(x), b.predict(x))
        assert len(a.trees) == len(b.trees)

    def test_seed_changes_split(self):
        x, y = _toy(2000)
        a = train_gbt(x, y, GBTParams(n_trees=10), seed=0)
        b = train_gbt(x, y, GBTParams(n_trees=10), seed=1)
        assert a.metadata["validation_rmse"] != b.metadata["validation_rmse"]

    def test_early_stopping_truncates(self):
        x, y = _toy(3000)
        model = train_gbt(x, y, GBTParams(n_trees=300, early_stopping_patience=5), seed=2)
        assert model.metadata["n_trees_fit"] == len(model.trees)
        assert len(model.trees) <= 300

    def test_metadata_recorded(self):
        x, y = _toy(1000)
        model = train_gbt(x, y, seed=9, metadata={"tag": "abc"})
        assert model.metadata["tag"] == "abc"
        assert model.metadata["seed"] == 9
        assert model.metadata["n_rows"] == 1000
        assert "validation_rmse" in model.metadata

    def test_input_validation(self):
        with pytest.raises(ValueError):
            train_gbt(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(ValueError):
            train_gbt(np.zeros((10, 3)), np.zeros(9))
        with pytest.raises(ValueError):
            train_gbt(np.zeros(10), np.zeros(10))

    def test_small_table_skips_validation(self):
        x, y = _toy(30)
        model = train_gbt(x, y, GBTParams(n_trees=5, min_samples_leaf=20), seed=0)
        assert "validation_rmse" not in model.metadata


class TestPrediction:
    def test_single_row_and_batch_agree(self):
        x, y = _toy(1000)
        model = train_gbt(x, y, GBTParams(n_trees=20), seed=3)
        batch = model.predict(x[:5])
        singles = np.array([model.predict(x[i]) [0] for i in range(5)])
        np.testing.assert_allclose(batch, singles, rtol=0, atol=1e-12)

    def test_feature_name_rebinding(self):
        x, y = _toy(1500)
        model = train_gbt(x, y, GBTParams(n_trees=20), seed=4,
                          feature_names=["a", "b", "c"])
        shuffled = x[:, [2, 0, 1]]
        np.testing.assert_array_equal(
            model.predict(x), model.predict(shuffled, feature_names=["c", "a", "b"]))

    def test_empty_ensemble_returns_base(self):
        model = GBTModel(base_score=1.5, learning_rate=0.1, trees=[],
                         feature_names=["a"], params=GBTParams())
        np.testing.assert_array_equal(model.predict(np.zeros((4, 1))), np.full(4, 1.5))


class TestSerialization:
    def test_json_roundtrip_bit_exact(self, tmp_path):
        x, y = _toy(2000)
        model = train_gbt(x, y, GBTParams(n_trees=25), seed=6)
        path = tmp_path / "m.json"
        model.save(path)
        back = GBTModel.load(path)
        np.testing.assert_array_equal(model.predict(x), back.predict(x))
        assert back.feature_names == model.feature_names
        assert back.params == model.params
        assert back.metadata == model.metadata

    def test_format_tag_enforced(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(ValueError):
            GBTModel.load(path)
