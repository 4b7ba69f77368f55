"""Experiment harness: scenarios, repetition aggregation, figure emission."""
import json
import math
import os

import numpy as np
import pytest

from qfb.harness import (RunSummary, Scenario, default_fig3_scenario,
                         default_fig4_scenario, emit_figure_data,
                         load_scenario, run_scenario, scenario_from_dict)
from qfb.kest import evaluate_estimators


def _tiny(estimator="moment-1", **kw):
    defaults = dict(segments=((10.0, 40),), num_regions=3, m_blocks=20,
                    repetitions=3, seed=1, grid_size=16, estimator=estimator)
    defaults.update(kw)
    return Scenario(**defaults)


class TestScenario:
    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario(segments=())
        with pytest.raises(ValueError):
            Scenario(segments=((10.0, 0),))
        with pytest.raises(ValueError):
            _tiny(repetitions=0)
        with pytest.raises(ValueError):
            _tiny(num_regions=1)

    def test_total_iterations(self):
        s = Scenario(segments=((0.0, 10), (10.0, 25)))
        assert s.total_iterations == 35

    def test_config_hash_sensitivity(self):
        assert _tiny().config_hash() == _tiny().config_hash()
        assert _tiny().config_hash() != _tiny(seed=2).config_hash()
        assert _tiny().config_hash() != _tiny(m_blocks=21).config_hash()

    def test_default_scenarios(self):
        f3 = default_fig3_scenario(m_blocks=1000, seed=4)
        assert f3.segments == ((10.0, 2000),)
        assert f3.m_blocks == 1000 and f3.seed == 4
        f4 = default_fig4_scenario(dwell=1500)
        assert [k for k, _ in f4.segments] == [0.0, 10.0, 20.0, 10.0]
        assert default_fig4_scenario(revisit=False).segments[-1][0] == 20.0

    def test_from_dict_rayleigh_names(self):
        s = scenario_from_dict({"segments": [["rayleigh", 10], [None, 5], [10.0, 5]],
                                "repetitions": 2})
        assert s.segments == ((None, 10), (None, 5), (10.0, 5))

    def test_load_json_and_toml(self, tmp_path):
        d = {"segments": [[10.0, 8]], "repetitions": 2, "m_blocks": 10}
        jp = tmp_path / "s.json"
        jp.write_text(json.dumps(d))
        tp = tmp_path / "s.toml"
        tp.write_text('segments = [[10.0, 8]]\nrepetitions = 2\nm_blocks = 10\n')
        assert load_scenario(jp) == load_scenario(tp)


class TestRunScenario:
    def test_shapes_and_reference(self):
        s = _tiny()
        out = run_scenario(s)
        assert out.mean_reward.shape == (40,)
        assert out.rewards.shape == (3, 40)
        assert out.reference.shape == (40,)
        assert len(out.segment_references) == 1
        np.testing.assert_array_equal(out.reference, out.segment_references[0])
        np.testing.assert_allclose(out.mean_reward, out.rewards.mean(axis=0))

    def test_deterministic_for_seed(self):
        a = run_scenario(_tiny())
        b = run_scenario(_tiny())
        np.testing.assert_array_equal(a.rewards, b.rewards)
        assert run_scenario(_tiny(seed=9)).rewards[0, 0] != a.rewards[0, 0]

    def test_learned_requires_model(self):
        with pytest.raises(ValueError):
            run_scenario(_tiny(estimator="learned"))
        with pytest.raises(ValueError):
            run_scenario(_tiny(estimator="bogus"))

    def test_learned_estimator_runs(self, model_small):
        out = run_scenario(_tiny(estimator="learned"), model=model_small)
        assert np.all(np.isfinite(out.rewards))

    def test_drift_schedule_reference_steps(self):
        s = _tiny(segments=((None, 15), (10.0, 15)))
        out = run_scenario(s)
        assert len(out.segment_references) == 2
        assert out.reference[0] == out.segment_references[0]
        assert out.reference[-1] == out.segment_references[1]
        assert out.segment_references[0] < out.segment_references[1]

    def test_record_sink_sees_all_repetitions(self):
        got = {}
        run_scenario(_tiny(), record_sink=lambda i, recs: got.__setitem__(i, len(recs)))
        assert got == {0: 40, 1: 40, 2: 40}

    def test_thread_pool_matches_serial(self):
        s = _tiny()
        serial = run_scenario(s, threads=1)
        pooled = run_scenario(s, threads=2)
        np.testing.assert_array_equal(serial.rewards, pooled.rewards)


class TestFigureData:
    def test_fig3_files(self, tmp_path):
        m100 = run_scenario(_tiny(m_blocks=20))
        m1000 = run_scenario(_tiny(m_blocks=30))
        paths = emit_figure_data({"m100": m100, "m1000": m1000}, "fig3", tmp_path)
        names = sorted(os.path.basename(p) for p in paths)
        assert names == ["fig3_m100.csv", "fig3_m1000.csv", "fig3_schema.json",
                         "plot_fig3.py"]
        body = (tmp_path / "fig3_m100.csv").read_text().splitlines()
        headers = [ln for ln in body if ln.startswith("#")]
        assert any(ln.startswith("# generated=") for ln in headers)
        assert any(ln.startswith("# config_hash=") for ln in headers)
        cols = next(ln for ln in body if not ln.startswith("#"))
        assert cols == "t,mean_omega,lo,hi,reference"
        rows = [ln for ln in body if not ln.startswith("#")][1:]
        assert len(rows) == 40
        first = rows[0].split(",")
        assert int(first[0]) == 1
        assert float(first[2]) <= float(first[1]) <= float(first[3])

    def test_fig4_files(self, tmp_path):
        out = run_scenario(_tiny(segments=((None, 10), (10.0, 10))))
        paths = emit_figure_data({"run": out}, "fig4", tmp_path)
        assert os.path.exists(tmp_path / "fig4_drift.csv")
        assert os.path.exists(tmp_path / "fig4_schema.json")

    def test_fig2_files(self, tmp_path, model_small):
        rows = evaluate_estimators(model_small, [1.0], [25], trials=10, seed=0)
        paths = emit_figure_data({"eval": rows}, "fig2", tmp_path)
        body = (tmp_path / "fig2_estimators.csv").read_text().splitlines()
        cols = next(ln for ln in body if not ln.startswith("#"))
        assert cols.startswith("k_true,n,method")

    def test_missing_inputs_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_figure_data({}, "fig3", tmp_path)
        with pytest.raises(ValueError):
            emit_figure_data({}, "fig9", tmp_path)
