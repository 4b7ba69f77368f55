"""Command-line interface: subcommands, outputs, exit codes, determinism."""
import json
import math
import os
import re

import numpy as np
import pytest

from qfb.channel import RicianSpec, sample_gammas
from qfb.cli import main


def _run(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


class TestOracle:
    def test_output_lines(self, capsys):
        code, out, _ = _run(capsys, "oracle", "--k-db", "10", "--snr-db", "20",
                            "--grid", "64")
        assert code == 0
        lines = out.strip().splitlines()
        labels = [ln.split()[0] for ln in lines]
        assert labels == ["G_lambda1", "G_recursion", "G_bruteforce", "G_ergodic"]
        g1 = float(lines[0].split()[1])
        gbf = float(lines[2].split()[1])
        ginf = float(lines[3].split()[1])
        assert g1 < gbf < ginf

    def test_linear_k_flag(self, capsys):
        code, out, _ = _run(capsys, "oracle", "--k-linear", "10", "--snr-db", "20",
                            "--grid", "64")
        code2, out2, _ = _run(capsys, "oracle", "--k-db", "10", "--snr-db", "20",
                              "--grid", "64")
        assert code == code2 == 0
        assert out == out2

    def test_rayleigh_default(self, capsys):
        code, out, _ = _run(capsys, "oracle", "--snr-db", "20", "--grid", "64")
        assert code == 0


class TestKest:
    def test_train_writes_model(self, capsys, tmp_path):
        out = tmp_path / "model.json"
        code, text, _ = _run(capsys, "kest", "train", "--size", "2000",
                             "--n", "50", "--out", str(out))
        assert code == 0
        assert out.exists()
        obj = json.loads(out.read_text())
        assert obj["format"] == "qfb-gbt-v1"
        assert "trees" in text

    def test_estimate_from_samples(self, capsys, tmp_path):
        g = sample_gammas(RicianSpec(5.0), 5000, seed=0)
        sp = tmp_path / "samples.txt"
        np.savetxt(sp, g)
        code, out, _ = _run(capsys, "kest", "estimate", "--samples", str(sp))
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 3
        for ln in lines:
            k_hat = float(re.search(r"K_hat=([0-9.]+)", ln).group(1))
            assert abs(k_hat - 5.0) < 1.0

    def test_estimate_with_model(self, capsys, tmp_path, model_small_file):
        g = sample_gammas(RicianSpec(5.0), 1000, seed=1)
        sp = tmp_path / "samples.txt"
        np.savetxt(sp, g)
        code, out, _ = _run(capsys, "kest", "estimate", "--samples", str(sp),
                            "--model", str(model_small_file))
        assert code == 0
        assert "learned" in out

    def test_estimate_missing_file_fails_cleanly(self, capsys):
        code, _, err = _run(capsys, "kest", "estimate", "--samples", "/nope.txt")
        assert code == 2
        assert "error" in json.loads(err.strip())

    def test_eval_writes_fig2(self, capsys, tmp_path, model_small_file):
        code, _, _ = _run(capsys, "kest", "eval", "--model", str(model_small_file),
                          "--k-max", "2", "--trials", "5", "--n-values", "25",
                          "--out", str(tmp_path))
        assert code == 0
        assert (tmp_path / "fig2_estimators.csv").exists()


class TestRlRun:
    def test_config_run_with_traces(self, capsys, tmp_path):
        cfg = tmp_path / "scenario.json"
        cfg.write_text(json.dumps({
            "segments": [[10.0, 30]], "num_regions": 3, "m_blocks": 20,
            "repetitions": 2, "grid_size": 16, "estimator": "moment-1"}))
        out = tmp_path / "run"
        code, text, _ = _run(capsys, "rl", "run", "--config", str(cfg),
                             "--out", str(out), "--traces", "--seed", "3")
        assert code == 0
        assert (out / "fig4_drift.csv").exists()
        traces = sorted(out.glob("trace_rep*.ndjson"))
        assert len(traces) == 2
        recs = [json.loads(ln) for ln in traces[0].read_text().splitlines()]
        assert len(recs) == 30
        assert recs[0]["schema"] == "qfb-rl-record-v1"
        assert recs[0]["t"] == 1

    def test_missing_config_rejected(self, capsys):
        code, _, err = _run(capsys, "rl", "run")
        assert code == 2
        assert "error" in json.loads(err.strip())


class TestReproduce:
    def test_fig2_small(self, capsys, tmp_path, model_small_file):
        code, _, _ = _run(capsys, "reproduce", "fig2", "--model",
                          str(model_small_file), "--trials", "5",
                          "--out", str(tmp_path))
        assert code == 0
        assert (tmp_path / "fig2_estimators.csv").exists()
        assert (tmp_path / "plot_fig2.py").exists()

    def test_fig3_small_and_deterministic(self, capsys, tmp_path):
        argv = ["reproduce", "fig3", "--estimator", "moment-1", "--reps", "2",
                "--iterations", "25", "--seed", "7"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert _run(capsys, *argv, "--out", str(a))[0] == 0
        assert _run(capsys, *argv, "--out", str(b))[0] == 0

        def strip(path):
            return [ln for ln in path.read_text().splitlines()
                    if not ln.startswith("# generated=")]

        for name in ("fig3_m100.csv", "fig3_m1000.csv"):
            assert strip(a / name) == strip(b / name)

    def test_fig4_small(self, capsys, tmp_path):
        code, _, _ = _run(capsys, "reproduce", "fig4", "--estimator", "moment-1",
                          "--reps", "2", "--dwell", "15", "--out", str(tmp_path))
        assert code == 0
        assert (tmp_path / "fig4_drift.csv").exists()


class TestSelftest:
    def test_passes(self, capsys):
        code, out, _ = _run(capsys, "selftest")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines and all(ln.startswith(("PASS", "FAIL")) for ln in lines)
        assert not any(ln.startswith("FAIL") for ln in lines)

    def test_reports_recursion_discrepancy_when_it_deviates(self, capsys):
        """Whenever the shooting recursion disagrees with brute force by more
        than 0.1%, the suite must say so explicitly yet still exit clean."""
        from qfb.oracle import RecursionError_, brute_force, threshold_recursion
        deviates = False
        for k in (0.0, 10.0):
            spec = RicianSpec.from_db(None if k == 0.0 else 10.0, 20.0)
            for lam in (2, 3, 4):
                gbf = brute_force(spec, lam, grid=256).goodput
                try:
                    rel = abs(threshold_recursion(spec, lam).goodput - gbf) / gbf
                    deviates = deviates or rel >= 1e-3
                except RecursionError_:
                    deviates = True
        code, out, _ = _run(capsys, "selftest")
        assert code == 0
        assert deviates == ("RECURSION-DISCREPANCY" in out)


class TestTopLevel:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
