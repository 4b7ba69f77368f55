"""Experiment runner: drift scenarios, Monte Carlo repetition, figure data.

A scenario is a dwell schedule of shape factors plus the RL and estimator
configuration. Repetitions run on disjoint RNG streams spawned from the
scenario seed and aggregate order-independently, so results depend only
on (config, seed).
"""
from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .channel import RicianSpec
from .gbt import GBTModel
from .kest import (GBTParams, compute_features, generate_dataset,
                   moment_estimator_1, predict_k, train_estimator)
from .oracle import brute_force
from .rl import RlEnv, default_bins, default_grid

__all__ = ["Scenario", "RunSummary", "run_scenario", "emit_figure_data",
           "load_scenario", "scenario_from_dict", "default_fig3_scenario",
           "default_fig4_scenario"]

REFERENCE_GRID = 256


@dataclass(frozen=True)
class Scenario:
    """Drift schedule plus RL/estimation configuration.

    segments: list of (k_db or None for Rayleigh, dwell in iterations).
    """

    segments: tuple
    num_regions: int = 4
    snr_db: float = 20.0
    m_blocks: int = 100
    n_est: int = 100
    repetitions: int = 50
    seed: int = 0
    grid_size: int = 64
    estimator: str = "learned"  # "learned" | "moment-1"
    alpha: float = 0.2
    discount: float = 0.0
    eps_init: float = 0.5
    eps_min: float = 0.05

    def __post_init__(self):
        if not self.segments:
            raise ValueError("need at least one schedule segment")
        for k_db, dwell in self.segments:
            if dwell < 1:
                raise ValueError("dwell must be >= 1 iteration")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.num_regions < 2:
            raise ValueError("num_regions must be >= 2")

    @property
    def total_iterations(self) -> int:
        return sum(d for _, d in self.segments)

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class RunSummary:
    scenario: Scenario
    mean_reward: np.ndarray      # per iteration, across repetitions
    var_reward: np.ndarray
    reference: np.ndarray        # per-iteration long-term optimum for the active K
    segment_references: tuple    # one optimum per schedule segment
    rewards: np.ndarray = field(default=None, repr=False)  # (reps, T)
    runtime_s: float = 0.0

    @property
    def std_reward(self) -> np.ndarray:
        return np.sqrt(self.var_reward)


def _make_estimator(scenario: Scenario, model: GBTModel | None):
    if scenario.estimator == "moment-1":
        return lambda g: moment_estimator_1(compute_features(g))
    if scenario.estimator == "learned":
        if model is None:
            raise ValueError("scenario wants the learned estimator but no model was given")
        return lambda g: predict_k(model, compute_features(g))
    raise ValueError(f"unknown estimator {scenario.estimator!r}")


def _segment_specs(scenario: Scenario):
    return [RicianSpec.from_db(k_db, scenario.snr_db) for k_db, _ in scenario.segments]


def _run_one_repetition(scenario: Scenario, model: GBTModel | None, seed_seq):
    rng = np.random.default_rng(seed_seq)
    specs = _segment_specs(scenario)
    env = RlEnv(
        spec=specs[0],
        grid=default_grid(scenario.grid_size),
        bins=default_bins(),
        estimator=_make_estimator(scenario, model),
        m_blocks=scenario.m_blocks,
        n_est=scenario.n_est,
        alpha=scenario.alpha,
        discount=scenario.discount,
        eps_init=scenario.eps_init,
        eps_min=scenario.eps_min,
        rng=rng,
    )
    env.reset(scenario.num_regions)
    rewards = np.empty(scenario.total_iterations)
    records = []
    t = 0
    for spec, (_, dwell) in zip(specs, scenario.segments):
        env.set_spec(spec)
        for _ in range(dwell):
            rec = env.step()
            rewards[t] = rec.reward
            records.append(rec)
            t += 1
    return rewards, records


def run_scenario(scenario: Scenario, model: GBTModel | None = None,
                 threads: int | None = None, record_sink=None) -> RunSummary:
    """Execute all repetitions and aggregate per-iteration reward stats.

    `record_sink(rep_index, records)` receives every repetition's iteration
    records when given (e.g. to write NDJSON traces). `threads` > 1 runs
    repetitions in a process pool; results merge by repetition index.
    """
    t0 = time.monotonic()
    if threads is None:
        threads = int(os.environ.get("QFB_THREADS", "1"))
    seeds = np.random.SeedSequence(scenario.seed).spawn(scenario.repetitions)

    results = [None] * scenario.repetitions
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as ex:
            futs = {ex.submit(_run_one_repetition, scenario, model, s): i
                    for i, s in enumerate(seeds)}
            for fut in concurrent.futures.as_completed(futs):
                results[futs[fut]] = fut.result()
    else:
        for i, s in enumerate(seeds):
            results[i] = _run_one_repetition(scenario, model, s)

    rewards = np.stack([r[0] for r in results])
    if record_sink is not None:
        for i, (_, recs) in enumerate(results):
            record_sink(i, recs)

    seg_refs = []
    for spec, _ in zip(_segment_specs(scenario), scenario.segments):
        seg_refs.append(brute_force(spec, scenario.num_regions, grid=REFERENCE_GRID).goodput)
    reference = np.concatenate([
        np.full(dwell, ref) for (_, dwell), ref in zip(scenario.segments, seg_refs)
    ])

    return RunSummary(
        scenario=scenario,
        mean_reward=rewards.mean(axis=0),
        var_reward=rewards.var(axis=0),
        reference=reference,
        segment_references=tuple(seg_refs),
        rewards=rewards,
        runtime_s=time.monotonic() - t0,
    )


# ---------------------------------------------------------------------------
# scenario configs

def default_fig3_scenario(m_blocks: int, seed: int = 0, repetitions: int = 50,
                          iterations: int = 2000, estimator: str = "learned") -> Scenario:
    return Scenario(segments=((10.0, iterations),), num_regions=4, snr_db=20.0,
                    m_blocks=m_blocks, n_est=100, repetitions=repetitions,
                    seed=seed, estimator=estimator)


def default_fig4_scenario(seed: int = 0, repetitions: int = 50, dwell: int = 1500,
                          estimator: str = "learned", revisit: bool = True) -> Scenario:
    segs = [(0.0, dwell), (10.0, dwell), (20.0, dwell)]
    if revisit:
        segs.append((10.0, dwell))
    return Scenario(segments=tuple(segs), num_regions=4, snr_db=20.0,
                    m_blocks=100, n_est=100, repetitions=repetitions,
                    seed=seed, estimator=estimator)


def scenario_from_dict(d: dict) -> Scenario:
    segs = tuple((None if k in (None, "rayleigh") else float(k), int(dw))
                 for k, dw in d["segments"])
    kwargs = {k: v for k, v in d.items() if k != "segments"}
    return Scenario(segments=segs, **kwargs)


def load_scenario(path: str) -> Scenario:
    """Scenario from a JSON or TOML config file (extension decides)."""
    if str(path).endswith(".toml"):
        try:
            import tomllib as toml
        except ImportError:  # python < 3.11
            import tomli as toml
        with open(path, "rb") as fh:
            d = toml.load(fh)
    else:
        with open(path) as fh:
            d = json.load(fh)
    return scenario_from_dict(d)


# ---------------------------------------------------------------------------
# figure data

def _header_lines(meta: dict) -> list:
    lines = [f"# generated={time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    lines.append(f"# qfb_version={__version__}")
    for k, v in meta.items():
        lines.append(f"# {k}={v}")
    return lines


def _write_csv(path, header_meta, columns, rows):
    with open(path, "w") as fh:
        for line in _header_lines(header_meta):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def emit_figure_data(summaries, which: str, out_dir) -> list:
    """Write per-curve CSVs, a schema sidecar, and a plotting script.

    fig3 expects {"m100": RunSummary, "m1000": RunSummary}; fig4 expects a
    single RunSummary under "run"; fig2 expects {"eval": rows} from
    kest.evaluate_estimators. Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    if which == "fig2":
        rows = summaries.get("eval")
        if not rows:
            raise ValueError("fig2 needs kest evaluation rows under 'eval'")
        path = os.path.join(out_dir, "fig2_estimators.csv")
        _write_csv(path, {"figure": "fig2"},
                   ["k_true", "n", "method", "mean_khat", "lo", "hi", "reference"],
                   [(r["k_true"], r["n"], r["method"], r["mean_khat"], r["lo"],
                     r["hi"], r["k_true"]) for r in rows])
        written.append(path)
    elif which == "fig3":
        for key in ("m100", "m1000"):
            s = summaries.get(key)
            if s is None:
                raise ValueError(f"fig3 needs a summary under {key!r}")
            path = os.path.join(out_dir, f"fig3_{key}.csv")
            std = s.std_reward
            meta = {"figure": "fig3", "m": s.scenario.m_blocks,
                    "config_hash": s.scenario.config_hash(),
                    "seed": s.scenario.seed}
            _write_csv(path, meta, ["t", "mean_omega", "lo", "hi", "reference"],
                       [(t + 1, float(s.mean_reward[t]),
                         float(s.mean_reward[t] - 2 * std[t]),
                         float(s.mean_reward[t] + 2 * std[t]),
                         float(s.reference[t]))
                        for t in range(len(s.mean_reward))])
            written.append(path)
    elif which == "fig4":
        s = summaries.get("run")
        if s is None:
            raise ValueError("fig4 needs a summary under 'run'")
        path = os.path.join(out_dir, "fig4_drift.csv")
        std = s.std_reward
        meta = {"figure": "fig4", "config_hash": s.scenario.config_hash(),
                "seed": s.scenario.seed}
        _write_csv(path, meta, ["t", "mean_omega", "lo", "hi", "reference"],
                   [(t + 1, float(s.mean_reward[t]),
                     float(s.mean_reward[t] - 2 * std[t]),
                     float(s.mean_reward[t] + 2 * std[t]),
                     float(s.reference[t]))
                    for t in range(len(s.mean_reward))])
        written.append(path)
    else:
        raise ValueError(f"unknown figure {which!r}")

    schema = os.path.join(out_dir, f"{which}_schema.json")
    with open(schema, "w") as fh:
        json.dump(_schema_doc(which), fh, indent=2)
    written.append(schema)

    script = os.path.join(out_dir, f"plot_{which}.py")
    with open(script, "w") as fh:
        fh.write(_plot_script(which))
    written.append(script)
    return written


def _schema_doc(which: str) -> dict:
    common = "leading '#' lines are metadata; 'generated' is a timestamp and excluded from replay comparison"
    if which == "fig2":
        return {"file": "fig2_estimators.csv", "notes": common, "columns": {
            "k_true": "true linear shape factor", "n": "samples per estimate",
            "method": "moment-1 | learned", "mean_khat": "sample mean of K-hat",
            "lo": "mean - 2 std", "hi": "mean + 2 std",
            "reference": "identity line (k_true)"}}
    return {"file": f"{which}_*.csv", "notes": common, "columns": {
        "t": "iteration (1-based)", "mean_omega": "mean reward across repetitions",
        "lo": "mean - 2 std", "hi": "mean + 2 std",
        "reference": "long-term optimum goodput for the active shape factor"}}


def _plot_script(which: str) -> str:
    return f'''"""Generated plotting script for {which}; needs matplotlib + pandas."""
import glob
import matplotlib.pyplot as plt
import pandas as pd

for path in sorted(glob.glob("{which}_*.csv")):
    df = pd.read_csv(path, comment="#")
    fig, ax = plt.subplots()
    if "t" in df.columns:
        ax.plot(df["t"], df["mean_omega"], label="mean reward")
        ax.fill_between(df["t"], df["lo"], df["hi"], alpha=0.3)
        ax.plot(df["t"], df["reference"], "-.", label="long-term optimum")
        ax.set_xlabel("iteration")
        ax.set_ylabel("goodput (bits/use)")
    else:
        for (method, n), g in df.groupby(["method", "n"]):
            ax.errorbar(g["k_true"], g["mean_khat"],
                        yerr=[g["mean_khat"] - g["lo"], g["hi"] - g["mean_khat"]],
                        label=f"{{method}} N={{n}}")
        ax.plot(df["k_true"], df["reference"], "-.")
        ax.set_xlabel("true K")
        ax.set_ylabel("estimated K")
    ax.legend()
    fig.savefig(path.replace(".csv", ".png"), dpi=150)
'''
