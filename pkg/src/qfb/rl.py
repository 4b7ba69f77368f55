"""Tabular Q-learning over quantization thresholds.

Each interior boundary lambda_1..lambda_{Lambda-1} is an agent walking on
a shared discrete grid of candidate positions; agents move round-robin,
one +-1 step (or hold) per iteration, with strict ordering enforced by an
action mask. State is (shape-factor bin, own grid index); reward is the
empirical rate-matched goodput over a block of M transmissions.

The value tables are initialized optimistically (a concavity bound on the
achievable goodput) rather than at zero: with the fast epsilon decay a
zero-initialized greedy walk locks onto whichever action it samples
first. Optimism makes the near-greedy policy probe every untried action
once; the first update of a cell replaces the optimistic value with the
observed target, after which updates smooth at the configured rate. A
small exploration floor lets the walk keep escaping noise-induced local
stalls, and the bin of a median-smoothed shape-factor estimate keys the
tables so estimator noise does not scatter learning across bins.
"""
from __future__ import annotations

import collections
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import RicianSpec, capacity, quantile, sample_gammas
from .feedback import rate_match
from .kest import KEstimate

__all__ = [
    "ThresholdGrid",
    "KBins",
    "QTables",
    "RlState",
    "IterationRecord",
    "RlEnv",
    "epsilon_schedule",
    "select_action",
    "q_update",
    "bin_k",
    "run_iteration",
    "default_grid",
    "default_bins",
]

ACTIONS = (-1, 0, 1)
RECORD_SCHEMA = "qfb-rl-record-v1"
CHECKPOINT_FORMAT = "qfb-qtables-v1"


@dataclass(frozen=True)
class ThresholdGrid:
    """Ordered candidate positions for the threshold agents."""

    values: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", v)
        if len(v) < 2 or v[0] <= 0 or any(a >= b for a, b in zip(v, v[1:])):
            raise ValueError("grid must be strictly increasing and positive")

    def __len__(self):
        return len(self.values)


def default_grid(size: int = 64, k_db: float = 5.0) -> ThresholdGrid:
    """Quantile-spaced candidates under a compromise mid-range shape factor."""
    spec = RicianSpec.from_db(k_db)
    qs = (np.arange(size) + 1.0) / (size + 1.0)
    return ThresholdGrid(values=tuple(quantile(spec, q) for q in qs))


@dataclass(frozen=True)
class KBins:
    """Shape-factor bins in dB plus a leading Rayleigh bin (index 0)."""

    edges_db: tuple

    def __post_init__(self):
        e = tuple(float(x) for x in self.edges_db)
        object.__setattr__(self, "edges_db", e)
        if len(e) < 2 or any(a >= b for a, b in zip(e, e[1:])):
            raise ValueError("edges must be strictly increasing")

    @property
    def num_bins(self) -> int:
        # Rayleigh bin + one bin per edge interval; the top interval absorbs overflow
        return len(self.edges_db)

    def center_k(self, index: int) -> float:
        """Representative linear K of a bin (0 for the Rayleigh bin)."""
        if index == 0:
            return 0.0
        e = self.edges_db
        i = min(index, len(e) - 1)
        lo = e[i - 1]
        hi = e[i] if i < len(e) else e[-1] + (e[-1] - e[-2])
        return 10.0 ** ((lo + hi) / 20.0)


def default_bins(lo_db: float = -5.0, hi_db: float = 25.0, step_db: float = 1.0) -> KBins:
    n = int(round((hi_db - lo_db) / step_db))
    return KBins(edges_db=tuple(lo_db + i * step_db for i in range(n + 1)))


def bin_k(bins: KBins, k_hat) -> int:
    """Total map from an estimate to a bin: below range -> Rayleigh bin,
    above range -> top bin, boundaries half-open to the upper bin."""
    k = k_hat.k_hat if isinstance(k_hat, KEstimate) else float(k_hat)
    if k <= 0.0:
        return 0
    k_db = 10.0 * math.log10(k)
    e = bins.edges_db
    if k_db < e[0]:
        return 0
    if k_db >= e[-1]:
        return bins.num_bins - 1
    return int(np.searchsorted(np.asarray(e), k_db, side="right"))


@dataclass
class QTables:
    """Per-agent value tables of shape (num_bins, grid_size, 3).

    With first_visit_replace the very first update of a cell overwrites the
    initial value instead of blending it: optimistic initial values then
    last exactly long enough to draw one probe of each action, after which
    the table reflects observed rewards smoothed at the configured rate.
    """

    num_agents: int
    num_bins: int
    grid_size: int
    alpha: float = 0.1
    discount: float = 0.9
    q_init: float = 0.0
    first_visit_replace: bool = False
    q: np.ndarray = field(default=None, repr=False)
    visited: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        shape = (self.num_agents, self.num_bins, self.grid_size, 3)
        if self.q is None:
            self.q = np.full(shape, float(self.q_init))
        if self.visited is None:
            self.visited = np.zeros(shape, dtype=bool)
        if not (0 < self.alpha <= 1) or not (0 <= self.discount < 1):
            raise ValueError("need 0 < alpha <= 1 and 0 <= discount < 1")

    def save(self, path, grid: ThresholdGrid, bins: KBins):
        obj = {
            "format": CHECKPOINT_FORMAT,
            "num_agents": self.num_agents,
            "num_bins": self.num_bins,
            "grid_size": self.grid_size,
            "alpha": self.alpha,
            "discount": self.discount,
            "q_init": self.q_init,
            "first_visit_replace": self.first_visit_replace,
            "grid": list(grid.values),
            "bins_db": list(bins.edges_db),
            "q": self.q.ravel().tolist(),
            "visited": self.visited.ravel().astype(int).tolist(),
        }
        with open(path, "w") as fh:
            json.dump(obj, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            obj = json.load(fh)
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {obj.get('format')!r}")
        shape = (obj["num_agents"], obj["num_bins"], obj["grid_size"], 3)
        t = cls(num_agents=obj["num_agents"], num_bins=obj["num_bins"],
                grid_size=obj["grid_size"], alpha=obj["alpha"],
                discount=obj["discount"], q_init=obj["q_init"],
                first_visit_replace=obj.get("first_visit_replace", False),
                q=np.asarray(obj["q"]).reshape(shape),
                visited=np.asarray(obj["visited"], dtype=bool).reshape(shape))
        grid = ThresholdGrid(values=tuple(obj["grid"]))
        bins = KBins(edges_db=tuple(obj["bins_db"]))
        return t, grid, bins


@dataclass
class RlState:
    indices: np.ndarray  # grid index per agent, strictly increasing
    k_bin: int
    t: int = 1
    eps: float = 0.5


@dataclass(frozen=True)
class IterationRecord:
    t: int
    agent: int
    action: int
    eps: float
    reward: float
    lambdas: tuple
    k_hat: float
    k_bin: int
    m_blocks: int
    schema: str = RECORD_SCHEMA

    def to_json_obj(self) -> dict:
        return {
            "schema": self.schema, "t": self.t, "agent": self.agent,
            "action": self.action, "eps": self.eps, "reward": self.reward,
            "lambdas": [("inf" if math.isinf(x) else x) for x in self.lambdas],
            "k_hat": self.k_hat, "k_bin": self.k_bin, "m": self.m_blocks,
        }


def epsilon_schedule(eps_t: float, t: int, eps_min: float = 0.01) -> float:
    """Next exploration rate eps_{t+1} = eps_t / sqrt(t), floored at eps_min."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return max(eps_t / math.sqrt(t), eps_min)


def _valid_actions(indices: np.ndarray, agent: int, grid_size: int) -> np.ndarray:
    """Mask over (-1, 0, +1) preserving strict index ordering and grid bounds."""
    idx = indices[agent]
    lo = indices[agent - 1] + 1 if agent > 0 else 0
    hi = indices[agent + 1] - 1 if agent < len(indices) - 1 else grid_size - 1
    return np.array([idx - 1 >= lo, True, idx + 1 <= hi])


def select_action(q: QTables, state: RlState, agent: int, rng) -> int:
    """Epsilon-greedy over the agent's masked Q-row.

    Greedy ties break toward the smallest action value (-1, then 0, then +1)
    so traces are reproducible; exploration is uniform over valid actions.
    """
    mask = _valid_actions(state.indices, agent, q.grid_size)
    if rng.random() < state.eps:
        choices = np.flatnonzero(mask)
        return ACTIONS[rng.choice(choices)]
    row = q.q[agent, state.k_bin, state.indices[agent]]
    masked = np.where(mask, row, -np.inf)
    return ACTIONS[int(np.argmax(masked))]


def q_update(q: QTables, agent: int, state_before: RlState, action: int,
             reward: float, state_after: RlState) -> None:
    """Temporal-difference update of one cell:
    Q <- (1-alpha) Q + alpha (reward + discount * max_valid Q(next)),
    with alpha = 1 on a cell's first update when first_visit_replace is set."""
    if not math.isfinite(reward):
        raise ValueError(f"non-finite reward: {reward}")
    a = ACTIONS.index(action)
    ci = (agent, state_before.k_bin, state_before.indices[agent], a)
    mask = _valid_actions(state_after.indices, agent, q.grid_size)
    nxt = q.q[agent, state_after.k_bin, state_after.indices[agent]]
    best_next = float(np.max(np.where(mask, nxt, -np.inf)))
    alpha = 1.0 if (q.first_visit_replace and not q.visited[ci]) else q.alpha
    q.visited[ci] = True
    q.q[ci] = (1.0 - alpha) * q.q[ci] + alpha * (reward + q.discount * best_next)


class RlEnv:
    """One learning run: channel, grid, bins, block size, and the K estimator.

    `estimator` maps a sample batch to a linear K estimate (a KEstimate or
    float); it is re-applied each iteration to the most recent
    min(M, n_est) draws, so the consulted Q-rows follow the channel.
    """

    def __init__(self, spec: RicianSpec, grid: ThresholdGrid, bins: KBins,
                 estimator, m_blocks: int = 100, n_est: int = 100,
                 alpha: float = 0.2, discount: float = 0.0,
                 eps_init: float = 0.5, eps_min: float = 0.05,
                 q_init: float | None = None, rng=None):
        self.spec = spec
        self.grid = grid
        self.bins = bins
        self.estimator = estimator
        self.m_blocks = int(m_blocks)
        self.n_est = int(n_est)
        self.eps_min = float(eps_min)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self._grid_arr = np.asarray(grid.values)
        self._cap = capacity(self._grid_arr, spec.snr)
        if q_init is None:
            # discounted-return upper bound: by concavity of the capacity in
            # gamma^2, no scheme's expected goodput can exceed
            # log2(1 + snr * E[gamma^2]), so this dominates every true value
            # while staying tight enough to decay quickly
            q_init = float(capacity(math.sqrt(spec.omega), spec.snr) / (1.0 - discount))
        self.q_init = float(q_init)
        self.tables = None  # built by reset()
        self.state = None
        self._alpha = alpha
        self._discount = discount
        self._eps_init = eps_init

    def set_spec(self, spec: RicianSpec) -> None:
        """Drift hook: swap the channel statistics between iterations."""
        if spec.snr != self.spec.snr:
            raise ValueError("SNR changes are not supported mid-run")
        self.spec = spec

    def _estimate_bin(self, gammas) -> tuple[float, int]:
        """Latest estimate plus the bin of the median over recent estimates.

        Binning the raw per-iteration estimate makes the learning state
        churn with estimator noise (at small K a batch of 100 samples
        wobbles across many 1 dB bins), which dilutes every bin's value
        table. The median of a short window keeps the bin stable in
        steady state yet follows a genuine drift within a few iterations.
        """
        est = self.estimator(gammas[-min(self.m_blocks, self.n_est):])
        k_hat = est.k_hat if isinstance(est, KEstimate) else float(est)
        self._khat_window.append(k_hat)
        b = bin_k(self.bins, float(np.median(self._khat_window)))
        self._touch_bin(b)
        return k_hat, b

    def _touch_bin(self, b: int) -> None:
        """First visit to a bin seeds its rows from the nearest visited bin.

        Estimation noise makes the binned shape factor wobble across a few
        adjacent bins; without transfer every wobble lands on fresh
        optimistic rows and re-triggers exploration indefinitely. Values
        vary smoothly with the shape factor, so the neighbor copy is a
        good warm start while previously learned bins keep their own rows.
        """
        if b in self._seen_bins:
            return
        if self._seen_bins:
            src = min(self._seen_bins, key=lambda s: abs(s - b))
            self.tables.q[:, b] = self.tables.q[:, src]
        self._seen_bins.add(b)

    def _initial_indices(self, k_bin: int) -> np.ndarray:
        """Mass-balanced start: agents at the {l/Lambda} quantiles of the
        current bin's distribution, snapped to distinct grid indices."""
        n_agents = self.tables.num_agents
        spec = RicianSpec(k_factor=self.bins.center_k(k_bin), omega=self.spec.omega,
                          snr=self.spec.snr)
        lam = len(self.grid)
        idx = []
        for l in range(1, n_agents + 1):
            target = quantile(spec, l / (n_agents + 1.0))
            i = int(np.argmin(np.abs(self._grid_arr - target)))
            i = min(max(i, (idx[-1] + 1) if idx else 0), lam - (n_agents - l) - 1)
            idx.append(i)
        return np.asarray(idx)

    def reset(self, num_regions: int) -> RlState:
        self.tables = QTables(num_agents=num_regions - 1, num_bins=self.bins.num_bins,
                              grid_size=len(self.grid), alpha=self._alpha,
                              discount=self._discount, q_init=self.q_init,
                              first_visit_replace=True)
        self._seen_bins = set()
        self._khat_window = collections.deque(maxlen=5)
        warmup = sample_gammas(self.spec, min(self.m_blocks, self.n_est), seed=self.rng)
        k_hat, k_bin = self._estimate_bin(warmup)
        self.state = RlState(indices=self._initial_indices(k_bin), k_bin=k_bin,
                             t=1, eps=self._eps_init)
        self._last_k_hat = k_hat
        return self.state

    def scheme(self):
        lams = (0.0, *self._grid_arr[self.state.indices], math.inf)
        return rate_match(lams, self.spec.snr)

    def step(self) -> IterationRecord:
        return run_iteration(self, self.tables, self.state, self.rng)


def run_iteration(env: RlEnv, q: QTables, state: RlState, rng) -> IterationRecord:
    """One round-robin learning step; mutates `q` and `state` in place.

    Order follows the training loop: pick the agent, epsilon-greedy action,
    move the threshold (the new rate is implied by rate matching), observe
    M transmissions, reward with the empirical goodput, update the table
    and the exploration rate.
    """
    agent = (state.t - 1) % q.num_agents
    action = select_action(q, state, agent, rng)

    before = RlState(indices=state.indices.copy(), k_bin=state.k_bin,
                     t=state.t, eps=state.eps)
    state.indices[agent] += action

    gammas = sample_gammas(env.spec, env.m_blocks, seed=rng)
    # empirical rate-matched goodput: credit C(lambda_l) of the landed region
    edges = env._grid_arr[state.indices]
    region = np.searchsorted(edges, gammas, side="right")
    rates = np.concatenate(([0.0], env._cap[state.indices]))
    reward = float(np.mean(rates[region]))

    k_hat, k_bin = env._estimate_bin(gammas)
    env._last_k_hat = k_hat
    after = RlState(indices=state.indices, k_bin=k_bin, t=state.t + 1, eps=state.eps)
    q_update(q, agent, before, action, reward, after)

    state.k_bin = k_bin
    state.eps = epsilon_schedule(state.eps, state.t, env.eps_min)
    state.t += 1

    lams = (0.0, *edges.tolist(), math.inf)
    return IterationRecord(t=before.t, agent=agent, action=action, eps=before.eps,
                           reward=reward, lambdas=lams, k_hat=k_hat, k_bin=k_bin,
                           m_blocks=env.m_blocks)
