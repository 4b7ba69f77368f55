"""Gradient-boosted regression trees, squared-error objective.

Small self-contained booster: quantile-binned features, greedy split
search on the binned histogram, shrinkage, and early stopping on a held
out validation split. Ten-feature problems at 1e5 rows train in seconds,
and the flat-array model format round-trips through JSON bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["GBTParams", "GBTModel", "train_gbt"]

MODEL_FORMAT = "qfb-gbt-v1"


@dataclass(frozen=True)
class GBTParams:
    n_trees: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    max_bins: int = 256
    early_stopping_patience: int = 20
    validation_fraction: float = 0.1


@dataclass
class GBTModel:
    """Flat-array ensemble. Node arrays per tree: feature < 0 marks a leaf."""

    base_score: float
    learning_rate: float
    trees: list  # each tree: dict with feature/threshold/left/right/value lists
    feature_names: list
    params: GBTParams
    metadata: dict = field(default_factory=dict)
    # packed traversal arrays, built lazily
    _packed: tuple | None = None

    def _pack(self):
        if self._packed is None:
            feat = np.concatenate([np.asarray(t["feature"], dtype=np.int64) for t in self.trees])
            thr = np.concatenate([np.asarray(t["threshold"], dtype=float) for t in self.trees])
            left = np.concatenate([np.asarray(t["left"], dtype=np.int64) for t in self.trees])
            right = np.concatenate([np.asarray(t["right"], dtype=np.int64) for t in self.trees])
            val = np.concatenate([np.asarray(t["value"], dtype=float) for t in self.trees])
            offs = np.cumsum([0] + [len(t["feature"]) for t in self.trees[:-1]])
            self._packed = (feat, thr, left + np.repeat(offs, [len(t["left"]) for t in self.trees]),
                            right + np.repeat(offs, [len(t["right"]) for t in self.trees]),
                            val, offs)
        return self._packed

    def predict(self, x, feature_names=None) -> np.ndarray:
        """Ensemble prediction for a (n, n_features) matrix.

        If `feature_names` is given, columns are rebound by name so callers
        may pass any column order that carries matching metadata.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if feature_names is not None:
            order = [list(feature_names).index(f) for f in self.feature_names]
            x = x[:, order]
        if not self.trees:
            return np.full(x.shape[0], self.base_score)
        feat, thr, left, right, val, offs = self._pack()
        n = x.shape[0]
        ptr = np.repeat(offs[None, :], n, axis=0)  # (n, n_trees)
        for _ in range(self.params.max_depth + 1):
            f = feat[ptr]
            active = f >= 0
            if not active.any():
                break
            fa = np.where(active, f, 0)
            go_left = np.take_along_axis(x, fa, axis=1) <= thr[ptr]
            ptr = np.where(active, np.where(go_left, left[ptr], right[ptr]), ptr)
        return self.base_score + self.learning_rate * val[ptr].sum(axis=1)

    def to_json_obj(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "params": {
                "n_trees": self.params.n_trees,
                "max_depth": self.params.max_depth,
                "learning_rate": self.params.learning_rate,
                "min_samples_leaf": self.params.min_samples_leaf,
                "max_bins": self.params.max_bins,
                "early_stopping_patience": self.params.early_stopping_patience,
                "validation_fraction": self.params.validation_fraction,
            },
            "metadata": self.metadata,
            "trees": self.trees,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "GBTModel":
        if obj.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format: {obj.get('format')!r}")
        p = obj["params"]
        return cls(
            base_score=obj["base_score"],
            learning_rate=obj["learning_rate"],
            trees=obj["trees"],
            feature_names=obj["feature_names"],
            params=GBTParams(**p),
            metadata=obj.get("metadata", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_obj(), fh)

    @classmethod
    def load(cls, path) -> "GBTModel":
        with open(path) as fh:
            return cls.from_json_obj(json.load(fh))


def _bin_features(x: np.ndarray, max_bins: int):
    """Quantile bin edges per feature; returns (binned uint16, edges list)."""
    n, d = x.shape
    edges = []
    xb = np.empty((n, d), dtype=np.uint16)
    qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
    for j in range(d):
        e = np.unique(np.quantile(x[:, j], qs))
        edges.append(e)
        xb[:, j] = np.searchsorted(e, x[:, j], side="left")
    return xb, edges


def _build_tree(xb, edges, grad, rows, params: GBTParams):
    """One regression tree on the residuals, grown breadth-first."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    frontier = [(root, rows, 0)]
    min_leaf = params.min_samples_leaf
    while frontier:
        node, idx, depth = frontier.pop()
        g = grad[idx]
        s, n_node = g.sum(), idx.size
        value[node] = float(s / n_node)
        if depth >= params.max_depth or n_node < 2 * min_leaf:
            continue
        best = (0.0, -1, -1)  # (gain, feature, bin)
        parent_score = s * s / n_node
        for j in range(xb.shape[1]):
            b = xb[idx, j]
            nb = len(edges[j]) + 1
            cnt = np.bincount(b, minlength=nb)
            gs = np.bincount(b, weights=g, minlength=nb)
            cl = np.cumsum(cnt)[:-1]
            sl = np.cumsum(gs)[:-1]
            cr = n_node - cl
            sr = s - sl
            ok = (cl >= min_leaf) & (cr >= min_leaf)
            if not ok.any():
                continue
            gain = np.where(ok, sl * sl / np.maximum(cl, 1) + sr * sr / np.maximum(cr, 1), -np.inf)
            k = int(np.argmax(gain))
            gk = float(gain[k]) - parent_score
            if gk > best[0] + 1e-12:
                best = (gk, j, k)
        if best[1] < 0:
            continue
        j, k = best[1], best[2]
        go_left = xb[idx, j] <= k
        li, ri = idx[go_left], idx[~go_left]
        nl, nr = new_node(), new_node()
        feature[node] = j
        threshold[node] = float(edges[j][k])
        left[node], right[node] = nl, nr
        frontier.append((nl, li, depth + 1))
        frontier.append((nr, ri, depth + 1))
    return {"feature": feature, "threshold": threshold, "left": left,
            "right": right, "value": value}


def _tree_predict_raw(tree, x):
    feat = np.asarray(tree["feature"])
    thr = np.asarray(tree["threshold"])
    left = np.asarray(tree["left"])
    right = np.asarray(tree["right"])
    val = np.asarray(tree["value"])
    ptr = np.zeros(x.shape[0], dtype=np.int64)
    while True:
        f = feat[ptr]
        active = f >= 0
        if not active.any():
            break
        fa = np.where(active, f, 0)
        go_left = x[np.arange(x.shape[0]), fa] <= thr[ptr]
        ptr = np.where(active, np.where(go_left, left[ptr], right[ptr]), ptr)
    return val[ptr]


def train_gbt(x, y, params: GBTParams = GBTParams(), seed=0,
              feature_names=None, metadata=None) -> GBTModel:
    """Fit the booster with an internal train/validation split.

    The split (when the table is large enough) drives early stopping on
    validation RMSE; the returned ensemble is truncated at the best round.
    Deterministic for a fixed seed.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) feature matrix with matching targets")
    n, d = x.shape
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(d)]

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(n * params.validation_fraction))
    use_val = n_val >= 1 and (n - n_val) >= 2 * params.min_samples_leaf
    if use_val:
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
    else:
        val_idx, tr_idx = perm[:0], perm

    xt, yt = x[tr_idx], y[tr_idx]
    xv, yv = x[val_idx], y[val_idx]
    base = float(np.mean(yt))
    xb, edges = _bin_features(xt, params.max_bins)

    pred_t = np.full(xt.shape[0], base)
    pred_v = np.full(xv.shape[0], base)
    rows = np.arange(xt.shape[0])
    lr = params.learning_rate

    trees = []
    best_rmse, best_round, since_best = np.inf, 0, 0
    for _ in range(params.n_trees):
        tree = _build_tree(xb, edges, yt - pred_t, rows, params)
        trees.append(tree)
        pred_t += lr * _tree_predict_raw(tree, xt)
        if use_val:
            pred_v += lr * _tree_predict_raw(tree, xv)
            rmse = float(np.sqrt(np.mean((yv - pred_v) ** 2)))
            if rmse < best_rmse - 1e-12:
                best_rmse, best_round, since_best = rmse, len(trees), 0
            else:
                since_best += 1
                if since_best >= params.early_stopping_patience:
                    break
    if use_val:
        trees = trees[:best_round]

    meta = dict(metadata or {})
    meta.setdefault("seed", int(seed))
    meta["n_rows"] = int(n)
    meta["n_trees_fit"] = len(trees)
    if use_val:
        meta["validation_rmse"] = best_rmse
    return GBTModel(base_score=base, learning_rate=lr, trees=trees,
                    feature_names=list(feature_names), params=params, metadata=meta)
