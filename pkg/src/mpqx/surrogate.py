"""From-scratch random forest regressor (CART trees, variance-reduction splits).

Used as the scheme-to-accuracy predictor during search and reused by the
tree-variant latency proxy. Everything is seed-deterministic: per-tree RNG
streams are spawned from the config seed and trees are always fitted in
order, so results do not depend on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model_ir import QuantScheme


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    feature_subset: float = 1.0 / 3.0
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("forest needs at least one tree")
        if not (0 < self.feature_subset <= 1):
            raise ValidationError("feature_subset must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be >= 1")

    def to_json(self):
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "feature_subset": self.feature_subset,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)


def encode_scheme(scheme: QuantScheme) -> np.ndarray:
    """Flatten to 2L raw bit values: (bw1, ba1, ..., bwL, baL)."""
    return np.array([b for pair in scheme for b in pair], dtype=np.float64)


class _Tree:
    """Flattened binary regression tree. feature[i] < 0 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = x[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]


def _best_split(x, y, features, min_leaf):
    """Best (feature, threshold) by variance reduction; ties resolved by
    lowest feature index, then lowest threshold. Returns None when no split
    satisfies the leaf-size constraint."""
    n = len(y)
    best = None  # (neg_sse, feature, threshold)
    for f in features:
        col = x[:, f]
        order = np.argsort(col, kind="stable")
        cs, ys = col[order], y[order]
        # split after position i (1-based left count) only between distinct values
        distinct = cs[1:] != cs[:-1]
        counts = np.arange(1, n)
        valid = distinct & (counts >= min_leaf) & (n - counts >= min_leaf)
        if not valid.any():
            continue
        c1 = np.cumsum(ys)[:-1]
        c2 = np.cumsum(ys**2)[:-1]
        tot1, tot2 = c1[-1] + ys[-1], c2[-1] + ys[-1] ** 2
        sse_l = c2 - c1**2 / counts
        sse_r = (tot2 - c2) - (tot1 - c1) ** 2 / (n - counts)
        sse = np.where(valid, sse_l + sse_r, np.inf)
        i = int(np.argmin(sse))  # argmin takes the first minimum: lowest threshold
        if not np.isfinite(sse[i]):
            continue
        thr = (cs[i] + cs[i + 1]) / 2.0
        cand = (sse[i], f, thr, i + 1, order)
        if best is None or cand[0] < best[0] - 1e-12:
            best = cand
    return best


def _grow(tree: _Tree, x, y, depth, cfg: ForestConfig, rng):
    node_id = len(tree.feature)
    tree.feature.append(-1)
    tree.threshold.append(0.0)
    tree.left.append(-1)
    tree.right.append(-1)
    tree.value.append(float(np.mean(y)))
    n, d = x.shape
    if n < 2 * cfg.min_samples_leaf or (cfg.max_depth is not None and depth >= cfg.max_depth):
        return node_id
    if np.all(y == y[0]):
        return node_id
    m = max(1, int(np.floor(cfg.feature_subset * d + 1e-9)))
    features = np.sort(rng.choice(d, size=m, replace=False)) if m < d else np.arange(d)
    found = _best_split(x, y, features, cfg.min_samples_leaf)
    if found is None:
        return node_id
    _, f, thr, n_left, order = found
    left_rows, right_rows = order[:n_left], order[n_left:]
    tree.feature[node_id] = int(f)
    tree.threshold[node_id] = float(thr)
    tree.left[node_id] = _grow(tree, x[left_rows], y[left_rows], depth + 1, cfg, rng)
    tree.right[node_id] = _grow(tree, x[right_rows], y[right_rows], depth + 1, cfg, rng)
    return node_id


@dataclass
class Forest:
    config: ForestConfig
    trees: list = field(default_factory=list)
    n_features: int = 0

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        """Per-tree predictions, shape [n_trees, n_rows]."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if not self.trees:
            raise ValidationError("forest is not fitted")
        if x.shape[1] != self.n_features:
            raise ValidationError(
                f"forest expects {self.n_features} features, got {x.shape[1]}"
            )
        return np.stack([t.predict(x) for t in self.trees])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_matrix(x).mean(axis=0)

    def predict_with_spread(self, x: np.ndarray):
        mat = self.predict_matrix(x)
        return mat.mean(axis=0), mat.std(axis=0)

    def to_json(self):
        return {
            "config": self.config.to_json(),
            "n_features": self.n_features,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_json(cls, obj):
        forest = cls(config=ForestConfig.from_json(obj["config"]),
                     n_features=int(obj["n_features"]))
        for td in obj["trees"]:
            t = _Tree()
            t.feature, t.threshold = td["feature"], td["threshold"]
            t.left, t.right, t.value = td["left"], td["right"], td["value"]
            forest.trees.append(t.finalize())
        return forest


def fit_forest(x: np.ndarray, y: np.ndarray, cfg: ForestConfig) -> Forest:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValidationError("feature and target row counts disagree")
    if len(y) < 2:
        raise ValidationError("forest fitting needs at least 2 samples")
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    forest = Forest(config=cfg, n_features=x.shape[1])
    n = len(y)
    for s in streams:
        rng = np.random.default_rng(s)
        if cfg.bootstrap:
            rows = rng.integers(0, n, size=n)
            xs, ys = x[rows], y[rows]
        else:
            xs, ys = x, y
        tree = _Tree()
        _grow(tree, xs, ys, 0, cfg, rng)
        forest.trees.append(tree.finalize())
    return forest


def fit_scheme_forest(samples, cfg: ForestConfig) -> Forest:
    """Fit on (scheme, accuracy) pairs using the raw-bit feature encoding."""
    if len(samples) < 2:
        raise ValidationError("need at least 2 (scheme, accuracy) samples")
    x = np.stack([encode_scheme(s) for s, _ in samples])
    y = np.array([a for _, a in samples], dtype=np.float64)
    return fit_forest(x, y, cfg)


def predict_scheme(forest: Forest, scheme: QuantScheme) -> float:
    return float(forest.predict(encode_scheme(scheme)[None, :])[0])


def predict_scheme_with_spread(forest: Forest, scheme: QuantScheme):
    mean, std = forest.predict_with_spread(encode_scheme(scheme)[None, :])
    return float(mean[0]), float(std[0])
