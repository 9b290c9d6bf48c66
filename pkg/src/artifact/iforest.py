"""Isolation forest.

Trees are grown on random subsamples by splitting on a random feature at a
uniform random value strictly between the node's min and max.  The anomaly
score of ``x`` is ``2 ** (-E[h(x)] / c(psi))``, where ``h`` is the depth of
the leaf reached plus ``c(leaf size)`` and ``c(n)`` is the average path length
of an unsuccessful binary-search-tree lookup over ``n`` points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .errors import DimensionMismatchError, TooFewPointsError

EULER_GAMMA = 0.5772156649


def harmonic(i: float) -> float:
    return math.log(i) + EULER_GAMMA


def c_factor(n: int) -> float:
    """Expected path length adjustment ``2 H(n-1) - 2 (n-1) / n``; zero for n <= 1."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class IsolationTree:
    """Array-backed tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray
    height_limit: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_path(self) -> np.ndarray:
        return self.depth + np.array([c_factor(int(s)) for s in self.size])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index of the leaf reached by each row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(self.height_limit + 1):
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            go_left = np.zeros(len(X), dtype=bool)
            go_left[active] = X[rows[active], feat[active]] < self.threshold[node[active]]
            node = np.where(active, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def path_length(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_path()[self.apply(X)]


def _grow(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n: int, d: int) -> int:
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    root = new_node(len(X), 0)
    stack = [(root, X)]
    while stack:
        node, pts = stack.pop()
        d = depth[node]
        if d >= height_limit or len(pts) <= 1:
            continue
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        q = int(rng.choice(splittable))
        p = rng.uniform(lo[q], hi[q])
        while p <= lo[q]:
            p = rng.uniform(lo[q], hi[q])
        mask = pts[:, q] < p
        feature[node] = q
        threshold[node] = p
        l_pts, r_pts = pts[mask], pts[~mask]
        left[node] = new_node(len(l_pts), d + 1)
        right[node] = new_node(len(r_pts), d + 1)
        stack.append((right[node], r_pts))
        stack.append((left[node], l_pts))

    return IsolationTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        size=np.array(size, dtype=np.int64),
        depth=np.array(depth, dtype=np.float64),
        height_limit=height_limit,
    )


@dataclass
class IsolationForest:
    trees: list[IsolationTree]
    sample_size: int
    n_features: int
    threshold: float = 0.5

    def path_lengths(self, X) -> np.ndarray:
        X = self._check(X)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.path_length(X)
        return total / len(self.trees)

    def score(self, X) -> np.ndarray:
        """Anomaly scores in (0, 1); higher means easier to isolate."""
        return 2.0 ** (-self.path_lengths(X) / c_factor(self.sample_size))

    def detect(self, X, threshold: float | None = None) -> np.ndarray:
        s_star = self.threshold if threshold is None else threshold
        return (self.score(X) > s_star).astype(np.int8)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatchError(f"forest expects {self.n_features} features, got {X.shape[1]}")
        return X

    def save(self, path: str | Path) -> None:
        arrays = {}
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "size", "depth"):
                arrays[f"tree{i}.{name}"] = getattr(t, name)
        meta = {
            "n_trees": len(self.trees),
            "sample_size": self.sample_size,
            "n_features": self.n_features,
            "threshold": self.threshold,
            "height_limits": [t.height_limit for t in self.trees],
        }
        serialize.save(path, "forest", meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "IsolationForest":
        meta, arrays = serialize.load(path, "forest")
        trees = []
        for i, h in enumerate(meta["height_limits"]):
            trees.append(IsolationTree(
                feature=arrays[f"tree{i}.feature"].astype(np.int64),
                threshold=arrays[f"tree{i}.threshold"],
                left=arrays[f"tree{i}.left"].astype(np.int64),
                right=arrays[f"tree{i}.right"].astype(np.int64),
                size=arrays[f"tree{i}.size"].astype(np.int64),
                depth=arrays[f"tree{i}.depth"],
                height_limit=int(h),
            ))
        return cls(trees, int(meta["sample_size"]), int(meta["n_features"]), float(meta["threshold"]))


def fit(points, n_trees: int = 100, sample_size: int = 256, seed: int = 0,
        threshold: float = 0.5) -> IsolationForest:
    """Grow ``n_trees`` isolation trees, each on ``min(sample_size, n)`` points drawn without replacement."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2:
        raise TooFewPointsError("need at least 2 points to fit an isolation forest")
    if n_trees < 1 or sample_size < 2:
        raise ValueError("need n_trees >= 1 and sample_size >= 2")
    if not 0.0 < threshold < 1.0:
        raise ValueError("score threshold must lie in (0, 1)")
    psi = min(sample_size, len(X))
    height_limit = math.ceil(math.log2(psi))
    trees = []
    for ss in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(ss)
        idx = rng.choice(len(X), size=psi, replace=False)
        trees.append(_grow(X[idx], height_limit, rng))
    return IsolationForest(trees, psi, X.shape[1], threshold)


def anomaly_score(model: IsolationForest, x) -> np.ndarray | float:
    s = model.score(x)
    return float(s[0]) if np.ndim(x) == 1 else s


def detect(model: IsolationForest, latent, threshold: float | None = None) -> np.ndarray:
    """Label 1 where the score of a latent row exceeds the threshold."""
    values = getattr(latent, "values", latent)
    return model.detect(values, threshold)
