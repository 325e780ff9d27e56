"""Isolation forest baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..serialize import FORMAT_VERSION, check_version, decode_array, encode_array

EULER_GAMMA = 0.5772156649015329


def average_path_length(n) -> np.ndarray:
    """Expected path length of an unsuccessful BST search among n points.

    c(n) = 2 H(n-1) - 2 (n-1)/n for n > 2, c(2) = 1, c(n) = 0 for n <= 1.
    """
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    nb = n[big]
    out[big] = 2.0 * (np.log(nb - 1.0) + EULER_GAMMA) - 2.0 * (nb - 1.0) / nb
    return out


@dataclass
class IsolationTree:
    """Flat node arrays; leaves have ``feature == -1`` and record ``size``."""

    feature: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        depth = np.zeros(len(X))
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] < self.split[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            depth[rows] += 1.0
            active[rows] = self.feature[node[rows]] >= 0
        return depth + average_path_length(self.size[node])


def _grow(X: np.ndarray, features: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    feat, split, left, right, size = [], [], [], [], []

    def new_node() -> int:
        for arr, val in ((feat, -1), (split, 0.0), (left, -1), (right, -1), (size, 0)):
            arr.append(val)
        return len(feat) - 1

    stack = [(new_node(), np.arange(len(X)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        size[node] = len(rows)
        if depth >= height_limit or len(rows) <= 1:
            continue
        sub = X[np.ix_(rows, features)]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            continue
        j = splittable[rng.integers(splittable.size)]
        value = rng.uniform(lo[j], hi[j])
        goes_left = sub[:, j] < value
        feat[node] = int(features[j])
        split[node] = float(value)
        l, r = new_node(), new_node()
        left[node], right[node] = l, r
        stack.append((r, rows[~goes_left], depth + 1))
        stack.append((l, rows[goes_left], depth + 1))
    return IsolationTree(
        np.array(feat, dtype=np.int64),
        np.array(split, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
    )


@dataclass
class IsoForestModel:
    trees: list[IsolationTree]
    subsample_size: int
    n_estimators: int
    threshold: float = float("nan")
    params: dict = field(default_factory=dict)

    kind = "iforest"

    def mean_path_length(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.path_lengths(X)
        return total / len(self.trees)

    def score(self, X: np.ndarray) -> np.ndarray:
        """Anomaly score 2^(-E[h(x)] / c(psi)) in (0, 1]; higher is more anomalous.

        With psi = 1 the normalizer c(1) is 0; every point then scores 0.5.
        """
        norm = float(average_path_length(self.subsample_size))
        h = self.mean_path_length(X)
        if norm == 0.0:
            return np.full(len(h), 0.5)
        return np.power(2.0, -h / norm)

    def to_dict(self) -> dict:
        return {
            "kind": "iforest",
            "version": FORMAT_VERSION,
            "subsample_size": self.subsample_size,
            "n_estimators": self.n_estimators,
            "threshold": self.threshold,
            "params": self.params,
            "trees": [
                {k: encode_array(getattr(t, k)) for k in ("feature", "split", "left", "right", "size")}
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "IsoForestModel":
        check_version(obj, "iforest")
        trees = [IsolationTree(**{k: decode_array(v) for k, v in t.items()}) for t in obj["trees"]]
        return cls(trees, int(obj["subsample_size"]), int(obj["n_estimators"]), float(obj["threshold"]), dict(obj.get("params", {})))


def fit_iforest(
    X: np.ndarray,
    n_estimators: int = 100,
    subsample_size: int = 256,
    max_features: float = 1.0,
    seed: int = 0,
) -> IsoForestModel:
    """Grow ``n_estimators`` trees, each on a subsample drawn without
    replacement and restricted to ``ceil(max_features * d)`` random features."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 1:
        raise ValueError("isolation forest needs at least one row")
    psi = int(min(subsample_size, n))
    n_feat = max(1, int(math.ceil(max_features * d)))
    height_limit = int(math.ceil(math.log2(psi))) if psi > 1 else 0
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_estimators):
        rows = rng.choice(n, size=psi, replace=False)
        feats = np.sort(rng.choice(d, size=n_feat, replace=False))
        trees.append(_grow(X[rows], feats, height_limit, rng))
    params = {"n_estimators": n_estimators, "subsample_size": psi, "max_features": max_features, "seed": seed}
    return IsoForestModel(trees, psi, n_estimators, params=params)
