"""Novelty-mode Local Outlier Factor with exact neighbor search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ..serialize import FORMAT_VERSION, check_version, decode_array, encode_array

METRICS = ("euclidean", "manhattan", "chebyshev", "minkowski")
MINKOWSKI_P = 3.0
# floor on mean reachability distance so duplicate-heavy neighborhoods stay finite
REACH_FLOOR = 1e-12
_CHUNK = 1024

_SCIPY_NAME = {"euclidean": "euclidean", "manhattan": "cityblock", "chebyshev": "chebyshev", "minkowski": "minkowski"}


def pairwise_distances(A: np.ndarray, B: np.ndarray, metric: str, p: float = MINKOWSKI_P) -> np.ndarray:
    if metric not in _SCIPY_NAME:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if metric == "minkowski":
        # scipy's generic minkowski path is ~30x slower than broadcasting here
        out = np.empty((len(A), len(B)))
        step = max(1, 2_000_000 // max(1, B.size))
        for s in range(0, len(A), step):
            diff = np.abs(A[s : s + step, None, :] - B[None, :, :])
            if p == 3.0:
                out[s : s + step] = np.cbrt(np.einsum("ijk,ijk,ijk->ij", diff, diff, diff))
            else:
                out[s : s + step] = np.sum(diff**p, axis=2) ** (1.0 / p)
        return out
    return cdist(A, B, _SCIPY_NAME[metric])


def _top_k_rows(D: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row, the k smallest entries ordered by (distance, column index)."""
    m = D.shape[1]
    if k >= m:
        idx = np.argsort(D, axis=1, kind="stable")[:, :k]
        return np.take_along_axis(D, idx, axis=1), idx
    part = np.argpartition(D, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(D, part, axis=1).max(axis=1)
    ties = np.count_nonzero(D <= kth[:, None], axis=1) > k
    # sort the k candidates by (distance, index)
    cand_d = np.take_along_axis(D, part, axis=1)
    order = np.lexsort((part, cand_d), axis=1)
    idx = np.take_along_axis(part, order, axis=1)
    for r in np.flatnonzero(ties):
        idx[r] = np.argsort(D[r], kind="stable")[:k]
    return np.take_along_axis(D, idx, axis=1), idx


def knn(
    queries: np.ndarray,
    refs: np.ndarray,
    k: int,
    metric: str = "euclidean",
    exclude_self: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest references of each query.

    With ``exclude_self`` the queries are the references themselves and each
    point's own index is skipped (duplicates elsewhere still count).
    """
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    n = len(queries)
    dist = np.empty((n, k))
    idx = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        D = pairwise_distances(queries[start:stop], refs, metric)
        if exclude_self:
            D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        dist[start:stop], idx[start:stop] = _top_k_rows(D, k)
    return dist, idx


@dataclass
class LofModel:
    """Reference set with cached k-distances and local reachability densities.

    Scores follow the usual convention: about 1 for inliers, larger for points
    in sparser regions than their neighbors.
    """

    references: np.ndarray
    n_neighbors: int
    metric: str
    k_distance: np.ndarray
    lrd: np.ndarray
    threshold: float = float("nan")
    params: dict = field(default_factory=dict)

    kind = "lof"

    def score_from_neighbors(self, dist: np.ndarray, idx: np.ndarray) -> np.ndarray:
        reach = np.maximum(self.k_distance[idx], dist)
        lrd_q = 1.0 / np.maximum(reach.mean(axis=1), REACH_FLOOR)
        return self.lrd[idx].mean(axis=1) / lrd_q

    def score(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        dist, idx = knn(X, self.references, self.n_neighbors, self.metric)
        return self.score_from_neighbors(dist, idx)

    def to_dict(self) -> dict:
        return {
            "kind": "lof",
            "version": FORMAT_VERSION,
            "n_neighbors": self.n_neighbors,
            "metric": self.metric,
            "minkowski_p": MINKOWSKI_P,
            "threshold": self.threshold,
            "params": self.params,
            "references": encode_array(self.references),
            "k_distance": encode_array(self.k_distance),
            "lrd": encode_array(self.lrd),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LofModel":
        check_version(obj, "lof")
        return cls(
            decode_array(obj["references"]),
            int(obj["n_neighbors"]),
            obj["metric"],
            decode_array(obj["k_distance"]),
            decode_array(obj["lrd"]),
            float(obj["threshold"]),
            dict(obj.get("params", {})),
        )


def _from_reference_neighbors(refs, n_neighbors, metric, dist, idx) -> LofModel:
    k_distance = dist[:, -1].copy()
    reach = np.maximum(k_distance[idx], dist)
    lrd = 1.0 / np.maximum(reach.mean(axis=1), REACH_FLOOR)
    return LofModel(refs, n_neighbors, metric, k_distance, lrd, params={"n_neighbors": n_neighbors, "metric": metric})


def fit_lof(references: np.ndarray, n_neighbors: int = 20, metric: str = "euclidean") -> LofModel:
    refs = np.asarray(references, dtype=np.float64)
    m = len(refs)
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    if not 1 <= n_neighbors < m:
        raise ValueError(f"n_neighbors must lie in [1, {m - 1}], got {n_neighbors}")
    dist, idx = knn(refs, refs, n_neighbors, metric, exclude_self=True)
    return _from_reference_neighbors(refs, n_neighbors, metric, dist, idx)


class NeighborCache:
    """Sorted neighbor lists up to ``max_k`` per metric, so hyperparameter
    trials that vary only ``n_neighbors``/``metric`` skip the distance work.

    Slicing the first k columns equals a direct k-NN query because both are
    ordered by (distance, index).
    """

    def __init__(self, references: np.ndarray, queries: np.ndarray, max_k: int) -> None:
        self.references = np.asarray(references, dtype=np.float64)
        self.queries = np.asarray(queries, dtype=np.float64)
        self.max_k = min(max_k, len(self.references) - 1)
        self._ref: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._query: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _lists(self, metric: str):
        if metric not in self._ref:
            self._ref[metric] = knn(self.references, self.references, self.max_k, metric, exclude_self=True)
            self._query[metric] = knn(self.queries, self.references, self.max_k, metric)
        return self._ref[metric], self._query[metric]

    def model(self, n_neighbors: int, metric: str) -> LofModel:
        if not 1 <= n_neighbors <= self.max_k:
            raise ValueError(f"n_neighbors must lie in [1, {self.max_k}], got {n_neighbors}")
        (rd, ri), _ = self._lists(metric)
        return _from_reference_neighbors(self.references, n_neighbors, metric, rd[:, :n_neighbors], ri[:, :n_neighbors])

    def query_scores(self, model: LofModel) -> np.ndarray:
        _, (qd, qi) = self._lists(model.metric)
        k = model.n_neighbors
        return model.score_from_neighbors(qd[:, :k], qi[:, :k])
