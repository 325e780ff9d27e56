"""Feature ranking by summed absolute PCA loadings."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError
from .serialize import FORMAT_VERSION, check_version, decode_array, dump_json, encode_array, load_json

# comparisons against a cumulative EVR target tolerate this much round-off
EVR_SLACK = 1e-12


@dataclass(frozen=True)
class PcaModel:
    """Principal axes of a data matrix.

    Attributes:
        mean: Column means, shape (d,).
        components: Unit loading vectors as rows, shape (d, d), ordered by
            descending eigenvalue.
        eigenvalues: Covariance eigenvalues (clipped at 0), shape (d,).
        explained_variance_ratio: ``eigenvalues / eigenvalues.sum()``.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray

    def covariance(self) -> np.ndarray:
        return (self.components.T * self.eigenvalues) @ self.components

    def to_dict(self) -> dict:
        return {
            "kind": "pca",
            "version": FORMAT_VERSION,
            "mean": encode_array(self.mean),
            "components": encode_array(self.components),
            "eigenvalues": encode_array(self.eigenvalues),
            "explained_variance_ratio": encode_array(self.explained_variance_ratio),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PcaModel":
        check_version(obj, "pca")
        return cls(*(decode_array(obj[k]) for k in ("mean", "components", "eigenvalues", "explained_variance_ratio")))


@dataclass(frozen=True)
class FeatureRanking:
    scores: np.ndarray
    order: np.ndarray
    n_components: int


@dataclass(frozen=True)
class FeatureSubset:
    indices: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.indices)


def fit_pca(features: np.ndarray) -> PcaModel:
    """Eigendecomposition of the sample covariance of ``features``.

    Each component's entry of largest magnitude is made non-negative so that
    the fitted model is reproducible.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise DataError(f"PCA needs an n x d matrix with n >= 2, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("PCA input contains non-finite values")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    comps = evecs[:, ::-1].T.copy()
    total = evals.sum()
    if not total > 0:
        raise NumericalError("PCA input has zero variance (all rows identical)")
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.where(comps[np.arange(len(comps)), pivot] < 0, -1.0, 1.0)
    comps *= signs[:, None]
    return PcaModel(mean, comps, evals, evals / total)


def choose_num_components(evr: np.ndarray, target: float = 0.95) -> int:
    """Smallest number of leading components whose EVR sums to ``target``."""
    if not 0.0 < target <= 1.0:
        raise ValueError(f"target must lie in (0, 1], got {target}")
    cum = np.cumsum(np.asarray(evr, dtype=np.float64))
    hits = np.flatnonzero(cum >= target - EVR_SLACK)
    # round-off can leave the full sum a hair under 1.0; fall back to all
    return int(hits[0]) + 1 if hits.size else len(cum)


def rank_features(pca: PcaModel, n_components: int) -> FeatureRanking:
    """Score each feature by the sum of its absolute loadings over the leading
    ``n_components`` axes. Ties rank the lower feature index first."""
    if not 1 <= n_components <= pca.components.shape[0]:
        raise ValueError(f"n_components must lie in [1, {pca.components.shape[0]}], got {n_components}")
    scores = np.abs(pca.components[:n_components]).sum(axis=0)
    idx = np.arange(scores.size)
    order = np.lexsort((idx, -scores))
    return FeatureRanking(scores, order, n_components)


def select_top_k(ranking: FeatureRanking, k: int) -> FeatureSubset:
    d = ranking.scores.size
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    return FeatureSubset(tuple(int(i) for i in ranking.order[:k]))


def save_ranking(ranking: FeatureRanking, column_names: Sequence[str], path: str | Path, k: int | None = None) -> None:
    """Ranking report: one entry per feature with its score and 1-based rank."""
    rows = [
        {"name": column_names[i], "index": int(i), "score": float(ranking.scores[i]), "rank": r + 1}
        for r, i in enumerate(ranking.order)
    ]
    dump_json(
        {
            "kind": "ranking",
            "version": FORMAT_VERSION,
            "n_components": ranking.n_components,
            "k": k,
            "features": rows,
        },
        path,
    )


def load_ranking(path: str | Path) -> tuple[FeatureRanking, list[str], int | None]:
    obj = load_json(path)
    check_version(obj, "ranking")
    rows = obj["features"]
    d = len(rows)
    scores = np.zeros(d)
    names = [""] * d
    for row in rows:
        scores[row["index"]] = row["score"]
        names[row["index"]] = row["name"]
    order = np.array([row["index"] for row in sorted(rows, key=lambda r: r["rank"])], dtype=np.int64)
    return FeatureRanking(scores, order, obj["n_components"]), names, obj["k"]
