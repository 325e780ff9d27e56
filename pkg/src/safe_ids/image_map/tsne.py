"""Exact t-SNE for small point sets (one point per selected feature)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureEmbedding:
    """2-D coordinates, one row per feature, plus the KL trace of the run."""

    coords: np.ndarray
    kl_history: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _sq_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_entropy(d_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    # shift by the smallest distance so exp() cannot underflow to all-zero
    shifted = d_row - d_row.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    p /= total
    H = np.log(total) + beta * np.sum(shifted * p)
    return float(H), p


def conditional_affinities(
    X: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50
) -> np.ndarray:
    """Row-stochastic Gaussian affinities with per-row precision found by
    bisection so that each row's entropy equals ``log(perplexity)``."""
    n = X.shape[0]
    D = _sq_distances(X)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        d_row = D[i, others]
        beta, lo, hi = 1.0, -np.inf, np.inf
        H, p = _row_entropy(d_row, beta)
        for _ in range(max_steps):
            diff = H - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
            H, p = _row_entropy(d_row, beta)
        P[i, others] = p
    return P


def joint_affinities(X: np.ndarray, perplexity: float) -> np.ndarray:
    P = conditional_affinities(X, perplexity)
    P = (P + P.T) / (2.0 * X.shape[0])
    return np.maximum(P, 1e-12)


def _student_t(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    return num, Q


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = ~np.eye(P.shape[0], dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def default_perplexity(k: int) -> float:
    return float(min(30, max(1, (k - 1) // 3)))


def auto_learning_rate(k: int, exaggeration: float = 12.0) -> float:
    return k / (4.0 * exaggeration)


def tsne_embed(
    feature_vectors: np.ndarray,
    perplexity: float | None = None,
    iters: int = 1000,
    seed: int = 0,
    learning_rate: float | None = None,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    momentum: tuple[float, float] = (0.5, 0.8),
    min_gain: float = 0.01,
) -> FeatureEmbedding:
    """Embed each row of ``feature_vectors`` (one feature across n samples) in 2-D.

    Plain exact t-SNE: Gaussian input affinities calibrated to ``perplexity``,
    Student-t output kernel, momentum gradient descent with per-coordinate
    gains, and early exaggeration for the first ``exaggeration_iters`` steps.
    The returned ``kl_history`` holds the un-exaggerated KL after every step.

    ``learning_rate=None`` uses ``k / (4 * exaggeration)``. The usual constant
    of 200 is tuned for thousands of points; with k <= 64 the exaggerated
    attraction overshoots by orders of magnitude and duplicate features never
    settle together.
    """
    X = np.asarray(feature_vectors, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected a k x n matrix, got shape {X.shape}")
    k = X.shape[0]
    if k < 4 or X.shape[1] < 2:
        raise DataError(f"t-SNE needs k >= 4 points of dimension >= 2, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("t-SNE input contains non-finite values")
    if perplexity is None:
        perplexity = default_perplexity(k)
    if not 0 < perplexity < k:
        raise DataError(f"perplexity must lie in (0, {k}), got {perplexity}")

    if learning_rate is None:
        learning_rate = auto_learning_rate(k, exaggeration)
    rng = np.random.default_rng(seed)
    P = joint_affinities(X, perplexity)
    Y = rng.normal(0.0, 1e-4, size=(k, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = np.empty(iters)

    for it in range(iters):
        exaggerate = it < exaggeration_iters
        P_eff = P * exaggeration if exaggerate else P
        num, Q = _student_t(Y)
        W = (P_eff - Q) * num
        grad = 4.0 * (np.sum(W, axis=1)[:, None] * Y - W @ Y)

        mom = momentum[0] if it < exaggeration_iters else momentum[1]
        same_sign = (grad > 0) == (update > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, min_gain, out=gains)
        update = mom * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)

        _, Q_new = _student_t(Y)
        history[it] = kl_divergence(P, Q_new)

    if not np.all(np.isfinite(Y)):
        raise DataError("t-SNE diverged (non-finite coordinates)")
    logger.debug("t-SNE final KL %.6f after %d iterations", history[-1] if iters else np.nan, iters)
    return FeatureEmbedding(Y, history)
