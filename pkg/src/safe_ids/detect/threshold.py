"""Decision thresholds and binary classification from anomaly scores."""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)


def f1_at_thresholds(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """F1 of the rule ``score > t`` for every t, attack = positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.sort(scores)
    pos_sorted = np.sort(scores[labels == 1])
    n_pos = len(pos_sorted)
    predicted = len(order) - np.searchsorted(order, thresholds, side="right")
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="right")
    denom = predicted + n_pos
    return np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)


def tune_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Threshold maximizing validation F1 over midpoints of consecutive
    distinct scores; ties go to the lowest threshold (favoring recall).

    Returns:
        (threshold, f1 at that threshold)
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValueError("validation labels must contain both classes")
    uniq = np.unique(scores)
    if len(uniq) < 2:
        logger.warning("all validation scores equal; flagging everything as attack")
        thr = float(uniq[0]) - 1.0
        return thr, float(f1_at_thresholds(scores, labels, np.array([thr]))[0])
    candidates = (uniq[:-1] + uniq[1:]) / 2.0
    f1 = f1_at_thresholds(scores, labels, candidates)
    best = int(np.argmax(f1))
    return float(candidates[best]), float(f1[best])


def classify(scores: np.ndarray, threshold: float) -> np.ndarray:
    """1 (attack) where the score strictly exceeds the threshold."""
    return (np.asarray(scores) > threshold).astype(np.int64)
