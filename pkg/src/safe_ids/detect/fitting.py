"""Hyperparameter search and threshold tuning for each detector kind."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..serialize import dump_json, load_json
from .iforest import IsoForestModel, fit_iforest
from .lof import METRICS, LofModel, NeighborCache
from .pca_recon import PcaReconModel, fit_pca_recon
from .threshold import classify, tune_threshold
from .tpe import CategoricalParam, FloatParam, IntParam, SearchResult, SearchSpace, hyperparam_search

logger = logging.getLogger(__name__)

DETECTORS = ("lof", "iforest", "pca")
Detector = LofModel | IsoForestModel | PcaReconModel


def default_space(kind: str, n_train: int, dim: int, budget: int = 40, seed: int = 0) -> SearchSpace:
    if kind == "lof":
        params = {
            "n_neighbors": IntParam(5, min(50, n_train - 1)),
            "metric": CategoricalParam(METRICS),
        }
    elif kind == "iforest":
        params = {
            "n_estimators": IntParam(50, 300),
            "subsample_size": IntParam(64, 1024),
            "max_features": FloatParam(0.5, 1.0),
        }
    elif kind == "pca":
        params = {
            "n_components": IntParam(1, max(1, min(50, dim - 1))),
            "percentile": FloatParam(90.0, 99.9),
        }
    else:
        raise ValueError(f"unknown detector {kind!r}; choose from {DETECTORS}")
    return SearchSpace(params, budget, seed)


def _lof_search(train, val, val_labels, space: SearchSpace):
    max_k = space.params["n_neighbors"].high
    cache = NeighborCache(train, val, max_k)

    def build(params):
        model = cache.model(int(params["n_neighbors"]), params["metric"])
        model.threshold, f1 = tune_threshold(cache.query_scores(model), val_labels)
        return model, f1

    result = hyperparam_search(space, lambda p: build(p)[1])
    model, _ = build(result.best_params)
    return model, result


def _iforest_search(train, val, val_labels, space: SearchSpace, seed: int):
    def build(params):
        model = fit_iforest(
            train,
            n_estimators=int(params["n_estimators"]),
            subsample_size=int(params["subsample_size"]),
            max_features=float(params["max_features"]),
            seed=seed,
        )
        model.threshold, f1 = tune_threshold(model.score(val), val_labels)
        return model, f1

    result = hyperparam_search(space, lambda p: build(p)[1])
    model, _ = build(result.best_params)
    return model, result


def _pca_search(train, val, val_labels, space: SearchSpace):
    def build(params):
        model = fit_pca_recon(train, int(params["n_components"]), float(params["percentile"]))
        preds = classify(model.score(val), model.threshold)
        tp = int(np.sum((preds == 1) & (val_labels == 1)))
        denom = int(preds.sum() + val_labels.sum())
        return model, (2.0 * tp / denom if denom else 0.0)

    result = hyperparam_search(space, lambda p: build(p)[1])
    model, _ = build(result.best_params)
    return model, result


def fit_detector(
    kind: str,
    train_latents: np.ndarray,
    val_latents: np.ndarray,
    val_labels: np.ndarray,
    budget: int = 40,
    seed: int = 0,
    space: SearchSpace | None = None,
) -> tuple[Detector, SearchResult]:
    """Search hyperparameters by validation F1 and return the refitted best.

    LOF and isolation-forest thresholds maximize validation F1; the PCA
    baseline thresholds at a percentile of its training errors, with the
    percentile itself searched.

    Args:
        kind: One of ``lof``, ``iforest``, ``pca``.
        train_latents: Normal training vectors only.
        val_latents, val_labels: Validation vectors with 0/1 labels.
    """
    train = np.asarray(train_latents, dtype=np.float64)
    val = np.asarray(val_latents, dtype=np.float64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if space is None:
        space = default_space(kind, len(train), train.shape[1], budget, seed)
    if kind == "lof":
        model, result = _lof_search(train, val, val_labels, space)
    elif kind == "iforest":
        model, result = _iforest_search(train, val, val_labels, space, seed)
    elif kind == "pca":
        model, result = _pca_search(train, val, val_labels, space)
    else:
        raise ValueError(f"unknown detector {kind!r}; choose from {DETECTORS}")
    logger.info("%s best params %s, validation F1 %.4f", kind, result.best_params, result.best_score)
    return model, result


def score(detector: Detector, X: np.ndarray) -> np.ndarray:
    return detector.score(X)


def predict(detector: Detector, X: np.ndarray) -> np.ndarray:
    return classify(detector.score(X), detector.threshold)


_LOADERS = {"lof": LofModel, "iforest": IsoForestModel, "pca": PcaReconModel}


def save_detector(detector: Detector, path: str | Path) -> None:
    dump_json(detector.to_dict(), path)


def detector_from_dict(obj: dict) -> Detector:
    kind = obj.get("kind")
    if kind not in _LOADERS:
        raise ValueError(f"unknown detector kind {kind!r}")
    return _LOADERS[kind].from_dict(obj)


def load_detector(path: str | Path) -> Detector:
    return detector_from_dict(load_json(path))
