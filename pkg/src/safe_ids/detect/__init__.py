"""Novelty detectors over latent (or raw) vectors."""

from .fitting import DETECTORS, default_space, fit_detector, load_detector, predict, save_detector
from .iforest import IsoForestModel, average_path_length, fit_iforest
from .lof import METRICS, LofModel, NeighborCache, fit_lof, knn
from .pca_recon import PcaReconModel, fit_pca_recon
from .threshold import classify, tune_threshold
from .tpe import CategoricalParam, FloatParam, IntParam, SearchResult, SearchSpace, hyperparam_search

__all__ = [
    "DETECTORS",
    "METRICS",
    "CategoricalParam",
    "FloatParam",
    "IntParam",
    "IsoForestModel",
    "LofModel",
    "NeighborCache",
    "PcaReconModel",
    "SearchResult",
    "SearchSpace",
    "average_path_length",
    "classify",
    "default_space",
    "fit_detector",
    "fit_iforest",
    "fit_lof",
    "fit_pca_recon",
    "hyperparam_search",
    "knn",
    "load_detector",
    "predict",
    "save_detector",
    "tune_threshold",
]
