"""Tabular-to-image mapping: t-SNE layout, hull framing, assignment."""

from .assignment import linear_sum_assignment
from .geometry import DegenerateHullError, Framing, convex_hull, frame_and_rasterize
from .layout import (
    LayoutFit,
    PixelLayout,
    fit_layout,
    inverse_transform,
    load_images,
    resolve_collisions,
    save_images,
    transform_batch,
    transform_sample,
)
from .tsne import FeatureEmbedding, tsne_embed

__all__ = [
    "DegenerateHullError",
    "FeatureEmbedding",
    "Framing",
    "LayoutFit",
    "PixelLayout",
    "convex_hull",
    "fit_layout",
    "frame_and_rasterize",
    "inverse_transform",
    "linear_sum_assignment",
    "load_images",
    "resolve_collisions",
    "save_images",
    "transform_batch",
    "transform_sample",
    "tsne_embed",
]
