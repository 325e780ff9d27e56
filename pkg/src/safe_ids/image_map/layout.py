"""Feature-to-pixel layout fitting and the flow-vector to image transform."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError
from ..serialize import FORMAT_VERSION, check_version, dump_json, load_json
from .assignment import linear_sum_assignment
from .geometry import Framing, frame_and_rasterize
from .tsne import FeatureEmbedding, default_perplexity, tsne_embed

logger = logging.getLogger(__name__)

MAX_TSNE_SAMPLES = 5000


@dataclass(frozen=True)
class PixelLayout:
    """Injective map from selected feature i to grid cell ``cells[i] = (row, col)``."""

    grid_size: int
    cells: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        if np.any(cells < 0) or np.any(cells >= self.grid_size):
            raise ValueError("layout cell outside the grid")
        flat = cells[:, 0] * self.grid_size + cells[:, 1]
        if len(np.unique(flat)) != len(flat):
            raise ValueError("layout is not injective")
        object.__setattr__(self, "cells", cells)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"f{i}" for i in range(len(cells))))

    @property
    def k(self) -> int:
        return len(self.cells)

    @property
    def flat_cells(self) -> np.ndarray:
        return self.cells[:, 0] * self.grid_size + self.cells[:, 1]

    def occupied_mask(self) -> np.ndarray:
        mask = np.zeros((self.grid_size, self.grid_size), dtype=bool)
        mask[self.cells[:, 0], self.cells[:, 1]] = True
        return mask

    def to_dict(self, scaler: dict | None = None) -> dict:
        return {
            "kind": "layout",
            "version": FORMAT_VERSION,
            "grid_size": self.grid_size,
            "features": [
                {"name": n, "row": int(r), "col": int(c)}
                for n, (r, c) in zip(self.feature_names, self.cells)
            ],
            "scaler": scaler,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PixelLayout":
        check_version(obj, "layout")
        feats = obj["features"]
        cells = np.array([[f["row"], f["col"]] for f in feats], dtype=np.int64)
        return cls(obj["grid_size"], cells, tuple(f["name"] for f in feats))

    def save(self, path: str | Path, scaler: dict | None = None) -> None:
        """Write the layout; ``scaler`` carries the per-feature (min, max) used
        to normalize inputs before :func:`transform_sample`."""
        dump_json(self.to_dict(scaler), path)

    @classmethod
    def load(cls, path: str | Path) -> "PixelLayout":
        return cls.from_dict(load_json(path))


def resolve_collisions(framing: Framing, grid_size: int) -> PixelLayout:
    """Assign features to distinct cells minimizing total squared distance
    between each feature's continuous position and its cell center."""
    pos = framing.positions
    k = len(pos)
    if grid_size * grid_size < k:
        raise ValueError(f"{k} features do not fit a {grid_size}x{grid_size} grid")
    rr, cc = np.divmod(np.arange(grid_size * grid_size), grid_size)
    centers = np.column_stack([rr, cc]).astype(np.float64)
    cost = ((pos[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    _, cols = linear_sum_assignment(cost)
    cells = centers[cols].astype(np.int64)
    moved = int(np.sum(np.any(cells != framing.cells, axis=1)))
    if moved:
        logger.info("assignment moved %d of %d features off their rounded cell", moved, k)
    return PixelLayout(grid_size, cells)


@dataclass(frozen=True)
class LayoutFit:
    layout: PixelLayout
    embedding: FeatureEmbedding
    framing: Framing


def fit_layout(
    train_normal_features: np.ndarray,
    grid_size: int = 8,
    perplexity: float | None = None,
    iters: int = 1000,
    seed: int = 0,
    feature_names: Sequence[str] = (),
    max_samples: int = MAX_TSNE_SAMPLES,
) -> LayoutFit:
    """Fit a layout from normalized normal-train rows (n x k).

    Each feature's column, subsampled to at most ``max_samples`` rows, is one
    t-SNE point.
    """
    X = np.asarray(train_normal_features, dtype=np.float64)
    n, k = X.shape
    if grid_size * grid_size < k:
        raise ValueError(f"{k} features do not fit a {grid_size}x{grid_size} grid")
    rng = np.random.default_rng(seed)
    if n > max_samples:
        rows = np.sort(rng.choice(n, size=max_samples, replace=False))
        X = X[rows]
    if perplexity is None:
        perplexity = default_perplexity(k)
    embedding = tsne_embed(X.T, perplexity=perplexity, iters=iters, seed=seed)
    framing = frame_and_rasterize(embedding.coords, grid_size)
    layout = resolve_collisions(framing, grid_size)
    if feature_names:
        layout = PixelLayout(grid_size, layout.cells, tuple(feature_names))
    return LayoutFit(layout, embedding, framing)


def _quantize(x: np.ndarray) -> np.ndarray:
    # round half up, matching 0.5 -> 128
    return np.floor(255.0 * np.clip(x, 0.0, 1.0) + 0.5).astype(np.uint8)


def transform_sample(x: np.ndarray, layout: PixelLayout) -> np.ndarray:
    """Place a normalized length-k vector on the grid as 0-255 intensities."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layout.k,):
        raise DataError(f"expected a vector of length {layout.k}, got shape {x.shape}")
    img = np.zeros((layout.grid_size, layout.grid_size), dtype=np.uint8)
    img[layout.cells[:, 0], layout.cells[:, 1]] = _quantize(x)
    return img


def transform_batch(X: np.ndarray, layout: PixelLayout) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != layout.k:
        raise DataError(f"expected an n x {layout.k} matrix, got shape {X.shape}")
    out = np.zeros((len(X), layout.grid_size * layout.grid_size), dtype=np.uint8)
    out[:, layout.flat_cells] = _quantize(X)
    return out.reshape(len(X), layout.grid_size, layout.grid_size)


def inverse_transform(images: np.ndarray, layout: PixelLayout) -> np.ndarray:
    """Recover normalized feature values (to within 1/510) from images."""
    images = np.asarray(images)
    return images[..., layout.cells[:, 0], layout.cells[:, 1]].astype(np.float64) / 255.0


def save_images(path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Image dataset container: uint8 n x d' x d' grids plus int labels."""
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(images, dtype=np.uint8), allow_pickle=False)
        np.save(fh, np.asarray(labels, dtype=np.int64), allow_pickle=False)


def load_images(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        images = np.load(fh, allow_pickle=False)
        labels = np.load(fh, allow_pickle=False)
    return images, labels
