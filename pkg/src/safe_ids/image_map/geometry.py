"""Convex hull and minimum-area rectangle framing of embedded feature points."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class DegenerateHullError(ValueError):
    """Fewer than three points, or all points collinear."""


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Indices of hull vertices in counter-clockwise order (monotone chain).

    Points lying on a hull edge are not vertices and are left out. The walk
    starts at the lexicographically smallest (x, y) point.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected k x 2 points, got shape {pts.shape}")
    if len(pts) < 3:
        raise DegenerateHullError(f"need at least 3 points, got {len(pts)}")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    # drop exact duplicates, they cannot be distinct vertices
    uniq = [int(order[0])]
    for i in order[1:]:
        if not np.array_equal(pts[i], pts[uniq[-1]]):
            uniq.append(int(i))

    def half(seq):
        chain: list[int] = []
        for i in seq:
            while len(chain) >= 2 and _cross(pts[chain[-2]], pts[chain[-1]], pts[i]) <= 0:
                chain.pop()
            chain.append(i)
        return chain

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateHullError("points are collinear")
    return np.array(hull, dtype=np.int64)


def _rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def min_area_rectangle_angle(hull_pts: np.ndarray) -> float:
    """Angle that, when the points are rotated by its negative, makes the
    minimum-area enclosing rectangle axis-aligned.

    Candidate angles are the hull edge directions folded into [0, pi/2); the
    smallest area wins, ties going to the smaller angle.
    """
    edges = np.roll(hull_pts, -1, axis=0) - hull_pts
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2)
    angles[angles > np.pi / 2 - 1e-12] = 0.0
    angles = np.unique(angles)
    best_angle, best_area = 0.0, np.inf
    for theta in angles:
        rotated = hull_pts @ _rotation(-theta).T
        area = float(np.prod(rotated.max(axis=0) - rotated.min(axis=0)))
        if area < best_area * (1 - 1e-12):
            best_angle, best_area = float(theta), area
    return best_angle


@dataclass(frozen=True)
class Framing:
    """Continuous grid positions of each feature and their rounded cells.

    ``positions[:, 0]`` is the row coordinate and ``positions[:, 1]`` the
    column coordinate, both in [0, grid_size - 1].
    """

    positions: np.ndarray
    cells: np.ndarray
    angle: float
    used_bounding_box: bool


def frame_and_rasterize(coords: np.ndarray, grid_size: int) -> Framing:
    """Rotate onto the minimum-area rectangle of the hull, scale it onto the
    grid and round to the nearest cell (collisions are left in place)."""
    pts = np.asarray(coords, dtype=np.float64)
    k = len(pts)
    if grid_size < 2:
        raise ValueError(f"grid size must be >= 2, got {grid_size}")
    if grid_size * grid_size < k:
        raise ValueError(f"{k} features do not fit a {grid_size}x{grid_size} grid")

    fallback = False
    try:
        hull = convex_hull(pts)
        angle = min_area_rectangle_angle(pts[hull])
    except DegenerateHullError:
        logger.warning("degenerate hull; framing with the axis-aligned bounding box")
        fallback, angle = True, 0.0

    rotated = pts @ _rotation(-angle).T if angle else pts.copy()
    lo = rotated.min(axis=0)
    span = rotated.max(axis=0) - lo
    scale = np.where(span > 0, (grid_size - 1) / np.where(span > 0, span, 1.0), 0.0)
    scaled = (rotated - lo) * scale
    # column from the x axis, row from the y axis
    positions = scaled[:, ::-1].copy()
    cells = np.floor(positions + 0.5).astype(np.int64)
    np.clip(cells, 0, grid_size - 1, out=cells)
    return Framing(positions, cells, angle, fallback)
