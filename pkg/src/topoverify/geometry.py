"""Axis-aligned patch rectangles and the overlap predicate shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Two rectangles overlap when their intersection spans more than this fraction
# of the narrower extent on both axes. Rectangles that merely touch, or that
# graze each other by a few pixels of bounding-box margin, do not overlap.
MIN_OVERLAP = 0.1

# Points this close to an edge count as inside. Lattice patches put the seed
# keypoint exactly on their edges, and without slack rounding would decide
# membership differently once coordinates are shifted.
EDGE_TOL = 1e-6


@dataclass(frozen=True)
class Patch:
    """Axis-aligned rectangle given by its center and half extents (pixels)."""

    cx: float
    cy: float
    half_w: float
    half_h: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValueError(f"patch center must be finite, got ({self.cx}, {self.cy})")
        if not (self.half_w > 0 and self.half_h > 0):
            raise ValueError(
                f"patch half extents must be positive, got ({self.half_w}, {self.half_h})"
            )

    @classmethod
    def from_bounds(cls, x0: float, y0: float, x1: float, y1: float) -> Patch:
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, (x1 - x0) / 2.0, (y1 - y0) / 2.0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        return (
            self.cx - self.half_w,
            self.cy - self.half_h,
            self.cx + self.half_w,
            self.cy + self.half_h,
        )

    @property
    def area(self) -> float:
        return 4.0 * self.half_w * self.half_h

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Boolean mask of the (N, 2) points inside the closed rectangle, edges padded by `EDGE_TOL`."""
        x0, y0, x1, y1 = self.bounds
        x, y = xy[:, 0], xy[:, 1]
        return (x >= x0 - EDGE_TOL) & (x <= x1 + EDGE_TOL) & (y >= y0 - EDGE_TOL) & (y <= y1 + EDGE_TOL)

    def translated(self, dx: float, dy: float) -> Patch:
        return Patch(self.cx + dx, self.cy + dy, self.half_w, self.half_h)


def overlaps(a: Patch, b: Patch) -> bool:
    return bool(overlaps_many(a, _as_array([b]))[0])


def overlaps_many(a: Patch, others: np.ndarray) -> np.ndarray:
    """Vectorised `overlaps` of `a` against an (N, 4) array of (cx, cy, half_w, half_h)."""
    if len(others) == 0:
        return np.zeros(0, dtype=bool)
    ix = np.minimum(a.cx + a.half_w, others[:, 0] + others[:, 2]) - np.maximum(
        a.cx - a.half_w, others[:, 0] - others[:, 2]
    )
    iy = np.minimum(a.cy + a.half_h, others[:, 1] + others[:, 3]) - np.maximum(
        a.cy - a.half_h, others[:, 1] - others[:, 3]
    )
    min_w = 2.0 * np.minimum(a.half_w, others[:, 2])
    min_h = 2.0 * np.minimum(a.half_h, others[:, 3])
    return (ix > MIN_OVERLAP * min_w) & (iy > MIN_OVERLAP * min_h)


def _as_array(patches) -> np.ndarray:
    return np.array([(p.cx, p.cy, p.half_w, p.half_h) for p in patches], dtype=float).reshape(-1, 4)


def patches_array(patches) -> np.ndarray:
    return _as_array(patches)


def union_area(patches) -> float:
    """Exact area covered by the union of axis-aligned rectangles.

    Coordinate compression: the distinct x and y edges split the plane into
    cells, each either fully covered or not.
    """
    rects = [p.bounds for p in patches]
    if not rects:
        return 0.0
    r = np.asarray(rects, dtype=float)
    xs = np.unique(np.concatenate([r[:, 0], r[:, 2]]))
    ys = np.unique(np.concatenate([r[:, 1], r[:, 3]]))
    covered = np.zeros((len(xs) - 1, len(ys) - 1), dtype=bool)
    for x0, y0, x1, y1 in r:
        i0, i1 = np.searchsorted(xs, [x0, x1])
        j0, j1 = np.searchsorted(ys, [y0, y1])
        covered[i0:i1, j0:j1] = True
    cell = np.outer(np.diff(xs), np.diff(ys))
    return float(cell[covered].sum())


def bounding_patch(xy: np.ndarray, margin: float = 0.05, min_half: float = 0.5) -> Patch:
    """Bounding rectangle of points, half extents grown by `margin` and floored at `min_half`."""
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    c = (lo + hi) / 2.0
    half = np.maximum((hi - lo) / 2.0 * (1.0 + margin), min_half)
    return Patch(float(c[0]), float(c[1]), float(half[0]), float(half[1]))
